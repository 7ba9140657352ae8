#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "betamixer/metrics.hpp"

// Hand-built 20-frame evaluation fixtures and a brute-force reference that
// shares no code with full_report.
namespace bmx::testing {

struct OracleFixture {
  std::string name;
  VideoEvaluation video;
};

struct OracleType {
  double f1 = 0, precision = 0, recall = 0, weighted_f1 = 0, mse = 0;
  std::optional<double> ppv, npv, cdt;
  std::int64_t cdt_events = 0, cdt_misses = 0;
};

struct OracleReport {
  std::array<OracleType, 3> types;
  double f1 = 0, weighted_f1 = 0, mse = 0;
  std::optional<double> ppv, npv, cdt;
};

inline int oracle_grade(double presence, double severity) {
  if (presence < 0.5) return 0;
  if (severity >= 0.8) return 5;
  if (severity >= 0.6) return 4;
  if (severity >= 0.4) return 3;
  if (severity >= 0.2) return 2;
  return 1;
}

inline double oracle_mu(int grade) {
  static const double table[] = {0.05, 0.1, 0.3, 0.5, 0.7, 0.9};
  return table[grade];
}

inline double safe_div(double a, double b) { return b == 0 ? 0.0 : a / b; }

inline double f1_of(double tp, double fp, double fn) {
  const double p = safe_div(tp, tp + fp), r = safe_div(tp, tp + fn);
  return p + r == 0 ? 0.0 : 2 * p * r / (p + r);
}

inline std::optional<double> average(const std::vector<double>& xs) {
  if (xs.empty()) return std::nullopt;
  double s = 0;
  for (double x : xs) s += x;
  return s / static_cast<double>(xs.size());
}

inline OracleReport brute_force(const VideoEvaluation& v) {
  static const double weights[] = {0.02, 0.06, 0.12, 0.19, 0.26, 0.33};
  OracleReport out;
  std::vector<double> f1s, wf1s, mses, ppvs, npvs, cdts;
  const std::size_t n = v.truth.size();
  for (std::size_t t = 0; t < 3; ++t) {
    std::vector<int> y(n), p(n);
    std::vector<double> s(n);
    for (std::size_t i = 0; i < n; ++i) {
      y[i] = v.truth[i][t].grade.value();
      s[i] = v.predictions[i].severity[t];
      p[i] = oracle_grade(v.predictions[i].presence[t], s[i]);
    }
    OracleType& o = out.types[t];
    double tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < n; ++i) {
      tp += y[i] > 0 && p[i] > 0;
      fp += y[i] == 0 && p[i] > 0;
      fn += y[i] > 0 && p[i] == 0;
    }
    o.precision = safe_div(tp, tp + fp);
    o.recall = safe_div(tp, tp + fn);
    o.f1 = f1_of(tp, fp, fn);
    for (int g = 0; g <= 5; ++g) {
      double gtp = 0, gfp = 0, gfn = 0;
      for (std::size_t i = 0; i < n; ++i) {
        gtp += y[i] == g && p[i] == g;
        gfp += y[i] != g && p[i] == g;
        gfn += y[i] == g && p[i] != g;
      }
      o.weighted_f1 += weights[g] * f1_of(gtp, gfp, gfn);
    }
    for (std::size_t i = 0; i < n; ++i) o.mse += (s[i] - oracle_mu(y[i])) * (s[i] - oracle_mu(y[i]));
    o.mse /= static_cast<double>(n);

    double severe_calls = 0, severe_right = 0, mild_calls = 0, mild_right = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (p[i] >= 3) {
        ++severe_calls;
        severe_right += y[i] >= 3;
      }
      if (p[i] <= 1) {
        ++mild_calls;
        mild_right += y[i] <= 1;
      }
    }
    if (severe_calls > 0) o.ppv = severe_right / severe_calls;
    if (mild_calls > 0) o.npv = mild_right / mild_calls;

    std::vector<double> delays;
    for (std::size_t i = 0; i < n; ++i) {
      if (y[i] == 0 || (i > 0 && y[i - 1] > 0)) continue;
      ++o.cdt_events;
      std::size_t next = i + 1;
      while (next < n && !(y[next] > 0 && y[next - 1] == 0)) ++next;
      std::optional<std::size_t> hit;
      for (std::size_t j = i; j < next && !hit; ++j)
        if (p[j] > 0) hit = j;
      if (hit)
        delays.push_back(static_cast<double>(*hit - i));
      else
        ++o.cdt_misses;
    }
    o.cdt = average(delays);

    f1s.push_back(o.f1);
    wf1s.push_back(o.weighted_f1);
    mses.push_back(o.mse);
    if (o.ppv) ppvs.push_back(*o.ppv);
    if (o.npv) npvs.push_back(*o.npv);
    if (o.cdt) cdts.push_back(*o.cdt);
  }
  out.f1 = *average(f1s);
  out.weighted_f1 = *average(wf1s);
  out.mse = *average(mses);
  out.ppv = average(ppvs);
  out.npv = average(npvs);
  out.cdt = average(cdts);
  return out;
}

/// Builds a video from per-type truth grades and (presence, severity) predictions.
inline VideoEvaluation make_video(const std::string& id, const std::array<std::array<int, 20>, 3>& truth,
                                  const std::array<std::array<double, 20>, 3>& presence,
                                  const std::array<std::array<double, 20>, 3>& severity) {
  VideoEvaluation v;
  v.video_id = id;
  for (std::size_t i = 0; i < 20; ++i) {
    FrameLabels l{};
    PredictionRecord r;
    r.video_id = id;
    r.frame_index = static_cast<std::int64_t>(i);
    for (std::size_t t = 0; t < 3; ++t) {
      const int g = truth[t][i];
      l[t] = {g > 0, SeverityGrade(g)};
      r.presence[t] = presence[t][i];
      r.severity[t] = severity[t][i];
    }
    v.truth.push_back(l);
    v.predictions.push_back(r);
  }
  return v;
}

inline std::vector<OracleFixture> oracle_fixtures() {
  std::vector<OracleFixture> out;
  {
    // Perfect predictions; BL covers every grade 0..5, so its weighted F1 is the full weight sum.
    const std::array<int, 20> bl = {0, 0, 1, 1, 2, 2, 3, 3, 4, 4, 5, 5, 0, 0, 3, 3, 0, 1, 5, 0};
    const std::array<int, 20> ti = {0, 0, 0, 2, 2, 2, 0, 0, 0, 0, 4, 4, 4, 0, 0, 0, 1, 1, 0, 0};
    std::array<std::array<int, 20>, 3> truth{bl, {}, ti};
    std::array<std::array<double, 20>, 3> pres{}, sev{};
    for (std::size_t t = 0; t < 3; ++t)
      for (std::size_t i = 0; i < 20; ++i) {
        pres[t][i] = truth[t][i] > 0 ? 0.9 : 0.1;
        sev[t][i] = oracle_mu(truth[t][i]);
      }
    out.push_back({"perfect", make_video("perfect", truth, pres, sev)});
  }
  {
    // Grade confusions, false alarms and a late detection.
    const std::array<int, 20> bl = {0, 1, 1, 2, 2, 0, 0, 3, 3, 3, 0, 0, 5, 5, 5, 5, 0, 0, 0, 0};
    const std::array<int, 20> mi = {0, 0, 0, 0, 4, 4, 4, 4, 0, 0, 0, 2, 2, 0, 0, 0, 0, 1, 1, 0};
    const std::array<int, 20> ti = {3, 3, 3, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0};
    const std::array<double, 20> bl_p = {0.2, 0.7, 0.4, 0.8, 0.9, 0.6, 0.1, 0.3, 0.55, 0.9,
                                         0.1, 0.2, 0.9, 0.95, 0.7, 0.5, 0.45, 0.1, 0.2, 0.3};
    const std::array<double, 20> bl_s = {0.1, 0.15, 0.1, 0.25, 0.45, 0.3, 0.0, 0.5, 0.41, 0.62,
                                         0.05, 0.1, 0.85, 0.79, 0.95, 0.6, 0.2, 0.1, 0.0, 0.02};
    const std::array<double, 20> mi_p = {0.1, 0.1, 0.6, 0.1, 0.2, 0.3, 0.8, 0.9, 0.7, 0.1,
                                         0.1, 0.6, 0.4, 0.1, 0.1, 0.1, 0.1, 0.3, 0.51, 0.1};
    const std::array<double, 20> mi_s = {0.0, 0.1, 0.35, 0.0, 0.65, 0.7, 0.68, 0.81, 0.5, 0.0,
                                         0.0, 0.33, 0.2, 0.0, 0.0, 0.0, 0.0, 0.1, 0.12, 0.0};
    const std::array<double, 20> ti_p = {0.9, 0.9, 0.9, 0.6, 0.1, 0.1, 0.1, 0.1, 0.1, 0.1,
                                         0.1, 0.1, 0.1, 0.1, 0.1, 0.1, 0.1, 0.1, 0.1, 0.1};
    const std::array<double, 20> ti_s = {0.4, 0.39, 0.6, 0.5, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0,
                                         0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0};
    out.push_back({"mixed", make_video("mixed", {bl, mi, ti}, {bl_p, mi_p, ti_p}, {bl_s, mi_s, ti_s})});
  }
  {
    // TI's first event is never detected; its second is caught two frames late.
    const std::array<int, 20> bl = {0, 0, 0, 0, 0, 2, 2, 2, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0};
    const std::array<int, 20> ti = {0, 4, 4, 4, 4, 0, 0, 0, 0, 0, 1, 1, 1, 1, 1, 0, 0, 0, 0, 0};
    std::array<double, 20> bl_p{}, bl_s{}, ti_p{}, ti_s{}, mi_p{}, mi_s{};
    for (std::size_t i = 0; i < 20; ++i) {
      bl_p[i] = bl[i] ? 0.8 : 0.2;
      bl_s[i] = bl[i] ? 0.3 : 0.05;
      ti_p[i] = (i >= 12 && i <= 14) ? 0.7 : 0.3;
      ti_s[i] = ti[i] ? 0.15 : 0.05;
      mi_p[i] = 0.05;
      mi_s[i] = 0.05;
    }
    out.push_back({"missed", make_video("missed", {bl, {}, ti}, {bl_p, mi_p, ti_p}, {bl_s, mi_s, ti_s})});
  }
  return out;
}

}  // namespace bmx::testing
