#include "betamixer/metrics.hpp"

#include <numeric>
#include <set>

#include <fmt/format.h>
#include <json.hpp>

namespace bmx {

namespace {

double ratio(std::int64_t num, std::int64_t den) {
  return den > 0 ? static_cast<double>(num) / static_cast<double>(den) : 0.0;
}

std::optional<double> ratio_opt(std::int64_t num, std::int64_t den) {
  if (den <= 0) return std::nullopt;
  return static_cast<double>(num) / static_cast<double>(den);
}

std::optional<double> mean_of(const std::vector<double>& xs) {
  if (xs.empty()) return std::nullopt;
  return std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
}

}  // namespace

PrecisionRecallF1 precision_recall_f1(const ConfusionCounts& c) {
  PrecisionRecallF1 r;
  r.precision = ratio(c.tp, c.tp + c.fp);
  r.recall = ratio(c.tp, c.tp + c.fn);
  r.f1 = (r.precision + r.recall) > 0.0 ? 2.0 * r.precision * r.recall / (r.precision + r.recall) : 0.0;
  return r;
}

void SeverityWeights::validate() const {
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!(values[i] >= 0.0)) throw ValidationError("severity_weights", "weights must be non-negative");
    if (i > 0 && values[i] < values[i - 1]) throw ValidationError("severity_weights", "weights must be non-decreasing");
  }
}

std::array<double, 6> SeverityWeights::effective() const {
  if (!normalized) return values;
  const double total = std::accumulate(values.begin(), values.end(), 0.0);
  auto out = values;
  if (total > 0.0)
    for (auto& w : out) w /= total;
  return out;
}

double weighted_f1(std::span<const double> per_grade_f1, std::span<const double> weights) {
  if (per_grade_f1.size() != weights.size())
    throw ShapeError("weighted_f1: " + std::to_string(per_grade_f1.size()) + " F1 values for " +
                     std::to_string(weights.size()) + " weights");
  return std::inner_product(per_grade_f1.begin(), per_grade_f1.end(), weights.begin(), 0.0);
}

double mse(std::span<const double> truth, std::span<const double> predicted) {
  if (truth.size() != predicted.size())
    throw ShapeError("mse: length " + std::to_string(truth.size()) + " vs " + std::to_string(predicted.size()));
  if (truth.empty()) throw ValidationError("mse", "needs at least one value");
  double s = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const double d = truth[i] - predicted[i];
    s += d * d;
  }
  return s / static_cast<double>(truth.size());
}

PpvNpv& PpvNpv::operator+=(const PpvNpv& o) {
  severe += o.severe;
  non_severe += o.non_severe;
  return *this;
}

void PpvNpv::finalize() {
  ppv = ratio_opt(severe.tp, severe.tp + severe.fp);
  npv = ratio_opt(non_severe.tn, non_severe.tn + non_severe.fn);
}

PpvNpv ppv_npv(const EventTimeline& t) {
  if (t.true_grades.size() != t.predicted_grades.size())
    throw ShapeError("ppv_npv: true and predicted timelines differ in length");
  PpvNpv r;
  for (std::size_t i = 0; i < t.true_grades.size(); ++i) {
    const int y = t.true_grades[i];
    const int p = t.predicted_grades[i];
    auto& s = r.severe;
    if (p >= 3) {
      (y >= 3 ? s.tp : s.fp) += 1;
    } else {
      (y >= 3 ? s.fn : s.tn) += 1;
    }
    auto& n = r.non_severe;
    if (p <= 1) {
      (y <= 1 ? n.tn : n.fn) += 1;
    } else {
      (y <= 1 ? n.fp : n.tp) += 1;
    }
  }
  r.finalize();
  return r;
}

CdtResult& CdtResult::operator+=(const CdtResult& o) {
  delays.insert(delays.end(), o.delays.begin(), o.delays.end());
  events += o.events;
  misses += o.misses;
  return *this;
}

void CdtResult::finalize() {
  if (delays.empty()) {
    mean.reset();
    return;
  }
  mean = static_cast<double>(std::accumulate(delays.begin(), delays.end(), std::int64_t{0})) /
         static_cast<double>(delays.size());
}

CdtResult cdt(const EventTimeline& t) {
  if (t.true_grades.size() != t.predicted_grades.size())
    throw ShapeError("cdt: true and predicted timelines differ in length");
  const auto n = t.true_grades.size();
  std::vector<std::size_t> onsets;
  for (std::size_t i = 0; i < n; ++i)
    if (t.true_grades[i] > 0 && (i == 0 || t.true_grades[i - 1] == 0)) onsets.push_back(i);
  CdtResult r;
  for (std::size_t e = 0; e < onsets.size(); ++e) {
    const auto stop = e + 1 < onsets.size() ? onsets[e + 1] : n;
    ++r.events;
    bool found = false;
    for (auto f = onsets[e]; f < stop; ++f)
      if (t.predicted_grades[f] > 0) {
        r.delays.push_back(static_cast<std::int64_t>(f - onsets[e]));
        found = true;
        break;
      }
    if (!found) ++r.misses;
  }
  r.finalize();
  return r;
}

MetricsReport full_report(std::span<const VideoEvaluation> videos, const GradeCodec& codec,
                          const SeverityWeights& weights) {
  weights.validate();
  const auto w = weights.effective();
  MetricsReport report;
  std::array<std::map<int, std::pair<double, std::int64_t>>, kNumEventKinds> grade_sq{};
  std::array<double, kNumEventKinds> total_sq{};

  for (const auto& v : videos) {
    if (v.predictions.size() != v.truth.size())
      throw ShapeError("full_report: " + v.video_id + " has " + std::to_string(v.predictions.size()) +
                       " predictions for " + std::to_string(v.truth.size()) + " labelled frames");
    report.frames += static_cast<std::int64_t>(v.truth.size());
    for (EventKind kind : kAllEventKinds) {
      const auto ti = static_cast<std::size_t>(index_of(kind));
      auto& tr = report.types[ti];
      EventTimeline tl;
      for (std::size_t f = 0; f < v.truth.size(); ++f) {
        const auto& p = v.predictions[f];
        const int y = v.truth[f][ti].grade.value();
        const int g = discretize(p.severity[ti], p.presence[ti], codec).value();
        tl.true_grades.push_back(y);
        tl.predicted_grades.push_back(g);
        const double target = grade_to_mu(SeverityGrade(y), {}, codec);
        const double d = p.severity[ti] - target;
        auto& acc = grade_sq[ti][y];
        acc.first += d * d;
        acc.second += 1;
        total_sq[ti] += d * d;

        auto& det = tr.detection;
        if (g > 0) {
          (y > 0 ? det.tp : det.fp) += 1;
        } else {
          (y > 0 ? det.fn : det.tn) += 1;
        }
        for (int s = 0; s <= 5; ++s) {
          auto& c = tr.grade_counts[static_cast<std::size_t>(s)];
          if (g == s && y == s)
            ++c.tp;
          else if (g == s)
            ++c.fp;
          else if (y == s)
            ++c.fn;
          else
            ++c.tn;
        }
      }
      tr.clinical += ppv_npv(tl);
      tr.cdt += cdt(tl);
    }
  }

  std::vector<double> f1s, precisions, recalls, wf1s, ppvs, npvs, mses, cdts;
  for (EventKind kind : kAllEventKinds) {
    const auto ti = static_cast<std::size_t>(index_of(kind));
    auto& tr = report.types[ti];
    tr.kind = kind;
    tr.scores = precision_recall_f1(tr.detection);
    for (std::size_t s = 0; s < 6; ++s) tr.grade_f1[s] = precision_recall_f1(tr.grade_counts[s]).f1;
    tr.weighted_f1 = weighted_f1(tr.grade_f1, w);
    tr.clinical.finalize();
    tr.cdt.finalize();
    for (const auto& [grade, acc] : grade_sq[ti]) {
      tr.grade_mse[grade] = acc.first / static_cast<double>(acc.second);
      tr.grade_support[grade] = acc.second;
    }
    tr.mse = report.frames > 0 ? total_sq[ti] / static_cast<double>(report.frames) : 0.0;

    f1s.push_back(tr.scores.f1);
    precisions.push_back(tr.scores.precision);
    recalls.push_back(tr.scores.recall);
    wf1s.push_back(tr.weighted_f1);
    mses.push_back(tr.mse);
    if (tr.clinical.ppv) ppvs.push_back(*tr.clinical.ppv);
    if (tr.clinical.npv) npvs.push_back(*tr.clinical.npv);
    if (tr.cdt.mean) cdts.push_back(*tr.cdt.mean);
  }
  report.f1 = *mean_of(f1s);
  report.precision = *mean_of(precisions);
  report.recall = *mean_of(recalls);
  report.weighted_f1 = *mean_of(wf1s);
  report.mse = *mean_of(mses);
  report.ppv = mean_of(ppvs);
  report.npv = mean_of(npvs);
  report.cdt_mean = mean_of(cdts);
  std::map<int, std::pair<double, std::int64_t>> pooled;
  for (const auto& per_type : grade_sq)
    for (const auto& [grade, acc] : per_type) {
      pooled[grade].first += acc.first;
      pooled[grade].second += acc.second;
    }
  for (const auto& [grade, acc] : pooled) {
    report.grade_mse[grade] = acc.first / static_cast<double>(acc.second);
    report.grade_support[grade] = acc.second;
  }
  return report;
}

// ---------------------------------------------------------------------------

namespace {

nlohmann::ordered_json opt_json(const std::optional<double>& v) {
  return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr);
}

nlohmann::ordered_json counts_json(const ConfusionCounts& c) {
  return {{"tp", c.tp}, {"fp", c.fp}, {"tn", c.tn}, {"fn", c.fn}};
}

std::string num(double v) { return fmt::format("{:.6f}", v); }
std::string num(const std::optional<double>& v) { return v ? num(*v) : std::string("NA"); }

}  // namespace

std::string report_to_json(const MetricsReport& r) {
  nlohmann::ordered_json j;
  j["frames"] = r.frames;
  j["overall"] = {{"f1", r.f1},   {"precision", r.precision}, {"recall", r.recall}, {"weighted_f1", r.weighted_f1},
                  {"ppv", opt_json(r.ppv)}, {"npv", opt_json(r.npv)}, {"mse", r.mse}, {"cdt_mean", opt_json(r.cdt_mean)}};
  nlohmann::ordered_json pooled = nlohmann::ordered_json::object();
  for (const auto& [g, v] : r.grade_mse) pooled[std::to_string(g)] = {{"mse", v}, {"support", r.grade_support.at(g)}};
  j["grade_mse"] = pooled;
  nlohmann::ordered_json types = nlohmann::ordered_json::object();
  for (const auto& t : r.types) {
    nlohmann::ordered_json tj;
    tj["detection"] = counts_json(t.detection);
    tj["precision"] = t.scores.precision;
    tj["recall"] = t.scores.recall;
    tj["f1"] = t.scores.f1;
    tj["grade_f1"] = t.grade_f1;
    tj["weighted_f1"] = t.weighted_f1;
    tj["ppv"] = opt_json(t.clinical.ppv);
    tj["npv"] = opt_json(t.clinical.npv);
    tj["severe_counts"] = counts_json(t.clinical.severe);
    tj["non_severe_counts"] = counts_json(t.clinical.non_severe);
    tj["mse"] = t.mse;
    nlohmann::ordered_json gm = nlohmann::ordered_json::object();
    for (const auto& [g, v] : t.grade_mse)
      gm[std::to_string(g)] = {{"mse", v}, {"support", t.grade_support.at(g)}};
    tj["grade_mse"] = gm;
    tj["cdt"] = {{"mean", opt_json(t.cdt.mean)},
                 {"events", t.cdt.events},
                 {"detected", static_cast<std::int64_t>(t.cdt.delays.size())},
                 {"misses", t.cdt.misses}};
    types[std::string(to_string(t.kind))] = tj;
  }
  j["types"] = types;
  return j.dump(2) + "\n";
}

std::string classification_table_csv(std::span<const NamedReport> rows) {
  std::string out = "model";
  for (EventKind k : kAllEventKinds) out += fmt::format(",{0}_F1,{0}_PPV,{0}_NPV", to_string(k));
  out += ",overall_F1,overall_PPV,overall_NPV\n";
  for (const auto& [name, r] : rows) {
    out += name;
    for (const auto& t : r.types)
      out += "," + num(t.scores.f1) + "," + num(t.clinical.ppv) + "," + num(t.clinical.npv);
    out += "," + num(r.f1) + "," + num(r.ppv) + "," + num(r.npv) + "\n";
  }
  return out;
}

std::string summary_table_csv(std::span<const NamedReport> rows) {
  std::string out = "model,F1,recall,MSE,weighted_F1\n";
  for (const auto& [name, r] : rows)
    out += fmt::format("{},{},{},{},{}\n", name, num(r.f1), num(r.recall), num(r.mse), num(r.weighted_f1));
  return out;
}

std::string regression_table_csv(std::span<const NamedReport> rows) {
  std::set<int> pooled;
  std::array<std::set<int>, kNumEventKinds> grades;
  for (const auto& [name, r] : rows) {
    for (const auto& [g, v] : r.grade_mse) pooled.insert(g);
    for (std::size_t t = 0; t < kNumEventKinds; ++t)
      for (const auto& [g, v] : r.types[t].grade_mse) grades[t].insert(g);
  }
  const auto cell = [](const std::map<int, double>& m, int g) {
    const auto it = m.find(g);
    return it == m.end() ? std::string("NA") : num(it->second);
  };
  std::string out = "model";
  for (int g : pooled) out += fmt::format(",grade_{}", g);
  for (std::size_t t = 0; t < kNumEventKinds; ++t)
    for (int g : grades[t]) out += fmt::format(",{}_{}", to_string(kAllEventKinds[t]), g);
  out += "\n";
  for (const auto& [name, r] : rows) {
    out += name;
    for (int g : pooled) out += "," + cell(r.grade_mse, g);
    for (std::size_t t = 0; t < kNumEventKinds; ++t)
      for (int g : grades[t]) out += "," + cell(r.types[t].grade_mse, g);
    out += "\n";
  }
  return out;
}

std::string cdt_table_csv(std::span<const NamedReport> rows) {
  std::string out = "model,BL,MI,TI,mean\n";
  for (const auto& [name, r] : rows) {
    out += name;
    for (const auto& t : r.types) out += "," + num(t.cdt.mean);
    out += "," + num(r.cdt_mean) + "\n";
  }
  return out;
}

}  // namespace bmx
