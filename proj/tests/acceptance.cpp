// Acceptance checks: prints one PASS/FAIL line per criterion and exits
// non-zero when any criterion fails.

#include <fmt/format.h>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>

#include "betamixer/config.hpp"
#include "gradient_suite.hpp"
#include "metrics_oracle.hpp"

using namespace bmx;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

int failures = 0;

void verdict(int id, const std::string& title, bool pass, const std::string& detail) {
  if (!pass) ++failures;
  fmt::print("criterion {:2d} {}: {}  {}\n", id, title, pass ? "PASS" : "FAIL", detail);
  std::cout.flush();
}

// ---------------------------------------------------------------------------

void beta_moments() {
  const auto t0 = Clock::now();
  const GradeCodec codec;
  std::mt19937_64 rng(2024);
  bool ok = true;
  std::string detail;
  for (int g = 0; g <= 5; ++g) {
    const int n = 100000;
    double s = 0, s2 = 0;
    for (int i = 0; i < n; ++i) {
      const double x = sample_target(SeverityGrade(g), codec, rng);
      s += x;
      s2 += x * x;
    }
    const double mean = s / n, var = (s2 - n * mean * mean) / (n - 1);
    const double mu = grade_to_mu(SeverityGrade(g), {}, codec);
    const double var_ratio = var / (codec.sigma * codec.sigma);
    ok = ok && std::abs(mean - mu) <= 0.01 && std::abs(var_ratio - 1.0) <= 0.1;
    detail += fmt::format("g{}:mean={:.4f}/{:.2f},var/s2={:.3f} ", g, mean, mu, var_ratio);
  }
  const double secs = seconds_since(t0);
  verdict(1, "beta-moment fidelity", ok && secs < 2.0, detail + fmt::format("time={:.2f}s", secs));
}

void round_trip() {
  const auto t0 = Clock::now();
  const GradeCodec codec;
  std::mt19937_64 rng(2025);
  bool ok = true;
  std::string detail;
  for (int g = 1; g <= 5; ++g) {
    int hits = 0;
    for (int i = 0; i < 10000; ++i)
      hits += discretize(sample_target(SeverityGrade(g), codec, rng), 1.0, codec).value() == g;
    ok = ok && hits >= 9500;
    detail += fmt::format("g{}={:.4f} ", g, hits / 10000.0);
  }
  const double secs = seconds_since(t0);
  verdict(2, "round-trip fidelity", ok && secs < 2.0, detail + fmt::format("time={:.2f}s", secs));
}

void gradients() {
  const auto t0 = Clock::now();
  double worst = 0.0;
  std::string worst_name;
  std::size_t cases = 0;
  for (const auto& c : testing::all_gradient_cases()) {
    ++cases;
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
      const double e = c.run(seed).max_relative_error;
      if (e > worst) {
        worst = e;
        worst_name = c.name;
      }
    }
  }
  const double secs = seconds_since(t0);
  verdict(3, "gradient correctness", worst < 1e-3 && secs < 60.0,
          fmt::format("{} checks x 20 seeds, max rel err {:.2e} ({}) time={:.1f}s", cases, worst, worst_name, secs));
}

void metric_oracle() {
  const auto t0 = Clock::now();
  bool ok = true;
  auto same = [](double a, double b) { return std::abs(a - b) <= 1e-12 * std::max(1.0, std::abs(b)); };
  auto same_opt = [&](const std::optional<double>& a, const std::optional<double>& b) {
    return a.has_value() == b.has_value() && (!a || same(*a, *b));
  };
  double perfect_wf1 = 0.0;
  for (const auto& fx : testing::oracle_fixtures()) {
    const auto r = full_report(std::vector<VideoEvaluation>{fx.video}, GradeCodec{});
    const auto o = testing::brute_force(fx.video);
    for (std::size_t t = 0; t < 3; ++t) {
      const auto& tr = r.types[t];
      const auto& ot = o.types[t];
      ok = ok && same(tr.scores.f1, ot.f1) && same(tr.weighted_f1, ot.weighted_f1) && same(tr.mse, ot.mse) &&
           same_opt(tr.clinical.ppv, ot.ppv) && same_opt(tr.clinical.npv, ot.npv) && same_opt(tr.cdt.mean, ot.cdt) &&
           tr.cdt.misses == ot.cdt_misses;
    }
    ok = ok && same(r.f1, o.f1) && same(r.weighted_f1, o.weighted_f1) && same(r.mse, o.mse) &&
         same_opt(r.ppv, o.ppv) && same_opt(r.npv, o.npv) && same_opt(r.cdt_mean, o.cdt);
    if (fx.name == "perfect") perfect_wf1 = r.type(EventKind::BL).weighted_f1;
    if (fx.name == "missed") ok = ok && r.type(EventKind::TI).cdt.misses == 1;
  }
  const std::array<double, 6> ones{1, 1, 1, 1, 1, 1};
  const double all_ones = weighted_f1(ones, SeverityWeights{}.effective());
  ok = ok && same(perfect_wf1, 0.98) && std::abs(all_ones - 0.98) < 1e-12;
  const double secs = seconds_since(t0);
  verdict(8, "metric oracle equivalence", ok && secs < 1.0,
          fmt::format("3 fixtures, all-ones weighted F1={:.2f} time={:.3f}s", all_ones, secs));
}

void ingestion() {
  const fs::path dir = BMX_FIXTURE_DIR "/two_centers";
  const auto t = class_stats(load_annotations(dir / "annotations.csv"), load_video_index(dir / "videos.csv"));
  struct Row {
    const char* name;
    std::int64_t cases, frames, normal, bl, mi, ti;
  };
  const Row expected[] = {{"Strasbourg", 70, 464973, 426983, 33634, 3674, 682},
                          {"Bern", 70, 316646, 282204, 28068, 5691, 683}};
  bool ok = true;
  std::string detail;
  for (const auto& e : expected) {
    const auto it = t.sources.find(e.name);
    if (it == t.sources.end()) {
      ok = false;
      continue;
    }
    const auto& s = it->second;
    ok = ok && s.cases == e.cases && s.frames == e.frames && s.normal == e.normal && s.event_frames[0] == e.bl &&
         s.event_frames[1] == e.mi && s.event_frames[2] == e.ti;
    detail += fmt::format("{}: {} cases, {} frames, {} normal, BL {} MI {} TI {}; ", e.name, s.cases, s.frames,
                          s.normal, s.event_frames[0], s.event_frames[1], s.event_frames[2]);
  }
  verdict(9, "ingestion fidelity", ok, detail);
}

// ---------------------------------------------------------------------------
// Training criteria on the default synthetic dataset.

std::string grade_cells(const MetricsReport& r) {
  std::string s;
  for (const auto& [g, v] : r.grade_mse)
    if (g > 0) s += fmt::format("g{}={:.4f} ", g, v);
  return s;
}

std::string per_type_cells(const MetricsReport& r) {
  std::string s;
  for (const auto& t : r.types) {
    s += fmt::format("{}[", to_string(t.kind));
    for (const auto& [g, v] : t.grade_mse)
      if (g > 0) s += fmt::format("{}:{:.3f} ", g, v);
    s.back() = ']';
    s += ' ';
  }
  return s;
}

void training_criteria() {
  const RunConfig c = run_config_from_json(nlohmann::json::object());
  const Dataset data = synthesize_dataset(c.synthetic);

  // Frames of freshly synthesized videos that no training step has seen.
  SyntheticConfig held_cfg = c.synthetic;
  held_cfg.seed = c.synthetic.seed + 1000;
  held_cfg.n_videos = (4096 + held_cfg.frames_per_video - 1) / held_cfg.frames_per_video;
  const Dataset held = synthesize_dataset(held_cfg);
  FrameMatrix held_frames(4096, c.model.image.pixels());
  nn::Index filled = 0;
  for (const auto& v : held.videos) {
    const nn::Index n = std::min<nn::Index>(v.num_frames(), 4096 - filled);
    held_frames.middleRows(filled, n) = v.frames.topRows(n);
    filled += n;
    if (filled == 4096) break;
  }

  const auto t_adv = Clock::now();
  Model shared(c.model);
  TrainState shared_state = initial_state(c.train, c.model);
  int adversarial_epochs = 0;
  run_adversarial_stage(shared, data, c.train, shared_state,
                        [&](const Model&, const TrainState&) { ++adversarial_epochs; });
  const auto moments = summarize_moments(shared.frame_features(held_frames));
  const double adv_secs = seconds_since(t_adv);
  const bool c4 = std::abs(moments.mean) <= 0.1 && moments.variance >= 0.7 && moments.variance <= 1.3;
  verdict(4, "feature normalization", c4 && adv_secs < 600.0,
          fmt::format("held-out frames={} avg mean={:+.4f} avg var={:.4f} (per dimension: avg |mean| {:.3f}, max |mean| {:.3f}, var {:.3f}..{:.3f}, "
                      "{:.0f}% of dims in band) adversarial epochs={} time={:.0f}s",
                      moments.frames, moments.mean, moments.variance, moments.mean_abs_mean, moments.max_abs_mean, moments.min_variance,
                      moments.max_variance, 100.0 * moments.fraction_in_band, adversarial_epochs, adv_secs));

  // Full model, k = 5, continuing from the shared feature stage.
  ModelConfig k1_cfg = c.model;
  k1_cfg.clip_length = 1;
  Model k1(k1_cfg);
  adopt_feature_stage(k1, shared);
  TrainState k1_state = shared_state;

  const auto t_main = Clock::now();
  train(shared, data, c.train, c.codec, shared_state);
  const double full_secs = adv_secs + seconds_since(t_main);
  const auto full = evaluate(shared, data, data.split.test, c.codec, c.weights);
  double worst_grade = 0.0;
  for (const auto& [g, v] : full.grade_mse)
    if (g > 0) worst_grade = std::max(worst_grade, v);
  const bool c5 = full.f1 >= 0.85 && worst_grade <= 0.05 && c.train.main_epochs <= 30;
  verdict(5, "end-to-end learnability", c5 && full_secs < 1200.0,
          fmt::format("F1={:.4f} MSE={:.4f} per-grade MSE (pooled over types) {}max={:.4f}; per type {}"
                      "main epochs={} time={:.0f}s",
                      full.f1, full.mse, grade_cells(full), worst_grade, per_type_cells(full), c.train.main_epochs,
                      full_secs));

  train(k1, data, c.train, c.codec, k1_state);
  const auto single = evaluate(k1, data, data.split.test, c.codec, c.weights);
  verdict(6, "clip-length trend", full.f1 - single.f1 >= 0.02,
          fmt::format("k=5 F1={:.4f} k=1 F1={:.4f} difference={:+.4f} (shared seed {})", full.f1, single.f1,
                      full.f1 - single.f1, c.seed));

  ModelConfig genless_cfg = c.model;
  genless_cfg.genless = true;
  Model genless(genless_cfg);
  TrainState genless_state = initial_state(c.train, genless_cfg);
  train(genless, data, c.train, c.codec, genless_state);
  const auto gl = evaluate(genless, data, data.split.test, c.codec, c.weights);
  const std::vector<NamedReport> rows{{"BetaMixer", full}, {"BetaMixer (Genless)", gl}};
  const std::string table = summary_table_csv(rows);
  const bool both_rows =
      table.find("\nBetaMixer,") != std::string::npos && table.find("\nBetaMixer (Genless),") != std::string::npos;
  verdict(7, "genless trend", full.f1 >= gl.f1 - 0.02 && both_rows,
          fmt::format("full F1={:.4f} genless F1={:.4f} difference={:+.4f} rows emitted={}", full.f1, gl.f1,
                      full.f1 - gl.f1, both_rows ? "both" : "missing"));
  std::cout << table;
}

// ---------------------------------------------------------------------------

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

int run(const std::string& cmd) { return std::system((cmd + " > /dev/null 2>&1").c_str()); }

void determinism() {
  const fs::path root = fs::temp_directory_path() / "bmx_acceptance_determinism";
  fs::remove_all(root);
  fs::create_directories(root);
  std::ofstream(root / "config.json") << R"({
  "seed": 13,
  "synthetic": {"n_videos": 14, "frames_per_video": 40, "image_size": 16},
  "model": {"backbone_channels": [4, 8], "feature_dim": 16, "generator_hidden": 16, "discriminator_hidden": 16,
            "depth": 16, "layers": 1, "heads": 2, "ffn_dim": 32, "clip_length": 3},
  "train": {"main_epochs": 3, "adversarial_epochs": 2, "steps_per_epoch": 10, "batch_size": 16}
})";
  const std::string cli = std::string(BMX_CLI_PATH) + " --config " + (root / "config.json").string();
  bool ok = run(cli + " --out " + (root / "data").string() + " synth") == 0;
  for (const char* r : {"a", "b"}) {
    const std::string out = " --out " + (root / r).string();
    ok = ok && run(cli + out + " train --data " + (root / "data").string()) == 0;
    ok = ok && run(cli + out + " eval --data " + (root / "data").string()) == 0;
  }
  std::string detail;
  for (const char* f : {"history.csv", "report.json", "classification.csv", "summary.csv", "regression.csv", "cdt.csv"}) {
    const std::string a = slurp(root / "a" / f), b = slurp(root / "b" / f);
    const bool same = !a.empty() && a == b;
    ok = ok && same;
    detail += fmt::format("{}={} ", f, same ? "identical" : "DIFFERENT");
  }
  verdict(10, "determinism", ok, detail + "(two CLI train+eval runs)");
  fs::remove_all(root);
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, std::function<void()>>> steps = {
      {"1", beta_moments}, {"2", round_trip},   {"3", gradients},    {"8", metric_oracle},
      {"9", ingestion},    {"10", determinism}, {"4-7", training_criteria}};
  for (const auto& [id, step] : steps) {
    try {
      step();
    } catch (const std::exception& e) {
      ++failures;
      fmt::print("criterion {} ERROR: {}\n", id, e.what());
    }
  }
  fmt::print("{} criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
