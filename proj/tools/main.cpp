#include <CLI11.hpp>
#include <fmt/format.h>
#include <fmt/ostream.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <random>
#include <sstream>

#include "betamixer/config.hpp"
#include "betamixer/dataset.hpp"
#include "betamixer/error.hpp"
#include "betamixer/metrics.hpp"
#include "betamixer/severity.hpp"
#include "betamixer/training.hpp"

extern char** environ;

namespace fs = std::filesystem;
using nlohmann::json;

namespace bmx::cli {
namespace {

enum ExitCode : int { kOk = 0, kFailure = 1, kConfig = 2, kIo = 3, kDivergence = 4, kMismatch = 5 };

struct GlobalOptions {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out;
};

/// The checksum goes to `log`, which is stderr when stdout carries data.
RunConfig resolve_config(const GlobalOptions& g, std::ostream& log = std::cout) {
  json j = json::object();
  if (!g.config_path.empty()) {
    std::ifstream in(g.config_path);
    if (!in) throw IoError("cannot open config " + g.config_path);
    j = json::parse(in, nullptr, false);
    if (j.is_discarded()) throw ConfigError("config " + g.config_path + " is not valid JSON");
  }
  apply_env_overrides(j, environ);
  if (g.seed) j["seed"] = *g.seed;
  RunConfig c = run_config_from_json(j);
  log << "config checksum: " << config_checksum(c) << "\n";
  return c;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
    if (ec) throw IoError("cannot create " + path.parent_path().string() + ": " + ec.message());
  }
  std::ofstream out(path, std::ios::binary);
  if (!out || !(out << text)) throw IoError("cannot write " + path.string());
}

Dataset load_checked(const fs::path& dir, const RunConfig& c) {
  Dataset ds = load_dataset(dir);
  for (const auto& v : ds.videos)
    if (v.geometry != c.model.image)
      throw ConfigError(fmt::format("video {} is {}x{}x{} but the model expects {}x{}x{}", v.id, v.geometry.channels,
                                    v.geometry.height, v.geometry.width, c.model.image.channels,
                                    c.model.image.height, c.model.image.width));
  return ds;
}

/// Model, training and codec settings a checkpoint must agree with.
void check_compatible(const Checkpoint& ck, const RunConfig& c, bool compare_train) {
  auto model_json = [](const ModelConfig& m) {
    json j = to_json(m);
    j["init_seed"] = m.init_seed;
    return j;
  };
  if (model_json(ck.model->config()) != model_json(c.model))
    throw MismatchError("checkpoint model settings differ from the run configuration");
  if (to_json(ck.codec) != to_json(c.codec))
    throw MismatchError("checkpoint codec settings differ from the run configuration");
  if (compare_train) {
    json a = to_json(ck.train), b = to_json(c.train);
    a["seed"] = ck.train.seed;
    b["seed"] = c.train.seed;
    if (a != b) throw MismatchError("checkpoint training settings differ from the run configuration");
  }
}

std::string variant_name(const ModelConfig& m) { return m.genless ? "BetaMixer (Genless)" : "BetaMixer"; }

void write_report(const fs::path& dir, std::span<const NamedReport> rows, const std::string& json_text) {
  write_text(dir / "report.json", json_text);
  write_text(dir / "classification.csv", classification_table_csv(rows));
  write_text(dir / "summary.csv", summary_table_csv(rows));
  write_text(dir / "regression.csv", regression_table_csv(rows));
  write_text(dir / "cdt.csv", cdt_table_csv(rows));
}

void print_summary(const MetricsReport& r) {
  fmt::print("F1 {:.4f}  recall {:.4f}  MSE {:.4f}  weighted F1 {:.4f}\n", r.f1, r.recall, r.mse, r.weighted_f1);
}

// ---------------------------------------------------------------------------

int cmd_synth(const GlobalOptions& g) {
  const RunConfig c = resolve_config(g);
  const fs::path dir = g.out.empty() ? fs::path(c.paths.data_dir) : fs::path(g.out);
  const Dataset ds = synthesize_dataset(c.synthetic);
  save_dataset(ds, dir);
  const auto index = ds.index();
  print_class_stats(std::cout, class_stats(ds.annotations, index));
  fmt::print("wrote {} videos to {}\n", ds.videos.size(), dir.string());
  return kOk;
}

int cmd_sample_labels(const GlobalOptions& g, int grade, long n, int bins) {
  const RunConfig c = resolve_config(g, g.out.empty() ? std::cerr : std::cout);
  if (grade < 0 || grade > 5) throw ConfigError("grade must lie in 0..5");
  if (n < 0) throw ConfigError("n must be non-negative");
  if (bins < 1) throw ConfigError("bins must be >= 1");
  std::mt19937_64 rng(c.seed);
  const SeverityGrade s(grade);
  std::vector<double> samples(static_cast<std::size_t>(n));
  for (auto& x : samples) x = sample_target(s, c.codec, rng);

  std::vector<long> counts(static_cast<std::size_t>(bins), 0);
  for (double x : samples) counts[std::min<std::size_t>(static_cast<std::size_t>(x * bins), counts.size() - 1)]++;
  std::string hist = "bin_lo,bin_hi,count\n";
  for (int b = 0; b < bins; ++b)
    hist += fmt::format("{:.6f},{:.6f},{}\n", static_cast<double>(b) / bins, static_cast<double>(b + 1) / bins,
                        counts[static_cast<std::size_t>(b)]);
  if (g.out.empty()) {
    std::cout << hist;
    return kOk;
  }
  std::string list = "severity\n";
  for (double x : samples) list += fmt::format("{:.9f}\n", x);
  write_text(fs::path(g.out) / "samples.csv", list);
  write_text(fs::path(g.out) / "histogram.csv", hist);
  fmt::print("wrote {} samples for grade {} to {}\n", n, grade, g.out);
  return kOk;
}

int cmd_train(const GlobalOptions& g, const std::string& data_dir, bool resume, int keep) {
  const RunConfig c = resolve_config(g);
  const fs::path run = g.out.empty() ? fs::path(c.paths.run_dir) : fs::path(g.out);
  const Dataset ds = load_checked(data_dir.empty() ? fs::path(c.paths.data_dir) : fs::path(data_dir), c);

  std::unique_ptr<Model> model;
  TrainState state;
  const fs::path last = run / "last.bmxc";
  if (resume && fs::exists(last)) {
    Checkpoint ck = load_checkpoint(last);
    check_compatible(ck, c, true);
    model = std::move(ck.model);
    state = std::move(ck.state);
    fmt::print("resuming from {} ({} stage, epoch {})\n", last.string(), to_string(state.stage), state.epoch);
  } else {
    model = std::make_unique<Model>(c.model);
    state = initial_state(c.train, c.model);
  }
  write_text(run / "config.json", to_json(c).dump(2) + "\n");

  std::vector<fs::path> kept;
  const auto hook = [&](const Model& m, const TrainState& s) {
    const bool in_main = s.stage != Stage::Adversarial;
    const int epoch = in_main ? static_cast<int>(s.history.size()) : s.epoch;
    const fs::path path = run / "checkpoints" / fmt::format("{}_epoch_{:03d}.bmxc", in_main ? "main" : "adversarial", epoch);
    save_checkpoint(path, m, c.train, c.codec, s);
    save_checkpoint(last, m, c.train, c.codec, s);
    kept.push_back(path);
    if (keep > 0 && kept.size() > static_cast<std::size_t>(keep)) {
      fs::remove(kept.front());
      kept.erase(kept.begin());
    }
    write_text(run / "history.csv", history_csv(s.history));
    if (!in_main) {
      fmt::print("adversarial epoch {:3d}\n", s.epoch);
    } else if (s.history.empty()) {
      fmt::print("adversarial stage finished\n");
    } else {
      const auto& r = s.history.back();
      fmt::print("epoch {:3d}  loss_cls {:.4f}  loss_reg {:.4f}  val_f1 {:.4f}  val_mse {:.4f}\n", r.epoch,
                 r.loss_cls, r.loss_reg, r.val_f1, r.val_mse);
    }
    std::cout.flush();
  };
  std::error_code ec;
  fs::create_directories(run / "checkpoints", ec);
  if (ec) throw IoError("cannot create " + (run / "checkpoints").string() + ": " + ec.message());
  train(*model, ds, c.train, c.codec, state, hook);
  save_checkpoint(last, *model, c.train, c.codec, state);
  write_text(run / "history.csv", history_csv(state.history));
  fmt::print("training finished; checkpoint {}\n", last.string());
  return kOk;
}

int cmd_eval(const GlobalOptions& g, const std::string& data_dir, const std::string& checkpoint) {
  const RunConfig c = resolve_config(g);
  const fs::path run = g.out.empty() ? fs::path(c.paths.run_dir) : fs::path(g.out);
  const fs::path ck_path = checkpoint.empty() ? run / "last.bmxc" : fs::path(checkpoint);
  const Checkpoint ck = load_checkpoint(ck_path);
  check_compatible(ck, c, false);
  const Dataset ds = load_checked(data_dir.empty() ? fs::path(c.paths.data_dir) : fs::path(data_dir), c);
  const MetricsReport report = evaluate(*ck.model, ds, ds.split.test, c.codec, c.weights);
  const std::vector<NamedReport> rows = {{variant_name(ck.model->config()), report}};
  write_report(run, rows, report_to_json(report));
  print_summary(report);
  fmt::print("wrote report to {}\n", run.string());
  return kOk;
}

int cmd_ablate(const GlobalOptions& g, const std::string& data_dir, std::vector<int> lengths) {
  const RunConfig c = resolve_config(g);
  if (lengths.empty()) lengths = c.ablation_lengths;
  std::sort(lengths.begin(), lengths.end());
  lengths.erase(std::unique(lengths.begin(), lengths.end()), lengths.end());
  for (int k : lengths)
    if (k < 1) throw ConfigError("clip lengths must be >= 1");
  const fs::path run = g.out.empty() ? fs::path(c.paths.run_dir) / "ablation" : fs::path(g.out);
  const Dataset ds = load_checked(data_dir.empty() ? fs::path(c.paths.data_dir) : fs::path(data_dir), c);

  // The adversarial stage does not depend on the clip length, so it runs once.
  Model shared(c.model);
  TrainState shared_state = initial_state(c.train, c.model);
  run_adversarial_stage(shared, ds, c.train, shared_state);

  std::vector<NamedReport> rows;
  json all = json::object();
  for (int k : lengths) {
    ModelConfig mc = c.model;
    mc.clip_length = k;
    Model model(mc);
    adopt_feature_stage(model, shared);
    TrainState state = shared_state;
    train(model, ds, c.train, c.codec, state);
    const MetricsReport report = evaluate(model, ds, ds.split.test, c.codec, c.weights);
    const auto name = fmt::format("k={}", k);
    fmt::print("{:>5}  ", name);
    print_summary(report);
    write_text(run / fmt::format("history_k{}.csv", k), history_csv(state.history));
    all[name] = json::parse(report_to_json(report));
    rows.emplace_back(name, report);
  }
  write_report(run, rows, all.dump(2) + "\n");
  fmt::print("wrote ablation tables to {}\n", run.string());
  return kOk;
}

int guarded(const std::function<int()>& body) {
  try {
    return body();
  } catch (const ConfigError& e) {
    fmt::print(std::cerr, "config error: {}\n", e.what());
    return kConfig;
  } catch (const ValidationError& e) {
    fmt::print(std::cerr, "config error: {}\n", e.what());
    return kConfig;
  } catch (const MismatchError& e) {
    fmt::print(std::cerr, "mismatch: {}\n", e.what());
    return kMismatch;
  } catch (const VersionMismatch& e) {
    fmt::print(std::cerr, "mismatch: {}\n", e.what());
    return kMismatch;
  } catch (const DivergenceError& e) {
    fmt::print(std::cerr, "diverged: {}\n", e.what());
    return kDivergence;
  } catch (const IoError& e) {
    fmt::print(std::cerr, "i/o error: {}\n", e.what());
    return kIo;
  } catch (const FormatError& e) {
    fmt::print(std::cerr, "i/o error: {}\n", e.what());
    return kIo;
  } catch (const ParseError& e) {
    fmt::print(std::cerr, "i/o error: {}\n", e.what());
    return kIo;
  } catch (const std::exception& e) {
    fmt::print(std::cerr, "error: {}\n", e.what());
    return kFailure;
  }
}

}  // namespace
}  // namespace bmx::cli

int main(int argc, char** argv) {
  using namespace bmx::cli;
  CLI::App app{"Beta-mixed severity regression for surgical adverse-event detection"};
  app.require_subcommand(1);
  app.fallthrough();
  GlobalOptions g;
  std::uint64_t seed = 0;
  app.add_option("--config", g.config_path, "JSON run configuration")->check(CLI::ExistingFile);
  auto* seed_opt = app.add_option("--seed", seed, "Overrides the configured seed");
  app.add_option("--out", g.out, "Output directory");

  auto* synth = app.add_subcommand("synth", "Write a synthetic dataset");

  int grade = 3;
  long n = 10000;
  int bins = 20;
  auto* labels = app.add_subcommand("sample-labels", "Draw continuous severities for one grade");
  labels->add_option("--grade", grade, "Severity grade 0..5");
  labels->add_option("--n", n, "Number of samples");
  labels->add_option("--bins", bins, "Histogram bins on [0, 1]");

  std::string data_dir;
  bool resume = false;
  auto* train = app.add_subcommand("train", "Run both training stages");
  train->add_option("--data", data_dir, "Dataset directory");
  train->add_flag("--resume", resume, "Continue from <out>/last.bmxc when present");
  int keep = 3;
  train->add_option("--keep", keep, "Per-epoch checkpoints to retain; 0 keeps all");

  std::string checkpoint;
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on the test split");
  eval->add_option("--data", data_dir, "Dataset directory");
  eval->add_option("--checkpoint", checkpoint, "Checkpoint file");

  std::vector<int> lengths;
  auto* ablate = app.add_subcommand("ablate-clip-length", "Train and evaluate one model per clip length");
  ablate->add_option("--data", data_dir, "Dataset directory");
  ablate->add_option("--lengths", lengths, "Clip lengths");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kConfig;
  }
  if (*seed_opt) g.seed = seed;

  if (*synth) return guarded([&] { return cmd_synth(g); });
  if (*labels) return guarded([&] { return cmd_sample_labels(g, grade, n, bins); });
  if (*train) return guarded([&] { return cmd_train(g, data_dir, resume, keep); });
  if (*eval) return guarded([&] { return cmd_eval(g, data_dir, checkpoint); });
  if (*ablate) return guarded([&] { return cmd_ablate(g, data_dir, lengths); });
  return kFailure;
}
