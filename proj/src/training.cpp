#include "betamixer/training.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "betamixer/binary_io.hpp"
#include "betamixer/config.hpp"

namespace bmx {

namespace fs = std::filesystem;
using nn::Index;
using Mat = nn::Matrix<float>;

void TrainConfig::validate() const {
  if (batch_size < 1) throw ValidationError("batch_size", "must be >= 1");
  if (adversarial_batch_size < 0 || adversarial_batch_size == 1)
    throw ValidationError("adversarial_batch_size", "must be 0 (use batch_size) or >= 2");
  if (main_epochs < 0) throw ValidationError("main_epochs", "must be >= 0");
  if (adversarial_epochs < 0) throw ValidationError("adversarial_epochs", "must be >= 0");
  if (!(learning_rate > 0.0)) throw ValidationError("learning_rate", "must be positive");
  if (!(adversarial_learning_rate > 0.0)) throw ValidationError("adversarial_learning_rate", "must be positive");
  if (!(discriminator_learning_rate > 0.0)) throw ValidationError("discriminator_learning_rate", "must be positive");
  if (!(adversarial_beta1 >= 0.0 && adversarial_beta1 < 1.0))
    throw ValidationError("adversarial_beta1", "must lie in [0, 1)");
  if (!(lambda_cls >= 0.0) || !(lambda_reg >= 0.0)) throw ValidationError("lambda_cls", "loss weights must be >= 0");
  if (resample_period < 1) throw ValidationError("resample_period", "must be >= 1");
  if (steps_per_epoch < 0) throw ValidationError("steps_per_epoch", "must be >= 0");
  if (clip_stride < 1) throw ValidationError("clip_stride", "must be >= 1");
  if (!(moment_loss_weight >= 0.0)) throw ValidationError("moment_loss_weight", "must be >= 0");
  if (!(moment_mean_tolerance > 0.0) || !(moment_variance_tolerance > 0.0))
    throw ValidationError("moment_mean_tolerance", "moment tolerances must be positive");
}

std::string_view to_string(Stage stage) {
  switch (stage) {
    case Stage::Adversarial: return "adversarial";
    case Stage::Main: return "main";
    case Stage::Done: return "done";
  }
  return "?";
}

Stage parse_stage(std::string_view text) {
  if (text == "adversarial") return Stage::Adversarial;
  if (text == "main") return Stage::Main;
  if (text == "done") return Stage::Done;
  throw FormatError("unknown training stage '" + std::string(text) + "'");
}

namespace {

std::string fmt_metric(double v) { return std::isfinite(v) ? fmt::format("{:.6f}", v) : std::string("NA"); }

void check_finite(double loss, std::string_view what, int epoch) {
  if (!std::isfinite(loss))
    throw DivergenceError(fmt::format("{} loss became non-finite in epoch {}", what, epoch + 1));
}

}  // namespace

std::string history_csv(const std::vector<EpochRecord>& history) {
  std::string out(kHistoryHeader);
  out += '\n';
  for (const auto& r : history)
    out += fmt::format("{},{:.6f},{:.6f},{},{}\n", r.epoch, r.loss_cls, r.loss_reg, fmt_metric(r.val_f1),
                       fmt_metric(r.val_mse));
  return out;
}

TrainState initial_state(const TrainConfig& config, const ModelConfig& model) {
  TrainState s;
  std::seed_seq seq{config.seed, std::uint64_t{0x7472616e}};
  s.rng.seed(seq);
  s.stage = model.genless || config.adversarial_epochs == 0 ? Stage::Main : Stage::Adversarial;
  for (auto* opt : {&s.feature_opt, &s.discriminator_opt}) opt->beta1 = config.adversarial_beta1;
  s.feature_opt.learning_rate = config.adversarial_learning_rate;
  s.discriminator_opt.learning_rate = config.discriminator_learning_rate;
  s.main_opt.learning_rate = config.learning_rate;
  return s;
}

FeatureCache compute_features(const Model& model, const Dataset& data, const std::vector<std::string>& ids) {
  FeatureCache cache;
  for (const auto& id : ids) cache.emplace(id, model.frame_features(data.video(id).frames));
  return cache;
}

void calibrate_feature_norm(Model& model, const Dataset& data) {
  Index rows = 0;
  for (const auto& id : data.split.train) rows += data.video(id).num_frames();
  if (rows < 2) throw ValidationError("train", "feature statistics need at least two training frames");
  Mat all(rows, model.config().feature_dim);
  Index at = 0;
  for (const auto& id : data.split.train) {
    const Video& v = data.video(id);
    all.middleRows(at, v.num_frames()) = model.raw_backbone_features(v.frames);
    at += v.num_frames();
  }
  model.set_feature_moments(nn::batch_moments(all));
}

MomentSummary summarize_moments(const Mat& features, double mean_tolerance, double variance_tolerance) {
  if (features.rows() < 2) throw ValidationError("features", "moments need at least two frames");
  MomentSummary s;
  s.frames = features.rows();
  const Eigen::ArrayXd mean = features.cast<double>().colwise().mean().transpose().array();
  const Eigen::ArrayXd var =
      (features.cast<double>().rowwise() - mean.matrix().transpose()).array().square().colwise().sum().transpose() /
      static_cast<double>(features.rows() - 1);
  s.mean = mean.mean();
  s.variance = var.mean();
  s.mean_abs_mean = mean.abs().mean();
  s.max_abs_mean = mean.abs().maxCoeff();
  s.min_variance = var.minCoeff();
  s.max_variance = var.maxCoeff();
  s.fraction_in_band =
      ((mean.abs() <= mean_tolerance) && ((var - 1.0).abs() <= variance_tolerance)).cast<double>().mean();
  return s;
}

MomentSummary feature_moments(const Model& model, const Dataset& data, const std::vector<std::string>& ids) {
  Index rows = 0;
  for (const auto& id : ids) rows += data.video(id).num_frames();
  Mat all(rows, model.config().feature_dim);
  Index at = 0;
  for (const auto& id : ids) {
    const Video& v = data.video(id);
    all.middleRows(at, v.num_frames()) = model.frame_features(v.frames);
    at += v.num_frames();
  }
  return summarize_moments(all);
}

// ---------------------------------------------------------------------------
// Adversarial stage

nn::Var<float> batch_moment_penalty(const nn::Var<float>& x, double weight) {
  if (x.rows() < 2) throw ShapeError("batch_moment_penalty: need at least two rows");
  nn::Graph<float>& g = *x.graph;
  const Index n = x.rows();
  const auto avg = g.constant(Mat::Constant(1, n, 1.0f / static_cast<float>(n)));
  const auto mu = nn::matmul(avg, x);
  const auto centered = x - nn::tile_rows(mu, n);
  const auto var = nn::matmul(avg, nn::mul(centered, centered));
  const auto penalty = nn::mean(nn::mul(mu, mu)) + nn::mse_loss(var, Mat(Mat::Ones(1, x.cols())));
  return nn::scale(penalty, static_cast<float>(weight));
}

void run_adversarial_stage(Model& model, const Dataset& data, const TrainConfig& config, TrainState& state,
                           const EpochHook& hook) {
  if (state.stage != Stage::Adversarial) return;
  if (model.config().genless) {
    state.stage = Stage::Main;
    state.epoch = 0;
    return;
  }
  std::vector<FrameRecord> frames;
  for (const auto& id : data.split.train) {
    const Video& v = data.video(id);
    for (Index f = 0; f < v.num_frames(); ++f) frames.push_back({&v, f});
  }
  if (frames.empty()) throw ValidationError("train", "adversarial stage needs training frames");

  auto feature_params = model.parameters().with_prefix({"backbone.", "generator."});
  auto disc_params = model.discriminator_parameters();
  const Index d = model.config().feature_dim;
  const Index pixels = model.config().image.pixels();
  const auto batch = static_cast<std::size_t>(config.adversarial_batch_size > 0 ? config.adversarial_batch_size
                                                                                 : config.batch_size);

  while (state.epoch < config.adversarial_epochs) {
    std::shuffle(frames.begin(), frames.end(), state.rng);
    // A trailing batch too small for batch statistics is dropped.
    for (std::size_t start = 0; start + 2 <= frames.size(); start += batch) {
      const auto n = static_cast<Index>(std::min(frames.size() - start, batch));
      Mat images(n, pixels);
      for (Index i = 0; i < n; ++i) images.row(i) = frames[start + static_cast<std::size_t>(i)].image();

      nn::Graph<float> g;
      auto fake = model.generate_normalized(g, model.extract_features(g, images, true), true);

      // Discriminator step on detached fakes and fresh standard-normal reals.
      {
        Mat real(n, d);
        std::normal_distribution<float> normal(0.0f, 1.0f);
        for (Index i = 0; i < real.size(); ++i) real.data()[i] = normal(state.rng);
        nn::Graph<float> gd;
        auto on_real = model.discriminate(gd, gd.constant(std::move(real)), true);
        auto on_fake = model.discriminate(gd, gd.constant(fake.value()), true);
        auto loss = adversarial_loss(on_real, on_fake, AdversarialSide::Discriminator);
        check_finite(loss.value()(0, 0), "discriminator", state.epoch);
        gd.backward(loss);
        nn::adam_step<float>(disc_params, state.discriminator_opt);
        for (auto* p : disc_params) p->zero_grad();
      }

      // Generator step through the updated, frozen discriminator.
      auto on_fake = model.discriminate(g, fake, false);
      auto loss = adversarial_loss(on_fake, on_fake, AdversarialSide::Generator);
      if (config.moment_loss_weight > 0.0) loss = loss + batch_moment_penalty(fake, config.moment_loss_weight);
      check_finite(loss.value()(0, 0), "generator", state.epoch);
      g.backward(loss);
      nn::adam_step<float>(feature_params, state.feature_opt);
      for (auto* p : feature_params) p->zero_grad();
    }
    ++state.epoch;
    calibrate_feature_norm(model, data);
    state.features_calibrated = true;
    bool settled = false;
    if (config.adversarial_early_stop) {
      settled = feature_moments(model, data, data.split.train)
                    .within(config.moment_mean_tolerance, config.moment_variance_tolerance);
    }
    if (settled || state.epoch >= config.adversarial_epochs) {
      state.stage = Stage::Main;
      state.epoch = 0;
    }
    if (hook) hook(model, state);
    if (state.stage != Stage::Adversarial) break;
  }
  if (state.stage == Stage::Adversarial) {
    state.stage = Stage::Main;
    state.epoch = 0;
  }
}

void adopt_feature_stage(Model& dst, const Model& src) {
  for (auto* p : dst.parameters().with_prefix({"backbone.", "generator.", "discriminator."})) {
    const auto& from = src.parameters().at(p->name);
    if (from.value.shape != p->value.shape) throw ShapeError("adopt_feature_stage: shape differs for " + p->name);
    p->value.data = from.value.data;
  }
  dst.set_feature_moments(src.feature_moments());
}

// ---------------------------------------------------------------------------
// Main stage

namespace {

struct CachedClip {
  const Mat* features = nullptr;
  Index end_frame = 0;
  FrameLabels labels{};
};

Mat gather_clip_features(std::span<const CachedClip* const> clips, Index k) {
  const Index d = clips.front()->features->cols();
  Mat out(static_cast<Index>(clips.size()) * k, d);
  for (std::size_t b = 0; b < clips.size(); ++b)
    out.middleRows(static_cast<Index>(b) * k, k) = clips[b]->features->middleRows(clips[b]->end_frame - k + 1, k);
  return out;
}

}  // namespace

std::vector<VideoEvaluation> predict_videos(const Model& model, const Dataset& data, const FeatureCache& features,
                                            const std::vector<std::string>& ids, int batch_size) {
  const Index k = model.config().clip_length;
  std::vector<VideoEvaluation> out;
  for (const auto& id : ids) {
    const Mat& f = features.at(id);
    const Index n = f.rows();
    VideoEvaluation ev;
    ev.video_id = id;
    const auto timeline = label_timeline(data.annotations, id, n);
    for (Index start = k - 1; start < n; start += batch_size) {
      const Index b = std::min<Index>(batch_size, n - start);
      Mat batch(b * k, f.cols());
      for (Index i = 0; i < b; ++i) batch.middleRows(i * k, k) = f.middleRows(start + i - k + 1, k);
      auto recs = model.predict(batch, b);
      for (Index i = 0; i < b; ++i) {
        auto& r = recs[static_cast<std::size_t>(i)];
        r.video_id = id;
        r.frame_index = start + i;
        ev.predictions.push_back(std::move(r));
        ev.truth.push_back(timeline[static_cast<std::size_t>(start + i)]);
      }
    }
    out.push_back(std::move(ev));
  }
  return out;
}

MetricsReport evaluate(const Model& model, const Dataset& data, const std::vector<std::string>& ids,
                       const GradeCodec& codec, const SeverityWeights& weights) {
  const auto features = compute_features(model, data, ids);
  const auto videos = predict_videos(model, data, features, ids);
  return full_report(videos, codec, weights);
}

void run_main_stage(Model& model, const Dataset& data, const TrainConfig& config, const GradeCodec& codec,
                    TrainState& state, const EpochHook& hook) {
  if (state.stage != Stage::Main) return;
  if (!state.features_calibrated) {
    calibrate_feature_norm(model, data);
    state.features_calibrated = true;
  }
  const Index k = model.config().clip_length;
  std::vector<std::string> cached_ids = data.split.train;
  cached_ids.insert(cached_ids.end(), data.split.val.begin(), data.split.val.end());
  const FeatureCache features = compute_features(model, data, cached_ids);

  std::vector<CachedClip> clips;
  for (const auto& id : data.split.train) {
    const Mat& f = features.at(id);
    const auto timeline = label_timeline(data.annotations, id, f.rows());
    for (Index end = k - 1; end < f.rows(); end += config.clip_stride)
      clips.push_back({&f, end, timeline[static_cast<std::size_t>(end)]});
  }
  if (clips.empty()) throw ValidationError("train", "no training clips of length " + std::to_string(k));
  std::vector<FrameLabels> clip_labels;
  for (const auto& c : clips) clip_labels.push_back(c.labels);

  auto params = model.head_side_parameters();
  const auto batch = static_cast<std::size_t>(config.batch_size);
  const int steps = config.steps_per_epoch > 0
                        ? config.steps_per_epoch
                        : static_cast<int>((clips.size() + batch - 1) / batch);

  while (state.epoch < config.main_epochs) {
    BalancedSampler sampler(clip_labels, state.rng());
    // Per-clip regression targets and the step they were drawn at; reset each
    // epoch so a resumed run needs no extra state.
    std::vector<std::array<float, kNumEventKinds>> targets(clips.size());
    std::vector<int> drawn_at(clips.size(), std::numeric_limits<int>::min() / 2);
    double sum_cls = 0.0;
    double sum_reg = 0.0;
    for (int step = 0; step < steps; ++step) {
      std::vector<const CachedClip*> picked;
      Mat presence(static_cast<Index>(batch), kNumEventKinds);
      Mat target(static_cast<Index>(batch), kNumEventKinds);
      for (std::size_t b = 0; b < batch; ++b) {
        const std::size_t idx = sampler.next();
        picked.push_back(&clips[idx]);
        if (step - drawn_at[idx] >= config.resample_period) {
          for (int t = 0; t < kNumEventKinds; ++t)
            targets[idx][static_cast<std::size_t>(t)] =
                static_cast<float>(sample_target(clips[idx].labels[static_cast<std::size_t>(t)].grade, codec, state.rng));
          drawn_at[idx] = step;
        }
        for (int t = 0; t < kNumEventKinds; ++t) {
          presence(static_cast<Index>(b), t) = clips[idx].labels[static_cast<std::size_t>(t)].present ? 1.0f : 0.0f;
          target(static_cast<Index>(b), t) = targets[idx][static_cast<std::size_t>(t)];
        }
      }
      nn::Graph<float> g;
      const auto heads = model.heads(g, g.constant(gather_clip_features(picked, k)), static_cast<Index>(batch),
                                     Trainable::head_side());
      auto l_cls = classification_loss(heads.presence, presence);
      auto l_reg = nn::mse_loss(heads.severity, target);
      auto loss = nn::scale(l_cls, static_cast<float>(config.lambda_cls)) +
                  nn::scale(l_reg, static_cast<float>(config.lambda_reg));
      check_finite(loss.value()(0, 0), "main-stage", state.epoch);
      g.backward(loss);
      nn::adam_step<float>(params, state.main_opt);
      for (auto* p : params) p->zero_grad();
      sum_cls += l_cls.value()(0, 0);
      sum_reg += l_reg.value()(0, 0);
    }

    EpochRecord rec;
    rec.epoch = state.epoch + 1;
    rec.loss_cls = sum_cls / steps;
    rec.loss_reg = sum_reg / steps;
    rec.val_f1 = rec.val_mse = std::numeric_limits<double>::quiet_NaN();
    if (!data.split.val.empty()) {
      const auto report = full_report(predict_videos(model, data, features, data.split.val), codec);
      rec.val_f1 = report.f1;
      rec.val_mse = report.mse;
    }
    state.history.push_back(rec);
    ++state.epoch;
    if (state.epoch >= config.main_epochs) state.stage = Stage::Done;
    if (hook) hook(model, state);
  }
  state.stage = Stage::Done;
}

void train(Model& model, const Dataset& data, const TrainConfig& config, const GradeCodec& codec, TrainState& state,
           const EpochHook& hook) {
  config.validate();
  run_adversarial_stage(model, data, config, state, hook);
  run_main_stage(model, data, config, codec, state, hook);
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

void put_block(std::ostream& out, const std::string& name, const nn::Shape& shape, const float* data) {
  io::put_u32(out, static_cast<std::uint32_t>(name.size()));
  out.write(name.data(), static_cast<std::streamsize>(name.size()));
  io::put_u32(out, static_cast<std::uint32_t>(shape.size()));
  for (Index d : shape) io::put_u32(out, static_cast<std::uint32_t>(d));
  io::put_f32(out, data, static_cast<std::size_t>(nn::shape_size(shape)));
}

struct Block {
  nn::Shape shape;
  std::vector<float> data;
};

nlohmann::json optimizer_json(const nn::AdamState<float>& s) {
  return {{"learning_rate", s.learning_rate}, {"beta1", s.beta1}, {"beta2", s.beta2},
          {"epsilon", s.epsilon},             {"step", s.step}};
}

void optimizer_from_json(const nlohmann::json& j, nn::AdamState<float>& s) {
  s.learning_rate = j.at("learning_rate").get<double>();
  s.beta1 = j.at("beta1").get<double>();
  s.beta2 = j.at("beta2").get<double>();
  s.epsilon = j.at("epsilon").get<double>();
  s.step = j.at("step").get<long>();
}

const std::array<std::pair<const char*, nn::AdamState<float> TrainState::*>, 3> kOptimizers = {{
    {"feature", &TrainState::feature_opt},
    {"discriminator", &TrainState::discriminator_opt},
    {"main", &TrainState::main_opt},
}};

}  // namespace

void save_checkpoint(const fs::path& path, const Model& model, const TrainConfig& train, const GradeCodec& codec,
                     const TrainState& state) {
  nlohmann::json header;
  header["model"] = to_json(model.config());
  header["model"]["init_seed"] = model.config().init_seed;
  header["train"] = to_json(train);
  header["train"]["seed"] = train.seed;
  header["codec"] = to_json(codec);
  header["stage"] = std::string(to_string(state.stage));
  header["epoch"] = state.epoch;
  header["features_calibrated"] = state.features_calibrated;
  std::ostringstream rng;
  rng << state.rng;
  header["rng"] = rng.str();
  for (const auto& [name, member] : kOptimizers) header["optimizers"][name] = optimizer_json(state.*member);
  header["history"] = nlohmann::json::array();
  for (const auto& r : state.history)
    header["history"].push_back({r.epoch, r.loss_cls, r.loss_reg, r.val_f1, r.val_mse});
  const std::string text = header.dump();

  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
    if (ec) throw IoError("cannot create " + path.parent_path().string() + ": " + ec.message());
  }
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw IoError("cannot write " + tmp.string());
    out.write("BMXC", 4);
    io::put_u32(out, kCheckpointVersion);
    io::put_u32(out, static_cast<std::uint32_t>(text.size()));
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    std::uint32_t count = static_cast<std::uint32_t>(model.parameters().size() + model.buffers().size());
    for (const auto& [name, member] : kOptimizers) count += 2 * static_cast<std::uint32_t>((state.*member).first_moment.size());
    io::put_u32(out, count);
    for (const auto& p : model.parameters()) put_block(out, "param/" + p->name, p->value.shape, p->value.raw());
    for (const auto& p : model.buffers()) put_block(out, "buffer/" + p->name, p->value.shape, p->value.raw());
    for (const auto& [name, member] : kOptimizers) {
      const auto& opt = state.*member;
      for (const auto& [pname, m] : opt.first_moment) {
        const auto& v = opt.second_moment.at(pname);
        put_block(out, fmt::format("opt/{}/m/{}", name, pname), {m.rows(), m.cols()}, m.data());
        put_block(out, fmt::format("opt/{}/v/{}", name, pname), {v.rows(), v.cols()}, v.data());
      }
    }
    if (!out) throw IoError("failed writing " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move checkpoint into " + path.string() + ": " + ec.message());
}

Checkpoint load_checkpoint(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  io::expect_magic(in, "BMXC");
  const auto version = io::get_u32(in, "version");
  if (version != kCheckpointVersion) throw VersionMismatch(version, kCheckpointVersion);
  const auto text_len = io::get_u32(in, "header length");
  std::string text(text_len, '\0');
  io::get_exact(in, text.data(), text_len, "header");
  const auto header = nlohmann::json::parse(text, nullptr, false);
  if (header.is_discarded() || !header.is_object()) throw FormatError("checkpoint header is not valid JSON");

  Checkpoint ck;
  try {
    auto mj = header.at("model");
    const auto init_seed = mj.at("init_seed").get<std::uint64_t>();
    mj.erase("init_seed");
    ModelConfig mc = model_from_json(mj);
    mc.init_seed = init_seed;
    auto tj = header.at("train");
    const auto seed = tj.at("seed").get<std::uint64_t>();
    tj.erase("seed");
    ck.train = train_from_json(tj);
    ck.train.seed = seed;
    ck.codec = codec_from_json(header.at("codec"));
    ck.model = std::make_unique<Model>(mc);
    ck.state.stage = parse_stage(header.at("stage").get<std::string>());
    ck.state.epoch = header.at("epoch").get<int>();
    ck.state.features_calibrated = header.at("features_calibrated").get<bool>();
    std::istringstream rng(header.at("rng").get<std::string>());
    rng >> ck.state.rng;
    if (!rng) throw FormatError("checkpoint rng state is malformed");
    for (const auto& [name, member] : kOptimizers) optimizer_from_json(header.at("optimizers").at(name), ck.state.*member);
    for (const auto& r : header.at("history")) {
      auto num = [](const nlohmann::json& v) {
        return v.is_null() ? std::numeric_limits<double>::quiet_NaN() : v.get<double>();
      };
      ck.state.history.push_back({r.at(0).get<int>(), num(r.at(1)), num(r.at(2)), num(r.at(3)), num(r.at(4))});
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint header: ") + e.what());
  } catch (const ConfigError& e) {
    throw FormatError(std::string("checkpoint header: ") + e.what());
  } catch (const ValidationError& e) {
    throw FormatError(std::string("checkpoint header: ") + e.what());
  }

  const auto count = io::get_u32(in, "block count");
  std::map<std::string, Block> blocks;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = io::get_u32(in, "block name length");
    if (name_len > 4096) throw FormatError("checkpoint block name is implausibly long");
    std::string name(name_len, '\0');
    io::get_exact(in, name.data(), name_len, "block name");
    const auto rank = io::get_u32(in, "block rank");
    if (rank < 1 || rank > 8) throw FormatError("checkpoint block '" + name + "' has invalid rank");
    Block b;
    for (std::uint32_t r = 0; r < rank; ++r) b.shape.push_back(io::get_u32(in, "block dims"));
    b.data.resize(static_cast<std::size_t>(nn::shape_size(b.shape)));
    io::get_f32(in, b.data.data(), b.data.size(), "block data");
    blocks.emplace(std::move(name), std::move(b));
  }

  auto restore = [&](nn::ParameterStore<float>& store, const std::string& prefix) {
    for (auto& p : store) {
      auto it = blocks.find(prefix + p->name);
      if (it == blocks.end()) throw FormatError("checkpoint lacks '" + prefix + p->name + "'");
      if (it->second.shape != p->value.shape)
        throw FormatError("checkpoint block '" + it->first + "' has shape " + nn::shape_string(it->second.shape) +
                          ", model expects " + nn::shape_string(p->value.shape));
      std::copy(it->second.data.begin(), it->second.data.end(), p->value.raw());
      blocks.erase(it);
    }
  };
  restore(ck.model->parameters(), "param/");
  restore(ck.model->buffers(), "buffer/");
  for (auto& [bname, b] : blocks) {
    for (const auto& [oname, member] : kOptimizers) {
      const std::string m_pre = fmt::format("opt/{}/m/", oname);
      const std::string v_pre = fmt::format("opt/{}/v/", oname);
      auto& opt = ck.state.*member;
      auto load = [&](std::map<std::string, Mat>& dst, const std::string& pname) {
        if (b.shape.size() != 2) throw FormatError("optimizer block '" + bname + "' must be rank 2");
        dst[pname] = Eigen::Map<const Mat>(b.data.data(), b.shape[0], b.shape[1]);
      };
      if (bname.rfind(m_pre, 0) == 0) load(opt.first_moment, bname.substr(m_pre.size()));
      if (bname.rfind(v_pre, 0) == 0) load(opt.second_moment, bname.substr(v_pre.size()));
    }
  }
  return ck;
}

}  // namespace bmx
