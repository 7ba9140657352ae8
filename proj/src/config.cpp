#include "betamixer/config.hpp"

#include <fmt/format.h>

#include <cctype>
#include <set>

namespace bmx {

using nlohmann::json;

namespace {

class SectionReader {
 public:
  SectionReader(const json& j, std::string section) : j_(j), section_(std::move(section)) {
    if (!j_.is_object()) throw ConfigError("section '" + section_ + "' must be an object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    auto it = j_.find(key);
    if (it == j_.end()) return;
    seen_.insert(key);
    try {
      out = it->template get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(fmt::format("{}.{}: {}", section_, key, e.what()));
    }
  }

  const json* sub(const char* key) {
    auto it = j_.find(key);
    if (it == j_.end()) return nullptr;
    seen_.insert(key);
    return &*it;
  }

  void finish() const {
    for (const auto& item : j_.items())
      if (!seen_.count(item.key())) throw ConfigError(fmt::format("unknown config key '{}.{}'", section_, item.key()));
  }

 private:
  const json& j_;
  std::string section_;
  std::set<std::string> seen_;
};

template <typename F>
auto validated(F&& f) {
  try {
    return f();
  } catch (const ValidationError& e) {
    throw ConfigError(e.what());
  }
}

}  // namespace

json to_json(const SyntheticConfig& c) {
  return {{"n_videos", c.n_videos},
          {"frames_per_video", c.frames_per_video},
          {"image_size", c.image_size},
          {"event_rate", c.event_rate},
          {"grade_weights", c.grade_weights},
          {"min_duration", c.min_duration},
          {"max_duration", c.max_duration},
          {"min_gap", c.min_gap},
          {"background_level", c.background_level},
          {"background_texture", c.background_texture},
          {"noise_std", c.noise_std},
          {"amplitude_base", c.amplitude_base},
          {"amplitude_step", c.amplitude_step},
          {"position_jitter", c.position_jitter},
          {"ramp_frames", c.ramp_frames},
          {"occlusion_prob", c.occlusion_prob},
          {"train_fraction", c.train_fraction},
          {"val_fraction", c.val_fraction}};
}

json to_json(const GradeCodec& c) {
  return {{"epsilon", c.epsilon},
          {"sigma", c.sigma},
          {"classification_threshold", c.classification_threshold},
          {"regression_thresholds", c.regression_thresholds}};
}

json to_json(const ModelConfig& c) {
  return {{"image", {{"channels", c.image.channels}, {"height", c.image.height}, {"width", c.image.width}}},
          {"backbone_channels", c.backbone_channels},
          {"feature_dim", c.feature_dim},
          {"generator_hidden", c.generator_hidden},
          {"discriminator_hidden", c.discriminator_hidden},
          {"discriminator_batch_stats", c.discriminator_batch_stats},
          {"depth", c.depth},
          {"layers", c.layers},
          {"heads", c.heads},
          {"ffn_dim", c.ffn_dim},
          {"clip_length", c.clip_length},
          {"genless", c.genless},
          {"multi_label", c.multi_label}};
}

json to_json(const TrainConfig& c) {
  return {{"batch_size", c.batch_size},
          {"adversarial_batch_size", c.adversarial_batch_size},
          {"main_epochs", c.main_epochs},
          {"adversarial_epochs", c.adversarial_epochs},
          {"learning_rate", c.learning_rate},
          {"adversarial_learning_rate", c.adversarial_learning_rate},
          {"discriminator_learning_rate", c.discriminator_learning_rate},
          {"adversarial_beta1", c.adversarial_beta1},
          {"moment_loss_weight", c.moment_loss_weight},
          {"adversarial_early_stop", c.adversarial_early_stop},
          {"moment_mean_tolerance", c.moment_mean_tolerance},
          {"moment_variance_tolerance", c.moment_variance_tolerance},
          {"lambda_cls", c.lambda_cls},
          {"lambda_reg", c.lambda_reg},
          {"resample_period", c.resample_period},
          {"steps_per_epoch", c.steps_per_epoch},
          {"clip_stride", c.clip_stride}};
}

json to_json(const RunConfig& c) {
  json model = to_json(c.model);
  model.erase("image");
  return {{"seed", c.seed},
          {"synthetic", to_json(c.synthetic)},
          {"codec", to_json(c.codec)},
          {"model", model},
          {"train", to_json(c.train)},
          {"metrics", {{"severity_weights", c.weights.values}, {"normalize_weights", c.weights.normalized}}},
          {"paths", {{"data_dir", c.paths.data_dir}, {"run_dir", c.paths.run_dir}}},
          {"ablation", {{"lengths", c.ablation_lengths}}}};
}

SyntheticConfig synthetic_from_json(const json& j) {
  SyntheticConfig c;
  SectionReader r(j, "synthetic");
  r.get("n_videos", c.n_videos);
  r.get("frames_per_video", c.frames_per_video);
  r.get("image_size", c.image_size);
  r.get("event_rate", c.event_rate);
  r.get("grade_weights", c.grade_weights);
  r.get("min_duration", c.min_duration);
  r.get("max_duration", c.max_duration);
  r.get("min_gap", c.min_gap);
  r.get("background_level", c.background_level);
  r.get("background_texture", c.background_texture);
  r.get("noise_std", c.noise_std);
  r.get("amplitude_base", c.amplitude_base);
  r.get("amplitude_step", c.amplitude_step);
  r.get("position_jitter", c.position_jitter);
  r.get("ramp_frames", c.ramp_frames);
  r.get("occlusion_prob", c.occlusion_prob);
  r.get("train_fraction", c.train_fraction);
  r.get("val_fraction", c.val_fraction);
  r.finish();
  return c;
}

GradeCodec codec_from_json(const json& j) {
  GradeCodec c;
  SectionReader r(j, "codec");
  r.get("epsilon", c.epsilon);
  r.get("sigma", c.sigma);
  r.get("classification_threshold", c.classification_threshold);
  r.get("regression_thresholds", c.regression_thresholds);
  r.finish();
  return c;
}

ModelConfig model_from_json(const json& j) {
  ModelConfig c;
  SectionReader r(j, "model");
  if (const json* img = r.sub("image")) {
    SectionReader ri(*img, "model.image");
    ri.get("channels", c.image.channels);
    ri.get("height", c.image.height);
    ri.get("width", c.image.width);
    ri.finish();
  }
  r.get("backbone_channels", c.backbone_channels);
  r.get("feature_dim", c.feature_dim);
  r.get("generator_hidden", c.generator_hidden);
  r.get("discriminator_hidden", c.discriminator_hidden);
  r.get("discriminator_batch_stats", c.discriminator_batch_stats);
  r.get("depth", c.depth);
  r.get("layers", c.layers);
  r.get("heads", c.heads);
  r.get("ffn_dim", c.ffn_dim);
  r.get("clip_length", c.clip_length);
  r.get("genless", c.genless);
  r.get("multi_label", c.multi_label);
  r.finish();
  return c;
}

TrainConfig train_from_json(const json& j) {
  TrainConfig c;
  SectionReader r(j, "train");
  r.get("batch_size", c.batch_size);
  r.get("adversarial_batch_size", c.adversarial_batch_size);
  r.get("main_epochs", c.main_epochs);
  r.get("adversarial_epochs", c.adversarial_epochs);
  r.get("learning_rate", c.learning_rate);
  r.get("adversarial_learning_rate", c.adversarial_learning_rate);
  r.get("discriminator_learning_rate", c.discriminator_learning_rate);
  r.get("adversarial_beta1", c.adversarial_beta1);
  r.get("moment_loss_weight", c.moment_loss_weight);
  r.get("adversarial_early_stop", c.adversarial_early_stop);
  r.get("moment_mean_tolerance", c.moment_mean_tolerance);
  r.get("moment_variance_tolerance", c.moment_variance_tolerance);
  r.get("lambda_cls", c.lambda_cls);
  r.get("lambda_reg", c.lambda_reg);
  r.get("resample_period", c.resample_period);
  r.get("steps_per_epoch", c.steps_per_epoch);
  r.get("clip_stride", c.clip_stride);
  r.finish();
  return c;
}

RunConfig run_config_from_json(const json& j) {
  RunConfig c;
  SectionReader r(j, "config");
  r.get("seed", c.seed);
  if (const json* s = r.sub("synthetic")) c.synthetic = synthetic_from_json(*s);
  if (const json* s = r.sub("codec")) c.codec = codec_from_json(*s);
  if (const json* s = r.sub("model")) {
    if (s->contains("image")) throw ConfigError("model.image is derived from synthetic.image_size");
    c.model = model_from_json(*s);
  }
  if (const json* s = r.sub("train")) c.train = train_from_json(*s);
  if (const json* s = r.sub("metrics")) {
    SectionReader m(*s, "metrics");
    m.get("severity_weights", c.weights.values);
    m.get("normalize_weights", c.weights.normalized);
    m.finish();
  }
  if (const json* s = r.sub("paths")) {
    SectionReader p(*s, "paths");
    p.get("data_dir", c.paths.data_dir);
    p.get("run_dir", c.paths.run_dir);
    p.finish();
  }
  if (const json* s = r.sub("ablation")) {
    SectionReader a(*s, "ablation");
    a.get("lengths", c.ablation_lengths);
    a.finish();
  }
  r.finish();
  c.propagate_seed();
  c.validate();
  return c;
}

void RunConfig::propagate_seed() {
  synthetic.seed = seed;
  model.init_seed = seed;
  train.seed = seed;
  model.image = {1, synthetic.image_size, synthetic.image_size};
}

void RunConfig::validate() const {
  validated([&] {
    synthetic.validate();
    codec.validate();
    model.validate();
    train.validate();
    weights.validate();
    return 0;
  });
  if (ablation_lengths.empty()) throw ConfigError("ablation.lengths must not be empty");
  for (int k : ablation_lengths)
    if (k < 1) throw ConfigError("ablation.lengths entries must be >= 1");
}

void apply_env_overrides(json& config, char** environ_ptr) {
  if (!environ_ptr) return;
  for (char** e = environ_ptr; *e; ++e) {
    std::string_view entry(*e);
    if (entry.substr(0, kEnvPrefix.size()) != kEnvPrefix) continue;
    const auto eq = entry.find('=');
    if (eq == std::string_view::npos) continue;
    std::string name(entry.substr(kEnvPrefix.size(), eq - kEnvPrefix.size()));
    const std::string text(entry.substr(eq + 1));
    for (auto& ch : name) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    json value = json::parse(text, nullptr, false);
    if (value.is_discarded()) value = text;
    if (name == "seed") {
      config["seed"] = value;
      continue;
    }
    const auto us = name.find('_');
    if (us == std::string::npos) throw ConfigError("environment override " + std::string(entry.substr(0, eq)) +
                                                   " must name a section and a key");
    config[name.substr(0, us)][name.substr(us + 1)] = value;
  }
}

std::string config_checksum(const RunConfig& config) {
  const std::string text = to_json(config).dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return fmt::format("{:016x}", h);
}

}  // namespace bmx
