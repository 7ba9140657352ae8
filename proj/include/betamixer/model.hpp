#pragma once

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "betamixer/dataset.hpp"
#include "betamixer/nn/ops.hpp"
#include "betamixer/nn/parameters.hpp"
#include "betamixer/prediction.hpp"

namespace bmx {

struct ModelConfig {
  ImageGeometry image{1, 32, 32};
  /// Output channels of the conv+pool stages; each stage halves the resolution.
  std::vector<int> backbone_channels = {8, 16, 32};
  int feature_dim = 128;
  int generator_hidden = 128;
  int discriminator_hidden = 64;
  int depth = 128;
  int layers = 4;
  int heads = 4;
  int ffn_dim = 256;
  int clip_length = 5;
  /// Bypass the normalized-feature generator (and the adversarial stage).
  bool genless = false;
  /// The discriminator also sees each batch's per-dimension mean and spread.
  bool discriminator_batch_stats = true;
  /// Three independent presence outputs; false gives one IAE-vs-normal output shared by all types.
  bool multi_label = true;
  std::uint64_t init_seed = 0;

  void validate() const {
    if (image.channels < 1 || image.height < 1 || image.width < 1)
      throw ValidationError("image", "dimensions must be positive");
    if (backbone_channels.empty()) throw ValidationError("backbone_channels", "need at least one stage");
    const int scale = 1 << backbone_channels.size();
    if (image.height % scale != 0 || image.width % scale != 0)
      throw ValidationError("image", "size must be divisible by 2^stages = " + std::to_string(scale));
    for (int c : backbone_channels)
      if (c < 1) throw ValidationError("backbone_channels", "must be positive");
    if (feature_dim < 1 || generator_hidden < 1 || discriminator_hidden < 1 || ffn_dim < 1)
      throw ValidationError("feature_dim", "layer widths must be positive");
    if (depth < 1 || heads < 1 || depth % heads != 0)
      throw ValidationError("depth", "must be positive and divisible by heads");
    if (layers < 1) throw ValidationError("layers", "must be >= 1");
    if (clip_length < 1) throw ValidationError("clip_length", "must be >= 1");
  }

  nn::Index backbone_flat_dim() const {
    const int scale = 1 << backbone_channels.size();
    return static_cast<nn::Index>(backbone_channels.back()) * (image.height / scale) * (image.width / scale);
  }
};

/// Which parameter groups a recorded pass routes gradients to.
struct Trainable {
  bool backbone = false;
  bool generator = false;
  bool discriminator = false;
  bool encoder = false;
  bool classifier = false;
  bool regressor = false;

  static Trainable none() { return {}; }
  static Trainable all() { return {true, true, true, true, true, true}; }
  static Trainable feature_side() { return {true, true, false, false, false, false}; }
  static Trainable discriminator_only() { return {false, false, true, false, false, false}; }
  static Trainable head_side() { return {false, false, false, true, true, true}; }
};

/// Backbone, normalized-feature generator, discriminator, transformer encoder
/// with one regression token per event type, classifier and regression heads.
template <typename Scalar>
class BetaMixer {
 public:
  using Graph = nn::Graph<Scalar>;
  using Var = nn::Var<Scalar>;
  using Mat = nn::Matrix<Scalar>;
  using Index = nn::Index;

  struct Encoded {
    Var tokens;  ///< [batch * 3, depth], one row per (clip, event type)
    Var frames;  ///< [batch * k, depth]
  };
  struct Heads {
    Var presence;  ///< [batch, 3]
    Var severity;  ///< [batch, 3]
  };

  explicit BetaMixer(ModelConfig config) : config_(std::move(config)) {
    config_.validate();
    init_parameters();
  }

  const ModelConfig& config() const { return config_; }
  nn::ParameterStore<Scalar>& parameters() { return params_; }
  const nn::ParameterStore<Scalar>& parameters() const { return params_; }

  std::vector<nn::Parameter<Scalar>*> backbone_parameters() { return params_.with_prefix({"backbone."}); }
  std::vector<nn::Parameter<Scalar>*> generator_parameters() { return params_.with_prefix({"generator."}); }
  std::vector<nn::Parameter<Scalar>*> discriminator_parameters() { return params_.with_prefix({"discriminator."}); }
  std::vector<nn::Parameter<Scalar>*> head_side_parameters() {
    return params_.with_prefix({"encoder.", "classifier.", "regressor."});
  }

  // -------------------------------------------------------------------------
  // Building blocks. Every block records onto the caller's graph.

  /// images: [N, C*H*W] -> [N, feature_dim]. Training passes normalise
  /// with the batch's statistics (reported through `moments`); otherwise the
  /// stored feature statistics are used.
  Var extract_features(Graph& g, const Mat& images, bool train = false,
                       nn::BatchMoments<Scalar>* moments = nullptr) const {
    Var x = backbone_trunk(g, images, train);
    if (train) return nn::batch_norm(x, use(g, "backbone.norm.gain", true), use(g, "backbone.norm.bias", true), moments);
    return nn::batch_norm(x, use(g, "backbone.norm.gain", false), use(g, "backbone.norm.bias", false),
                          feature_moments());
  }

  /// Backbone output before normalisation, computed in chunks.
  Mat raw_backbone_features(const FrameMatrix& images, Index chunk = 64) const {
    Mat out(images.rows(), config_.feature_dim);
    for (Index start = 0; start < images.rows(); start += chunk) {
      const Index n = std::min(chunk, images.rows() - start);
      Graph g;
      Mat block = images.middleRows(start, n).template cast<Scalar>();
      out.middleRows(start, n) = backbone_trunk(g, block, false).value();
    }
    return out;
  }

  nn::BatchMoments<Scalar> feature_moments() const {
    return {as_row(buffers_.at("backbone.norm.mean")), as_row(buffers_.at("backbone.norm.variance"))};
  }
  void set_feature_moments(const nn::BatchMoments<Scalar>& m) {
    if (m.mean.size() != config_.feature_dim || m.variance.size() != config_.feature_dim)
      throw ShapeError("set_feature_moments: expected " + std::to_string(config_.feature_dim) + " columns");
    buffers_.at("backbone.norm.mean").value.data = m.mean;
    buffers_.at("backbone.norm.variance").value.data = m.variance;
  }

  /// Non-trainable state (feature statistics).
  nn::ParameterStore<Scalar>& buffers() { return buffers_; }
  const nn::ParameterStore<Scalar>& buffers() const { return buffers_; }

  Var generate_normalized(Graph& g, const Var& features, bool train = false) const {
    Var h = nn::relu(dense(g, "generator.fc1", features, train));
    return dense(g, "generator.fc2", h, train);
  }

  /// Real-vs-generated probability per row, [N, 1].
  Var discriminate(Graph& g, const Var& features, bool train = false) const {
    const Var in = config_.discriminator_batch_stats ? nn::append_batch_moments(features) : features;
    Var h = nn::relu(dense(g, "discriminator.fc1", in, train));
    h = nn::relu(dense(g, "discriminator.fc2", h, train));
    return nn::sigmoid(dense(g, "discriminator.fc3", h, train));
  }

  /// Features handed to the encoder: generator output, or raw backbone
  /// features in the genless variant.
  Var encoder_inputs(Graph& g, const Mat& images, const Trainable& t = {}) const {
    Var f = extract_features(g, images, t.backbone);
    return config_.genless ? f : generate_normalized(g, f, t.generator);
  }

  /// clip_features: [batch * k, feature_dim] with each clip's frames contiguous and in time order.
  Encoded encode(Graph& g, const Var& clip_features, Index batch, bool train = false) const {
    const Index k = config_.clip_length;
    if (clip_features.rows() != batch * k || clip_features.cols() != config_.feature_dim)
      throw ShapeError("encode: expected [" + std::to_string(batch * k) + "," + std::to_string(config_.feature_dim) +
                       "] clip features, got " + nn::shape_string(clip_features.shape()));
    Var x = dense(g, "encoder.input", clip_features, train);
    x = x + nn::tile_rows(use(g, "encoder.position", train), batch);
    Var t = nn::tile_rows(use(g, "encoder.tokens", train), batch);
    const Scalar scale = Scalar(1) / std::sqrt(static_cast<Scalar>(config_.depth / config_.heads));
    for (int l = 0; l < config_.layers; ++l) {
      const std::string pre = "encoder.layer" + std::to_string(l) + ".";
      // Frames attend among themselves only.
      Var h = norm(g, pre + "self_ln", x, train);
      Var a = nn::scaled_dot_attention(dense(g, pre + "self_q", h, train), dense(g, pre + "self_k", h, train),
                                       dense(g, pre + "self_v", h, train), scale, batch, config_.heads)
                  .output;
      x = x + dense(g, pre + "self_out", a, train);
      x = x + feed_forward(g, pre + "ffn", norm(g, pre + "ffn_ln", x, train), train);
      // Each token queries its clip's frames; tokens never see each other.
      Var tq = norm(g, pre + "cross_ln_q", t, train);
      Var kv = norm(g, pre + "cross_ln_kv", x, train);
      Var c = nn::scaled_dot_attention(dense(g, pre + "cross_q", tq, train), dense(g, pre + "cross_k", kv, train),
                                       dense(g, pre + "cross_v", kv, train), scale, batch, config_.heads)
                  .output;
      t = t + dense(g, pre + "cross_out", c, train);
      t = t + feed_forward(g, pre + "token_ffn", norm(g, pre + "token_ffn_ln", t, train), train);
    }
    return {norm(g, "encoder.token_ln", t, train), norm(g, "encoder.frame_ln", x, train)};
  }

  /// Pointwise projection, mean pooling over each clip's frames, per-type sigmoid.
  Var classify(Graph& g, const Var& frame_outputs, Index batch, bool train = false) const {
    Var h = nn::relu(dense(g, "classifier.conv", frame_outputs, train));
    Var pooled = nn::group_mean(h, frame_outputs.rows() / batch);
    Var p = nn::sigmoid(dense(g, "classifier.out", pooled, train));
    if (config_.multi_label) return p;
    return nn::concat_cols<Scalar>({p, p, p});
  }

  /// Head t reads only token t.
  Var regress(Graph& g, const Var& token_outputs, Index batch, bool train = false) const {
    std::vector<Var> cols;
    for (EventKind kind : kAllEventKinds) {
      std::vector<Index> rows;
      for (Index b = 0; b < batch; ++b) rows.push_back(b * kNumEventKinds + index_of(kind));
      Var tok = nn::gather_rows(token_outputs, std::move(rows));
      cols.push_back(nn::sigmoid(dense(g, "regressor." + std::string(to_string(kind)), tok, train)));
    }
    return nn::concat_cols(cols);
  }

  Heads heads(Graph& g, const Var& clip_features, Index batch, const Trainable& t = {}) const {
    const Encoded e = encode(g, clip_features, batch, t.encoder);
    return {classify(g, e.frames, batch, t.classifier), regress(g, e.tokens, batch, t.regressor)};
  }

  // -------------------------------------------------------------------------
  // Inference. No parameter or other model state changes.

  /// Encoder inputs for a stack of frames, computed in chunks.
  Mat frame_features(const FrameMatrix& images, Index chunk = 64) const {
    Mat out(images.rows(), config_.feature_dim);
    for (Index start = 0; start < images.rows(); start += chunk) {
      const Index n = std::min(chunk, images.rows() - start);
      Graph g;
      Mat block = images.middleRows(start, n).template cast<Scalar>();
      out.middleRows(start, n) = encoder_inputs(g, block).value();
    }
    return out;
  }

  /// clip_features: [batch * k, feature_dim].
  std::vector<PredictionRecord> predict(const Mat& clip_features, Index batch) const {
    Graph g;
    const Heads h = heads(g, g.constant(clip_features), batch);
    std::vector<PredictionRecord> out(static_cast<std::size_t>(batch));
    for (Index b = 0; b < batch; ++b)
      for (std::size_t t = 0; t < kNumEventKinds; ++t) {
        const auto ti = static_cast<Index>(t);
        out[static_cast<std::size_t>(b)].presence[t] = std::clamp(static_cast<double>(h.presence.value()(b, ti)), 0.0, 1.0);
        out[static_cast<std::size_t>(b)].severity[t] = std::clamp(static_cast<double>(h.severity.value()(b, ti)), 0.0, 1.0);
      }
    return out;
  }

  PredictionRecord forward(const ClipSample& clip) const {
    if (clip.length != config_.clip_length)
      throw ShapeError("forward: clip has " + std::to_string(clip.length) + " frames, model expects " +
                       std::to_string(config_.clip_length));
    const FrameMatrix images = clip.images();
    auto rec = predict(frame_features(images), 1).front();
    rec.video_id = clip.video->id;
    rec.frame_index = clip.end_frame;
    return rec;
  }

 private:
  static nn::RowVector<Scalar> as_row(const nn::Parameter<Scalar>& p) { return p.value.data; }

  Var backbone_trunk(Graph& g, const Mat& images, bool train) const {
    const auto& img = config_.image;
    if (images.cols() != img.pixels())
      throw ShapeError("extract_features: frames have " + std::to_string(images.cols()) + " pixels, expected " +
                       std::to_string(img.pixels()));
    Var x = g.constant(nn::Tensor<Scalar>({images.rows(), img.channels, img.height, img.width}, images));
    for (std::size_t s = 0; s < config_.backbone_channels.size(); ++s) {
      const std::string pre = "backbone.conv" + std::to_string(s);
      x = nn::conv2d(x, use(g, pre + ".weight", train), use(g, pre + ".bias", train), 1, 1);
      x = nn::avg_pool2d(nn::relu(x), 2);
    }
    x = nn::reshape(x, {images.rows(), config_.backbone_flat_dim()});
    return dense(g, "backbone.proj", x, train);
  }

  Var use(Graph& g, const std::string& name, bool train) const {
    // Gradients reach a parameter only through Graph::backward on a training pass.
    auto& p = const_cast<nn::Parameter<Scalar>&>(params_.at(name));
    return g.use(p, train);
  }

  Var dense(Graph& g, const std::string& name, const Var& x, bool train) const {
    return nn::linear(x, use(g, name + ".weight", train), use(g, name + ".bias", train));
  }

  Var norm(Graph& g, const std::string& name, const Var& x, bool train) const {
    return nn::layer_norm(x, use(g, name + ".gain", train), use(g, name + ".bias", train));
  }

  Var feed_forward(Graph& g, const std::string& name, const Var& x, bool train) const {
    return dense(g, name + "2", nn::relu(dense(g, name + "1", x, train)), train);
  }

  void add_dense(const std::string& name, Index in, Index out, std::mt19937_64& rng) {
    params_.add(name + ".weight", nn::fan_in_uniform<Scalar>({in, out}, in, rng));
    params_.add(name + ".bias", nn::Tensor<Scalar>({out}));
  }

  void add_norm(const std::string& name, Index width) {
    params_.add(name + ".gain", nn::constant_init<Scalar>({width}, Scalar(1)));
    params_.add(name + ".bias", nn::Tensor<Scalar>({width}));
  }

  void init_parameters() {
    std::mt19937_64 rng(config_.init_seed);
    const auto& c = config_;
    Index in_ch = c.image.channels;
    for (std::size_t s = 0; s < c.backbone_channels.size(); ++s) {
      const std::string pre = "backbone.conv" + std::to_string(s);
      const Index out_ch = c.backbone_channels[s];
      params_.add(pre + ".weight", nn::he_uniform<Scalar>({out_ch, in_ch, 3, 3}, in_ch * 9, rng));
      params_.add(pre + ".bias", nn::Tensor<Scalar>({out_ch}));
      in_ch = out_ch;
    }
    params_.add("backbone.proj.weight", nn::he_uniform<Scalar>({c.backbone_flat_dim(), c.feature_dim}, c.backbone_flat_dim(), rng));
    params_.add("backbone.proj.bias", nn::Tensor<Scalar>({c.feature_dim}));
    add_norm("backbone.norm", c.feature_dim);
    buffers_.add("backbone.norm.mean", nn::Tensor<Scalar>({c.feature_dim}));
    buffers_.add("backbone.norm.variance", nn::constant_init<Scalar>({c.feature_dim}, Scalar(1)));

    add_dense("generator.fc1", c.feature_dim, c.generator_hidden, rng);
    add_dense("generator.fc2", c.generator_hidden, c.feature_dim, rng);

    add_dense("discriminator.fc1", (c.discriminator_batch_stats ? 3 : 1) * c.feature_dim, c.discriminator_hidden, rng);
    add_dense("discriminator.fc2", c.discriminator_hidden, c.discriminator_hidden, rng);
    add_dense("discriminator.fc3", c.discriminator_hidden, 1, rng);

    add_dense("encoder.input", c.feature_dim, c.depth, rng);
    params_.add("encoder.position", nn::positional_embedding<Scalar>(c.clip_length, c.depth, rng));
    params_.add("encoder.tokens", nn::normal_init<Scalar>({kNumEventKinds, c.depth}, 0.02, rng));
    for (int l = 0; l < c.layers; ++l) {
      const std::string pre = "encoder.layer" + std::to_string(l) + ".";
      add_norm(pre + "self_ln", c.depth);
      for (const char* n : {"self_q", "self_k", "self_v", "self_out"}) add_dense(pre + n, c.depth, c.depth, rng);
      add_norm(pre + "ffn_ln", c.depth);
      add_dense(pre + "ffn1", c.depth, c.ffn_dim, rng);
      add_dense(pre + "ffn2", c.ffn_dim, c.depth, rng);
      add_norm(pre + "cross_ln_q", c.depth);
      add_norm(pre + "cross_ln_kv", c.depth);
      for (const char* n : {"cross_q", "cross_k", "cross_v", "cross_out"}) add_dense(pre + n, c.depth, c.depth, rng);
      add_norm(pre + "token_ffn_ln", c.depth);
      add_dense(pre + "token_ffn1", c.depth, c.ffn_dim, rng);
      add_dense(pre + "token_ffn2", c.ffn_dim, c.depth, rng);
    }
    add_norm("encoder.token_ln", c.depth);
    add_norm("encoder.frame_ln", c.depth);

    add_dense("classifier.conv", c.depth, c.depth, rng);
    add_dense("classifier.out", c.depth, c.multi_label ? kNumEventKinds : 1, rng);
    for (EventKind kind : kAllEventKinds) add_dense("regressor." + std::string(to_string(kind)), c.depth, 1, rng);
  }

  ModelConfig config_;
  nn::ParameterStore<Scalar> params_;
  nn::ParameterStore<Scalar> buffers_;
};

}  // namespace bmx
