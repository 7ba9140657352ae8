#pragma once

#include <cmath>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "betamixer/dataset.hpp"
#include "betamixer/metrics.hpp"
#include "betamixer/model.hpp"
#include "betamixer/nn/adam.hpp"

namespace bmx {

struct TrainConfig {
  int batch_size = 32;
  /// Frames per generator/discriminator step; 0 uses batch_size.
  int adversarial_batch_size = 0;
  int main_epochs = 30;
  /// Upper bound; the stage ends early once the moment check passes.
  int adversarial_epochs = 20;
  double learning_rate = 5e-5;
  /// Adam settings for the generator/discriminator game.
  double adversarial_learning_rate = 2e-4;
  double discriminator_learning_rate = 2e-4;
  double adversarial_beta1 = 0.5;
  /// Weight of a batch moment-matching term (squared per-dimension mean plus
  /// squared variance error) added to the generator's adversarial loss.
  double moment_loss_weight = 0.0;
  /// Early-stop band for the generator's dimension-averaged output moments,
  /// measured on the training frames after each adversarial epoch.
  bool adversarial_early_stop = true;
  double moment_mean_tolerance = 0.05;
  double moment_variance_tolerance = 0.1;
  double lambda_cls = 1.0;
  double lambda_reg = 1.0;
  /// Batches between regression-target redraws.
  int resample_period = 1;
  /// Main-stage batches per epoch; 0 means one pass worth of training clips.
  int steps_per_epoch = 0;
  /// Spacing of the clip end frames used for training.
  int clip_stride = 1;
  std::uint64_t seed = 0;

  void validate() const;
};

// ---------------------------------------------------------------------------
// Losses

enum class AdversarialSide { Discriminator, Generator };

/// Discriminator side: BCE with real = 1 and fake = 0, averaged over all
/// scored vectors. Generator side: BCE pushing fake toward 1; `on_real` is unused.
template <typename Scalar>
nn::Var<Scalar> adversarial_loss(const nn::Var<Scalar>& on_real, const nn::Var<Scalar>& on_fake, AdversarialSide side) {
  using Mat = nn::Matrix<Scalar>;
  if (side == AdversarialSide::Generator)
    return nn::binary_cross_entropy(on_fake, Mat(Mat::Ones(on_fake.rows(), on_fake.cols())));
  const Scalar n_real = static_cast<Scalar>(on_real.value().size());
  const Scalar n_fake = static_cast<Scalar>(on_fake.value().size());
  const Scalar n = n_real + n_fake;
  auto real = nn::binary_cross_entropy(on_real, Mat(Mat::Ones(on_real.rows(), on_real.cols())));
  auto fake = nn::binary_cross_entropy(on_fake, Mat(Mat::Zero(on_fake.rows(), on_fake.cols())));
  return nn::scale(real, n_real / n) + nn::scale(fake, n_fake / n);
}

/// weight * (mean_j m_j^2 + mean_j (v_j - 1)^2), where m and v are the
/// per-column mean and biased variance of x over its rows.
nn::Var<float> batch_moment_penalty(const nn::Var<float>& x, double weight);

/// Mean BCE over batch and event types.
template <typename Scalar>
nn::Var<Scalar> classification_loss(const nn::Var<Scalar>& probs, const nn::Matrix<Scalar>& presence) {
  return nn::binary_cross_entropy(probs, presence);
}

/// Fresh Beta draw per (sample, type) for the given grades.
template <typename Scalar>
nn::Matrix<Scalar> sample_regression_targets(const Eigen::MatrixXi& grades, const GradeCodec& codec,
                                             std::mt19937_64& rng) {
  nn::Matrix<Scalar> t(grades.rows(), grades.cols());
  for (Eigen::Index r = 0; r < grades.rows(); ++r)
    for (Eigen::Index c = 0; c < grades.cols(); ++c)
      t(r, c) = static_cast<Scalar>(sample_target(SeverityGrade(grades(r, c)), codec, rng));
  return t;
}

template <typename Scalar>
nn::Var<Scalar> sampled_regression_loss(const nn::Var<Scalar>& severities, const Eigen::MatrixXi& grades,
                                        const GradeCodec& codec, std::mt19937_64& rng) {
  return nn::mse_loss(severities, sample_regression_targets<Scalar>(grades, codec, rng));
}

// ---------------------------------------------------------------------------
// Training state

enum class Stage { Adversarial, Main, Done };
std::string_view to_string(Stage stage);
Stage parse_stage(std::string_view text);

struct EpochRecord {
  int epoch = 0;
  double loss_cls = 0.0;
  double loss_reg = 0.0;
  double val_f1 = 0.0;
  double val_mse = 0.0;
};

inline constexpr std::string_view kHistoryHeader = "epoch,loss_cls,loss_reg,val_f1,val_mse";
std::string history_csv(const std::vector<EpochRecord>& history);

/// Everything besides the parameters needed to continue a run.
struct TrainState {
  Stage stage = Stage::Adversarial;
  /// Completed epochs of the current stage.
  int epoch = 0;
  /// Whether the backbone's feature statistics have been measured on the training frames.
  bool features_calibrated = false;
  std::mt19937_64 rng;
  nn::AdamState<float> feature_opt;
  nn::AdamState<float> discriminator_opt;
  nn::AdamState<float> main_opt;
  std::vector<EpochRecord> history;
};

TrainState initial_state(const TrainConfig& config, const ModelConfig& model);

using Model = BetaMixer<float>;
using EpochHook = std::function<void(const Model&, const TrainState&)>;

/// Encoder inputs for every frame of the listed videos, keyed by video id.
using FeatureCache = std::map<std::string, nn::Matrix<float>>;
FeatureCache compute_features(const Model& model, const Dataset& data, const std::vector<std::string>& ids);

/// Sets the backbone's stored feature statistics to the exact moments over
/// all training frames.
void calibrate_feature_norm(Model& model, const Dataset& data);

/// Moments of the encoder inputs over a set of frames.
struct MomentSummary {
  nn::Index frames = 0;
  /// Dimension averages of the per-dimension mean and unbiased variance.
  double mean = 0.0;
  double variance = 0.0;
  double mean_abs_mean = 0.0;
  double max_abs_mean = 0.0;
  double min_variance = 0.0;
  double max_variance = 0.0;
  /// Share of dimensions whose own mean and variance both lie in the band.
  double fraction_in_band = 0.0;

  bool within(double mean_tolerance, double variance_tolerance) const {
    return std::abs(mean) <= mean_tolerance && std::abs(variance - 1.0) <= variance_tolerance;
  }
};

MomentSummary summarize_moments(const nn::Matrix<float>& features, double mean_tolerance = 0.1,
                                double variance_tolerance = 0.3);
MomentSummary feature_moments(const Model& model, const Dataset& data, const std::vector<std::string>& ids);

void run_adversarial_stage(Model& model, const Dataset& data, const TrainConfig& config, TrainState& state,
                           const EpochHook& hook = {});

/// Copies the backbone, generator, discriminator and feature statistics from
/// `src`, so one adversarial stage can serve models that differ only in
/// their encoder or heads.
void adopt_feature_stage(Model& dst, const Model& src);

void run_main_stage(Model& model, const Dataset& data, const TrainConfig& config, const GradeCodec& codec,
                    TrainState& state, const EpochHook& hook = {});

/// Runs whatever remains of both stages; genless models skip the adversarial stage.
void train(Model& model, const Dataset& data, const TrainConfig& config, const GradeCodec& codec, TrainState& state,
           const EpochHook& hook = {});

/// Predictions for every frame that has a full k-frame window.
std::vector<VideoEvaluation> predict_videos(const Model& model, const Dataset& data, const FeatureCache& features,
                                            const std::vector<std::string>& ids, int batch_size = 64);

MetricsReport evaluate(const Model& model, const Dataset& data, const std::vector<std::string>& ids,
                       const GradeCodec& codec, const SeverityWeights& weights = {});

// ---------------------------------------------------------------------------
// Checkpoints

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  std::unique_ptr<Model> model;
  TrainConfig train;
  GradeCodec codec;
  TrainState state;
};

/// "BMXC", u32 version, u32-length JSON header, then named f32 blocks.
/// Written to a temporary file and renamed into place.
void save_checkpoint(const std::filesystem::path& path, const Model& model, const TrainConfig& train,
                     const GradeCodec& codec, const TrainState& state);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace bmx
