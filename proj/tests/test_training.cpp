#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "betamixer/training.hpp"

using namespace bmx;
namespace fs = std::filesystem;
using FMat = nn::Matrix<float>;

namespace {

struct Setup {
  SyntheticConfig synthetic;
  ModelConfig model;
  TrainConfig train;
  Dataset data;

  Setup() {
    synthetic.n_videos = 7;
    synthetic.frames_per_video = 24;
    synthetic.image_size = 16;
    synthetic.event_rate = {0.08, 0.08, 0.08};
    synthetic.min_duration = 4;
    synthetic.max_duration = 8;
    synthetic.min_gap = 2;
    synthetic.seed = 5;
    model.image = {1, 16, 16};
    model.backbone_channels = {4, 8};
    model.feature_dim = 8;
    model.generator_hidden = 8;
    model.discriminator_hidden = 8;
    model.depth = 8;
    model.layers = 1;
    model.heads = 2;
    model.ffn_dim = 16;
    model.clip_length = 3;
    model.init_seed = 5;
    train.batch_size = 8;
    train.adversarial_epochs = 2;
    train.adversarial_early_stop = false;
    train.main_epochs = 3;
    train.steps_per_epoch = 4;
    train.seed = 5;
    data = synthesize_dataset(synthetic);
  }
};

bool same_parameters(const Model& a, const Model& b) {
  for (const auto& p : a.parameters())
    if (!(p->value.data.array() == b.parameters().at(p->name).value.data.array()).all()) return false;
  for (const auto& p : a.buffers())
    if (!(p->value.data.array() == b.buffers().at(p->name).value.data.array()).all()) return false;
  return true;
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("bmx_train_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST_CASE("adversarial losses by hand") {
  nn::Graph<double> g;
  nn::Matrix<double> real(2, 1), fake(1, 1);
  real << 0.8, 0.6;
  fake << 0.3;
  const auto d = adversarial_loss(g.constant(real), g.constant(fake), AdversarialSide::Discriminator);
  CHECK(d.value()(0, 0) == doctest::Approx(-(std::log(0.8) + std::log(0.6) + std::log(0.7)) / 3));
  const auto gen = adversarial_loss(g.constant(real), g.constant(fake), AdversarialSide::Generator);
  CHECK(gen.value()(0, 0) == doctest::Approx(-std::log(0.3)));
}

TEST_CASE("batch moment penalty value and gradient by hand") {
  FMat x(3, 2);
  x << 1, 0, 2, 0, 6, 3;
  // Column means 3 and 1; biased variances 14/3 and 2.
  const double m0 = 3, m1 = 1, v0 = 14.0 / 3.0, v1 = 2;
  const double w = 0.5;
  nn::Parameter<float> px("x", nn::Tensor<float>::from_matrix(x));
  nn::Graph<float> g;
  auto p = batch_moment_penalty(g.param(px), w);
  const double expected = w * ((m0 * m0 + m1 * m1) / 2 + ((v0 - 1) * (v0 - 1) + (v1 - 1) * (v1 - 1)) / 2);
  CHECK(p.value()(0, 0) == doctest::Approx(expected).epsilon(1e-5));
  g.backward(p);
  const FMat& grad = px.grad.data;
  const double m[2] = {m0, m1}, v[2] = {v0, v1};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 2; ++j) {
      // d/dx_ij of w * (m_j^2 / d + (v_j - 1)^2 / d) with n = 3, d = 2.
      const double want = w * (2 * m[j] / 3 + 2 * (v[j] - 1) * 2 * (x(i, j) - m[j]) / 3) / 2;
      CHECK(grad(i, j) == doctest::Approx(want).epsilon(1e-4));
    }
  nn::Graph<float> g1;
  CHECK_THROWS_AS(batch_moment_penalty(g1.constant(FMat::Ones(1, 2)), 1.0), ShapeError);
}

TEST_CASE("sampled regression targets average to the grade means") {
  std::mt19937_64 rng(3);
  Eigen::MatrixXi grades(1, 6);
  grades << 0, 1, 2, 3, 4, 5;
  nn::Matrix<double> sum = nn::Matrix<double>::Zero(1, 6);
  const int n = 20000;
  for (int i = 0; i < n; ++i) sum += sample_regression_targets<double>(grades, GradeCodec{}, rng);
  for (int g = 0; g <= 5; ++g) CHECK(sum(0, g) / n == doctest::Approx(grade_to_mu(SeverityGrade(g))).epsilon(0.01));
  // A fresh draw each call.
  CHECK_FALSE(sample_regression_targets<double>(grades, GradeCodec{}, rng)
                  .isApprox(sample_regression_targets<double>(grades, GradeCodec{}, rng)));
}

TEST_CASE("moment summaries") {
  FMat x(4, 2);
  x << 1, 0, -1, 2, 1, 0, -1, 2;
  const auto m = summarize_moments(x);
  CHECK(m.frames == 4);
  CHECK(m.mean == doctest::Approx(0.5));
  CHECK(m.variance == doctest::Approx(4.0 / 3.0));
  CHECK(m.max_abs_mean == doctest::Approx(1.0));
  CHECK(m.fraction_in_band == doctest::Approx(0.0));
  CHECK_FALSE(m.within(0.1, 0.3));
  CHECK_THROWS(summarize_moments(FMat::Zero(1, 3)));
}

TEST_CASE("stage names and history format") {
  for (Stage s : {Stage::Adversarial, Stage::Main, Stage::Done}) CHECK(parse_stage(to_string(s)) == s);
  CHECK_THROWS_AS(parse_stage("warmup"), FormatError);
  const std::string csv = history_csv({{1, 0.5, 0.25, 0.75, 0.125}});
  CHECK(csv.rfind(std::string(kHistoryHeader), 0) == 0);
  CHECK(csv.find("1,0.500000,0.250000,0.750000,0.125000") != std::string::npos);
}

TEST_CASE("train config validation") {
  TrainConfig c;
  CHECK_NOTHROW(c.validate());
  c.batch_size = 0;
  CHECK_THROWS_AS(c.validate(), ValidationError);
  c = {};
  c.adversarial_batch_size = 1;
  CHECK_THROWS_AS(c.validate(), ValidationError);
  c = {};
  c.moment_loss_weight = -1.0;
  CHECK_THROWS_AS(c.validate(), ValidationError);
  c = {};
  c.moment_variance_tolerance = 0.0;
  CHECK_THROWS_AS(c.validate(), ValidationError);
}

TEST_CASE("calibration sets exact training-frame moments") {
  Setup s;
  Model m(s.model);
  calibrate_feature_norm(m, s.data);
  FMat frames(0, s.model.image.pixels());
  for (const auto& id : s.data.split.train) {
    const auto& v = s.data.video(id);
    FMat grown(frames.rows() + v.frames.rows(), frames.cols());
    grown << frames, v.frames;
    frames = grown;
  }
  const FMat raw = m.raw_backbone_features(frames);
  const auto stored = m.feature_moments();
  const auto exact = nn::batch_moments<float>(raw);
  CHECK(stored.mean.isApprox(exact.mean, 1e-4f));
  CHECK(stored.variance.isApprox(exact.variance, 1e-3f));
}

TEST_CASE("training runs are deterministic and checkpoints resume exactly") {
  Setup s;
  const auto dir = scratch("resume");

  Model a(s.model);
  TrainState sa = initial_state(s.train, s.model);
  std::vector<std::string> stages;
  train(a, s.data, s.train, GradeCodec{}, sa, [&](const Model& m, const TrainState& st) {
    stages.push_back(std::string(to_string(st.stage)) + ":" + std::to_string(st.epoch));
    if (st.stage == Stage::Main && st.epoch == 1) save_checkpoint(dir / "mid.bmxc", m, s.train, GradeCodec{}, st);
  });
  CHECK(sa.stage == Stage::Done);
  CHECK(sa.history.size() == 3);
  CHECK(stages == std::vector<std::string>{"adversarial:1", "main:0", "main:1", "main:2", "done:3"});

  Model b(s.model);
  TrainState sb = initial_state(s.train, s.model);
  train(b, s.data, s.train, GradeCodec{}, sb);
  CHECK(same_parameters(a, b));
  CHECK(history_csv(sa.history) == history_csv(sb.history));

  Checkpoint ck = load_checkpoint(dir / "mid.bmxc");
  CHECK(ck.state.stage == Stage::Main);
  CHECK(ck.state.epoch == 1);
  CHECK(ck.train.main_epochs == 3);
  CHECK(ck.state.features_calibrated);
  train(*ck.model, s.data, ck.train, ck.codec, ck.state);
  CHECK(same_parameters(a, *ck.model));
  CHECK(history_csv(sa.history) == history_csv(ck.state.history));

  const auto ra = evaluate(a, s.data, s.data.split.test, GradeCodec{});
  const auto rc = evaluate(*ck.model, s.data, s.data.split.test, GradeCodec{});
  CHECK(report_to_json(ra) == report_to_json(rc));
  nn::Index windows = 0;
  for (const auto& id : s.data.split.test) windows += s.data.video(id).num_frames() - s.model.clip_length + 1;
  CHECK(ra.frames == windows);
  fs::remove_all(dir);
}

TEST_CASE("checkpoint round trip preserves everything") {
  Setup s;
  const auto dir = scratch("ckpt");
  Model m(s.model);
  TrainState st = initial_state(s.train, s.model);
  st.stage = Stage::Main;
  st.epoch = 2;
  st.history = {{1, 0.5, 0.25, 0.5, 0.1}, {2, 0.4, 0.2, 0.6, 0.09}};
  st.rng.discard(17);
  m.parameters().at("encoder.tokens").value.data(0, 0) = 1.25f;
  GradeCodec codec;
  codec.sigma = 0.04;
  save_checkpoint(dir / "c.bmxc", m, s.train, codec, st);
  auto back = load_checkpoint(dir / "c.bmxc");
  CHECK(same_parameters(m, *back.model));
  CHECK(back.state.stage == Stage::Main);
  CHECK(back.state.epoch == 2);
  CHECK(history_csv(back.state.history) == history_csv(st.history));
  CHECK(back.state.rng() == st.rng());
  CHECK(back.codec.sigma == 0.04);
  CHECK(back.model->config().clip_length == s.model.clip_length);

  std::ofstream(dir / "bad.bmxc") << "not a checkpoint";
  CHECK_THROWS_AS(load_checkpoint(dir / "bad.bmxc"), FormatError);
  CHECK_THROWS_AS(load_checkpoint(dir / "missing.bmxc"), IoError);
  fs::remove_all(dir);
}

TEST_CASE("adopting a feature stage copies backbone, generator and statistics") {
  Setup s;
  Model src(s.model);
  calibrate_feature_norm(src, s.data);
  ModelConfig other = s.model;
  other.clip_length = 1;
  other.init_seed = 99;
  Model dst(other);
  adopt_feature_stage(dst, src);
  for (const auto& p : src.parameters()) {
    const bool feature_side = p->name.rfind("backbone.", 0) == 0 || p->name.rfind("generator.", 0) == 0 ||
                              p->name.rfind("discriminator.", 0) == 0;
    if (feature_side) CHECK((p->value.data.array() == dst.parameters().at(p->name).value.data.array()).all());
  }
  CHECK(dst.feature_moments().mean.isApprox(src.feature_moments().mean));
  const FMat frames = s.data.videos.front().frames.topRows(4);
  CHECK(dst.frame_features(frames).isApprox(src.frame_features(frames)));
}

TEST_CASE("genless training skips the adversarial stage") {
  Setup s;
  s.model.genless = true;
  s.train.main_epochs = 1;
  Model m(s.model);
  const auto gen_before = m.parameters().at("generator.fc1.weight").value.data;
  TrainState st = initial_state(s.train, s.model);
  std::vector<Stage> seen;
  train(m, s.data, s.train, GradeCodec{}, st, [&](const Model&, const TrainState& t) { seen.push_back(t.stage); });
  CHECK(seen == std::vector<Stage>{Stage::Done});
  CHECK((m.parameters().at("generator.fc1.weight").value.data.array() == gen_before.array()).all());
}
