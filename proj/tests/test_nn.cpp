#include <doctest.h>

#include <cmath>

#include "betamixer/nn/adam.hpp"
#include "gradient_suite.hpp"

using namespace bmx;
using namespace bmx::testing;

TEST_CASE("every primitive matches central differences over 20 seeds") {
  for (const auto& c : primitive_cases()) {
    double worst = 0.0;
    for (std::uint64_t seed = 1; seed <= 20; ++seed) worst = std::max(worst, c.run(seed).max_relative_error);
    CAPTURE(c.name);
    CHECK(worst < 1e-3);
  }
}

TEST_CASE("composed model gradients match central differences") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    CAPTURE(seed);
    const auto full = composed_model_check(seed, false);
    CHECK(full.coordinates_checked > 100);
    CHECK(full.max_relative_error < 1e-3);
    CHECK(composed_model_check(seed, true).max_relative_error < 1e-3);
  }
}

TEST_CASE("frozen parameters receive no gradient") {
  P a("a", nn::Tensor<D>({2, 2}, Mat::Constant(2, 2, 2.0)));
  P b("b", nn::Tensor<D>({2, 2}, Mat::Constant(2, 2, 3.0)));
  G g;
  g.backward(nn::sum(nn::mul(g.param(a), g.frozen(b))));
  CHECK(a.grad.data.isApprox(Mat::Constant(2, 2, 3.0)));
  CHECK(b.grad.data.isZero());
}

TEST_CASE("gradients accumulate across uses of one parameter") {
  P a("a", nn::Tensor<D>({1, 3}, Mat::Constant(1, 3, 2.0)));
  G g;
  V x = g.param(a);
  g.backward(nn::sum(nn::mul(x, x) + x));
  CHECK(a.grad.data.isApprox(Mat::Constant(1, 3, 5.0)));
}

TEST_CASE("backward rejects non-scalar losses") {
  P a("a", nn::Tensor<D>({2, 2}));
  G g;
  CHECK_THROWS_AS(g.backward(g.param(a)), ShapeError);
}

TEST_CASE("shape mismatches throw") {
  G g;
  V a = g.constant(Mat(Mat::Zero(2, 3)));
  V b = g.constant(Mat(Mat::Zero(2, 3)));
  CHECK_THROWS_AS(nn::matmul(a, b), ShapeError);
  CHECK_THROWS_AS(nn::mse_loss(a, Mat(Mat::Zero(3, 2))), ShapeError);
  CHECK_THROWS_AS(nn::scaled_dot_attention(a, b, b, 1.0, 1, 2), ShapeError);
}

TEST_CASE("attention matches a hand-computed softmax average") {
  G g;
  Mat q(1, 2), k(2, 2), v(2, 2);
  q << 1, 0;
  k << 1, 0, 0, 1;
  v << 1, 2, 3, 4;
  const auto r = nn::scaled_dot_attention(g.constant(q), g.constant(k), g.constant(v), 1.0);
  const double w0 = std::exp(1.0) / (std::exp(1.0) + 1.0);
  CHECK((*r.weights)(0, 0) == doctest::Approx(w0));
  CHECK(r.output.value()(0, 0) == doctest::Approx(w0 * 1 + (1 - w0) * 3));
  CHECK(r.output.value()(0, 1) == doctest::Approx(w0 * 2 + (1 - w0) * 4));
}

TEST_CASE("attention groups and heads are isolated") {
  std::mt19937_64 rng(3);
  const Mat q = random_matrix(4, 4, rng), k = random_matrix(6, 4, rng), v = random_matrix(6, 4, rng);
  Mat k2 = k, v2 = v;
  k2.bottomRows(3).setRandom();
  v2.bottomRows(3).setRandom();
  G g;
  const auto a = nn::scaled_dot_attention(g.constant(q), g.constant(k), g.constant(v), 0.5, 2, 2);
  const auto b = nn::scaled_dot_attention(g.constant(q), g.constant(k2), g.constant(v2), 0.5, 2, 2);
  CHECK(a.output.value().topRows(2).isApprox(b.output.value().topRows(2)));
  CHECK_FALSE(a.output.value().bottomRows(2).isApprox(b.output.value().bottomRows(2)));

  // Head 0 reads only the first half of the columns.
  Mat v3 = v;
  v3.rightCols(2).setZero();
  const auto c = nn::scaled_dot_attention(g.constant(q), g.constant(k), g.constant(v3), 0.5, 2, 2);
  CHECK(a.output.value().leftCols(2).isApprox(c.output.value().leftCols(2)));
  CHECK(c.output.value().rightCols(2).isZero());
}

TEST_CASE("conv2d matches a direct sum") {
  std::mt19937_64 rng(11);
  const auto x = random_tensor({1, 2, 4, 4}, rng);
  const auto w = random_tensor({3, 2, 3, 3}, rng);
  const auto b = random_tensor({3}, rng);
  G g;
  const Mat y = nn::conv2d(g.constant(x), g.constant(w), g.constant(b), 1, 1).value();
  auto at = [&](int c, int i, int j) { return (i < 0 || j < 0 || i >= 4 || j >= 4) ? 0.0 : x.raw()[(c * 4 + i) * 4 + j]; };
  for (int o = 0; o < 3; ++o)
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 4; ++j) {
        double s = b.raw()[o];
        for (int c = 0; c < 2; ++c)
          for (int di = 0; di < 3; ++di)
            for (int dj = 0; dj < 3; ++dj) s += w.raw()[((o * 2 + c) * 3 + di) * 3 + dj] * at(c, i + di - 1, j + dj - 1);
        CHECK(y(0, (o * 4 + i) * 4 + j) == doctest::Approx(s));
      }
}

TEST_CASE("adam step matches the closed form") {
  P p("w", nn::Tensor<D>({1, 2}, (Mat(1, 2) << 1.0, -2.0).finished()));
  nn::AdamState<D> st;
  st.learning_rate = 0.1;
  std::vector<P*> ps{&p};
  const Mat g1 = (Mat(1, 2) << 0.5, -4.0).finished();
  const Mat g2 = (Mat(1, 2) << -1.0, 2.0).finished();

  p.grad.data = g1;
  nn::adam_step<D>(ps, st);
  // First step moves each coordinate by lr * sign(g) up to epsilon.
  CHECK(p.value.data(0, 0) == doctest::Approx(0.9).epsilon(1e-7));
  CHECK(p.value.data(0, 1) == doctest::Approx(-1.9).epsilon(1e-7));

  const Mat after_first = p.value.data;
  p.grad.data = g2;
  nn::adam_step<D>(ps, st);
  for (int i = 0; i < 2; ++i) {
    const double m = 0.9 * (0.1 * g1(0, i)) + 0.1 * g2(0, i);
    const double v = 0.999 * (0.001 * g1(0, i) * g1(0, i)) + 0.001 * g2(0, i) * g2(0, i);
    const double mh = m / (1 - 0.81), vh = v / (1 - 0.999 * 0.999);
    const double start = after_first(0, i);
    CHECK(p.value.data(0, i) == doctest::Approx(start - 0.1 * mh / (std::sqrt(vh) + 1e-8)).epsilon(1e-9));
  }
  CHECK(st.step == 2);
}

TEST_CASE("batch_norm normalises columns and reports moments") {
  std::mt19937_64 rng(5);
  const Mat x = random_matrix(8, 3, rng, -2, 5);
  G g;
  nn::BatchMoments<D> m;
  const Mat y = nn::batch_norm(g.constant(x), g.constant(Mat(Mat::Ones(1, 3))), g.constant(Mat(Mat::Zero(1, 3))), &m)
                    .value();
  CHECK(m.mean.isApprox(x.colwise().mean()));
  for (int c = 0; c < 3; ++c) {
    CHECK(std::abs(y.col(c).mean()) < 1e-12);
    CHECK(y.col(c).squaredNorm() / 8 == doctest::Approx(1.0).epsilon(1e-3));
  }
}
