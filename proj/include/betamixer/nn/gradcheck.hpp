#pragma once

#include <algorithm>
#include <cmath>
#include <random>
#include <span>
#include <vector>

#include "betamixer/nn/graph.hpp"

namespace bmx::nn {

struct GradCheckResult {
  double max_relative_error = 0.0;
  Index coordinates_checked = 0;
};

/// Compares reverse-mode gradients against central differences.
///
/// `build` records a scalar loss on the graph it is given and returns it; it
/// is invoked once for the analytic pass and twice per probed coordinate.
/// Up to `max_coords` coordinates are sampled per parameter (all of them when
/// the parameter is smaller). The relative error of one coordinate is
/// |analytic - numeric| / max(floor, |analytic| + |numeric|). The floor keeps
/// coordinates whose true gradient is zero (for example a bias followed by a
/// normalisation) from turning rounding noise of order eps/h into a large ratio.
template <typename Scalar, typename BuildLoss>
GradCheckResult finite_diff_check(BuildLoss&& build, std::span<Parameter<Scalar>* const> params, double h,
                                  std::mt19937_64& rng, Index max_coords = 24, double floor = 1e-8) {
  for (auto* p : params) p->zero_grad();
  {
    Graph<Scalar> g;
    Var<Scalar> loss = build(g);
    g.backward(loss);
  }
  auto eval = [&]() {
    Graph<Scalar> g;
    return static_cast<double>(build(g).value()(0, 0));
  };
  GradCheckResult result;
  for (auto* p : params) {
    const Index n = p->value.size();
    std::vector<Index> coords(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) coords[static_cast<std::size_t>(i)] = i;
    if (n > max_coords) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(static_cast<std::size_t>(max_coords));
    }
    for (Index c : coords) {
      Scalar& slot = p->value.raw()[c];
      const Scalar saved = slot;
      slot = static_cast<Scalar>(saved + h);
      const double up = eval();
      slot = static_cast<Scalar>(saved - h);
      const double down = eval();
      slot = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double analytic = static_cast<double>(p->grad.raw()[c]);
      const double rel = std::abs(analytic - numeric) / std::max(floor, std::abs(analytic) + std::abs(numeric));
      result.max_relative_error = std::max(result.max_relative_error, rel);
      ++result.coordinates_checked;
    }
  }
  return result;
}

}  // namespace bmx::nn
