#pragma once

#include <cmath>
#include <map>
#include <span>
#include <string>

#include "betamixer/nn/tensor.hpp"

namespace bmx::nn {

template <typename Scalar>
struct AdamState {
  double learning_rate = 5e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  long step = 0;
  std::map<std::string, Matrix<Scalar>> first_moment;
  std::map<std::string, Matrix<Scalar>> second_moment;
};

/// One bias-corrected Adam update over `params` using their accumulated
/// gradients. Gradients are left untouched; callers zero them explicitly.
template <typename Scalar>
void adam_step(std::span<Parameter<Scalar>* const> params, AdamState<Scalar>& state) {
  ++state.step;
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  const Scalar b1 = static_cast<Scalar>(state.beta1);
  const Scalar b2 = static_cast<Scalar>(state.beta2);
  const Scalar lr = static_cast<Scalar>(state.learning_rate);
  const Scalar eps = static_cast<Scalar>(state.epsilon);
  const Scalar inv_c1 = static_cast<Scalar>(1.0 / c1);
  const Scalar inv_c2 = static_cast<Scalar>(1.0 / c2);
  for (Parameter<Scalar>* p : params) {
    auto& m = state.first_moment[p->name];
    auto& v = state.second_moment[p->name];
    const auto& g = p->grad.data;
    if (m.size() == 0) {
      m = Matrix<Scalar>::Zero(g.rows(), g.cols());
      v = Matrix<Scalar>::Zero(g.rows(), g.cols());
    }
    if (m.rows() != g.rows() || m.cols() != g.cols())
      throw ShapeError("adam_step: moment shape for '" + p->name + "' does not match its gradient");
    m = b1 * m + (Scalar(1) - b1) * g;
    v = b2 * v + (Scalar(1) - b2) * g.cwiseAbs2();
    p->value.data.array() -= lr * (m.array() * inv_c1) / ((v.array() * inv_c2).sqrt() + eps);
  }
}

}  // namespace bmx::nn
