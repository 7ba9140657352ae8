#pragma once

#include <map>
#include <memory>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "betamixer/nn/tensor.hpp"

namespace bmx::nn {

/// Ordered collection of uniquely named parameters with stable addresses.
template <typename Scalar>
class ParameterStore {
 public:
  Parameter<Scalar>& add(const std::string& name, Tensor<Scalar> value) {
    if (index_.count(name)) throw Error("duplicate parameter name '" + name + "'");
    params_.push_back(std::make_unique<Parameter<Scalar>>(name, std::move(value)));
    index_[name] = params_.size() - 1;
    return *params_.back();
  }

  Parameter<Scalar>& at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw Error("no parameter named '" + name + "'");
    return *params_[it->second];
  }
  const Parameter<Scalar>& at(const std::string& name) const {
    return const_cast<ParameterStore*>(this)->at(name);
  }
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  std::size_t size() const { return params_.size(); }
  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  /// Parameters whose names start with any of the given prefixes.
  std::vector<Parameter<Scalar>*> with_prefix(std::initializer_list<std::string_view> prefixes) {
    std::vector<Parameter<Scalar>*> out;
    for (auto& p : params_)
      for (auto pre : prefixes)
        if (std::string_view(p->name).substr(0, pre.size()) == pre) {
          out.push_back(p.get());
          break;
        }
    return out;
  }

  std::vector<Parameter<Scalar>*> all() {
    std::vector<Parameter<Scalar>*> out;
    for (auto& p : params_) out.push_back(p.get());
    return out;
  }

  void zero_grad() {
    for (auto& p : params_) p->zero_grad();
  }

 private:
  std::vector<std::unique_ptr<Parameter<Scalar>>> params_;
  std::map<std::string, std::size_t> index_;
};

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights.
template <typename Scalar>
Tensor<Scalar> fan_in_uniform(Shape shape, Index fan_in, std::mt19937_64& rng) {
  Tensor<Scalar> t(std::move(shape));
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (Index i = 0; i < t.size(); ++i) t.raw()[i] = static_cast<Scalar>(dist(rng));
  return t;
}

/// Uniform(-sqrt(6/fan_in), sqrt(6/fan_in)) weights, variance-preserving under ReLU.
template <typename Scalar>
Tensor<Scalar> he_uniform(Shape shape, Index fan_in, std::mt19937_64& rng) {
  Tensor<Scalar> t(std::move(shape));
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (Index i = 0; i < t.size(); ++i) t.raw()[i] = static_cast<Scalar>(dist(rng));
  return t;
}

template <typename Scalar>
Tensor<Scalar> normal_init(Shape shape, double stddev, std::mt19937_64& rng) {
  Tensor<Scalar> t(std::move(shape));
  std::normal_distribution<double> dist(0.0, stddev);
  for (Index i = 0; i < t.size(); ++i) t.raw()[i] = static_cast<Scalar>(dist(rng));
  return t;
}

template <typename Scalar>
Tensor<Scalar> constant_init(Shape shape, Scalar value) {
  Tensor<Scalar> t(std::move(shape));
  t.data.setConstant(value);
  return t;
}

/// Learnable positional table of shape [length, depth], small random init.
template <typename Scalar>
Tensor<Scalar> positional_embedding(Index length, Index depth, std::mt19937_64& rng, double stddev = 0.02) {
  if (length < 1 || depth < 1) throw ShapeError("positional_embedding: length and depth must be >= 1");
  return normal_init<Scalar>({length, depth}, stddev, rng);
}

}  // namespace bmx::nn
