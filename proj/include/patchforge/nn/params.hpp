#pragma once

#include <cmath>
#include <cstdint>
#include <deque>
#include <stdexcept>
#include <string>

#include "patchforge/nn/rng.hpp"
#include "patchforge/nn/tensor.hpp"

namespace patchforge::nn {

/// A trainable array with its gradient accumulator and Adam moments.
struct Parameter {
  std::string name;
  Tensor2 value;
  Tensor2 grad;
  Tensor2 m;
  Tensor2 v;
  std::uint64_t steps = 0;
  bool decay = true;  // subject to decoupled weight decay

  Parameter(std::string n, Tensor2 init, bool weight_decay = true)
      : name(std::move(n)),
        value(std::move(init)),
        grad(value.rows, value.cols),
        m(value.rows, value.cols),
        v(value.rows, value.cols),
        decay(weight_decay) {}
};

/// Named parameters with stable addresses; names are unique.
class ParamSet {
 public:
  Parameter& add(const std::string& name, Tensor2 init, bool weight_decay = true) {
    for (const auto& p : params_)
      if (p.name == name) throw std::invalid_argument("duplicate parameter '" + name + "'");
    params_.emplace_back(name, std::move(init), weight_decay);
    return params_.back();
  }

  Parameter& get(const std::string& name) {
    for (auto& p : params_)
      if (p.name == name) return p;
    throw std::out_of_range("no parameter '" + name + "'");
  }
  const Parameter& get(const std::string& name) const {
    for (const auto& p : params_)
      if (p.name == name) return p;
    throw std::out_of_range("no parameter '" + name + "'");
  }

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }
  std::size_t size() const { return params_.size(); }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value.size();
    return n;
  }

  /// Copies values, moments and step counts from a set with the same layout,
  /// keeping every Parameter at its current address.
  void assign_state(const ParamSet& other) {
    if (other.params_.size() != params_.size()) throw std::invalid_argument("parameter sets differ in size");
    for (std::size_t i = 0; i < params_.size(); ++i) {
      if (params_[i].name != other.params_[i].name || !params_[i].value.same_shape(other.params_[i].value))
        throw std::invalid_argument("parameter sets differ at '" + params_[i].name + "'");
      params_[i] = other.params_[i];
    }
  }

  void zero_grad() {
    for (auto& p : params_) p.grad.fill(0.0);
  }

  bool grads_finite() const {
    for (const auto& p : params_)
      if (!p.grad.all_finite()) return false;
    return true;
  }

 private:
  std::deque<Parameter> params_;
};

inline Tensor2 normal_init(std::size_t rows, std::size_t cols, double stddev, Rng& rng) {
  Tensor2 t(rows, cols);
  for (double& x : t.data) x = stddev * rng.normal();
  return t;
}

}  // namespace patchforge::nn
