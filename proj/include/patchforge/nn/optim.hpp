#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "patchforge/nn/params.hpp"

namespace patchforge::nn {

enum class OptimAlgorithm { adam, adamw };

inline const char* to_string(OptimAlgorithm a) { return a == OptimAlgorithm::adam ? "adam" : "adamw"; }

inline OptimAlgorithm parse_optim_algorithm(const std::string& s) {
  if (s == "adam") return OptimAlgorithm::adam;
  if (s == "adamw") return OptimAlgorithm::adamw;
  throw std::invalid_argument("unknown optimizer '" + s + "'");
}

struct OptimConfig {
  OptimAlgorithm algorithm = OptimAlgorithm::adamw;
  double learning_rate = 5e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;  // adamw only
  double lr_decay_gamma = 0.95;

  void validate() const {
    if (!(learning_rate > 0.0)) throw std::invalid_argument("learning_rate must be positive");
    if (!(lr_decay_gamma >= 0.0 && lr_decay_gamma <= 1.0))
      throw std::invalid_argument("lr_decay_gamma must lie in [0, 1]");
    if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0))
      throw std::invalid_argument("betas must lie in [0, 1)");
    if (!(eps > 0.0)) throw std::invalid_argument("eps must be positive");
    if (weight_decay < 0.0) throw std::invalid_argument("weight_decay must be non-negative");
  }
};

/// Adam / AdamW over a ParamSet. The current learning rate is always
/// base * gamma^decays, recomputed rather than multiplied in place.
class Optimizer {
 public:
  Optimizer() = default;
  explicit Optimizer(OptimConfig cfg) : cfg_(cfg) { cfg_.validate(); }

  const OptimConfig& config() const { return cfg_; }
  double learning_rate() const { return cfg_.learning_rate * std::pow(cfg_.lr_decay_gamma, static_cast<double>(decays_)); }
  unsigned decays() const { return decays_; }
  void set_decays(unsigned n) { decays_ = n; }

  void decay_lr() { ++decays_; }

  /// Applies one update to every parameter, then zeroes gradients. Throws
  /// NonFiniteError before touching anything if a gradient or the resulting
  /// value would be non-finite.
  void step(ParamSet& params) {
    if (!params.grads_finite()) throw NonFiniteError("non-finite gradient");
    const double lr = learning_rate();
    const double b1 = cfg_.beta1, b2 = cfg_.beta2;
    // Stage updates so that a non-finite result leaves the set untouched.
    std::vector<std::vector<double>> next_value, next_m, next_v;
    next_value.reserve(params.size());
    next_m.reserve(params.size());
    next_v.reserve(params.size());
    for (const Parameter& p : params) {
      const std::uint64_t t = p.steps + 1;
      const double c1 = 1.0 - std::pow(b1, static_cast<double>(t));
      const double c2 = 1.0 - std::pow(b2, static_cast<double>(t));
      const bool decoupled = cfg_.algorithm == OptimAlgorithm::adamw && p.decay;
      std::vector<double> nv(p.value.data), nm(p.m.data), nvv(p.v.data);
      for (std::size_t i = 0; i < nv.size(); ++i) {
        const double g = p.grad.data[i];
        nm[i] = b1 * nm[i] + (1.0 - b1) * g;
        nvv[i] = b2 * nvv[i] + (1.0 - b2) * g * g;
        const double mhat = nm[i] / c1;
        const double vhat = nvv[i] / c2;
        if (decoupled) nv[i] -= lr * cfg_.weight_decay * nv[i];
        nv[i] -= lr * mhat / (std::sqrt(vhat) + cfg_.eps);
        if (!std::isfinite(nv[i])) throw NonFiniteError("non-finite update for '" + p.name + "'");
      }
      next_value.push_back(std::move(nv));
      next_m.push_back(std::move(nm));
      next_v.push_back(std::move(nvv));
    }
    std::size_t k = 0;
    for (Parameter& p : params) {
      p.value.data = std::move(next_value[k]);
      p.m.data = std::move(next_m[k]);
      p.v.data = std::move(next_v[k]);
      ++p.steps;
      ++k;
    }
    params.zero_grad();
  }

 private:
  OptimConfig cfg_;
  unsigned decays_ = 0;
};

}  // namespace patchforge::nn
