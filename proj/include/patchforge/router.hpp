#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "patchforge/cfg.hpp"
#include "patchforge/minilang/parser.hpp"
#include "patchforge/nn.hpp"

namespace patchforge::router {

using nn::Graph;
using nn::Tensor2;
using nn::Var;

class FeatureError : public std::runtime_error {
 public:
  FeatureError(std::size_t row, const std::string& what)
      : std::runtime_error("batch row " + std::to_string(row) + ": " + what), row_(row) {}
  std::size_t row() const { return row_; }

 private:
  std::size_t row_;
};

inline constexpr std::size_t kSampleFeatures = 6;
inline constexpr std::size_t kFeatureDim = 2 * kSampleFeatures;

inline constexpr std::array<std::string_view, kSampleFeatures> kSampleFeatureNames = {
    "ast_node_count", "ast_depth", "cfg_node_count", "cyclomatic", "max_path_depth", "token_count"};

using SampleFeatures = std::array<double, kSampleFeatures>;
/// Means of the six per-sample features followed by their maxima.
using BatchFeatures = std::array<double, kFeatureDim>;

inline std::string feature_name(std::size_t i) {
  return std::string(i < kSampleFeatures ? "mean_" : "max_") + std::string(kSampleFeatureNames[i % kSampleFeatures]);
}

namespace detail {

inline void expr_shape(const minilang::Expr& e, std::size_t depth, std::size_t& nodes, std::size_t& max_depth) {
  ++nodes;
  max_depth = std::max(max_depth, depth);
  for (const auto& a : e.args) expr_shape(a, depth + 1, nodes, max_depth);
}

inline void body_shape(const std::vector<minilang::Stmt>& body, std::size_t depth, std::size_t& nodes,
                       std::size_t& max_depth) {
  for (const auto& s : body) {
    ++nodes;
    max_depth = std::max(max_depth, depth);
    for (const auto& e : s.exprs) expr_shape(e, depth + 1, nodes, max_depth);
    body_shape(s.body, depth + 1, nodes, max_depth);
    body_shape(s.orelse, depth + 1, nodes, max_depth);
  }
}

}  // namespace detail

/// Node count and depth of a function's AST; the function itself is the
/// root at depth 1, statements and expressions are nodes below it.
inline std::pair<std::size_t, std::size_t> ast_shape(const minilang::FnDecl& fn) {
  std::size_t nodes = 1, depth = 1;
  detail::body_shape(fn.body, 2, nodes, depth);
  return {nodes, depth};
}

/// Compiler-derived features of one program (its first function).
inline SampleFeatures sample_features(std::string_view source) {
  auto outcome = minilang::try_parse(source);
  if (!outcome.ok()) throw std::invalid_argument("source does not parse");
  if (outcome.program->functions.empty()) throw std::invalid_argument("source has no function");
  const auto& fn = outcome.program->functions.front();
  const auto [nodes, depth] = ast_shape(fn);
  const auto m = cfg::cfg_metrics(cfg::build_cfg(fn));
  return {static_cast<double>(nodes),        static_cast<double>(depth),
          static_cast<double>(m.node_count), static_cast<double>(m.cyclomatic),
          static_cast<double>(m.max_path_depth), static_cast<double>(outcome.token_count)};
}

/// Mean and max of the per-sample features over the buggy inputs of a batch.
template <typename Range>
BatchFeatures extract_features(const Range& buggy_sources) {
  BatchFeatures out{};
  std::size_t n = 0;
  for (const auto& src : buggy_sources) {
    SampleFeatures f;
    try {
      f = sample_features(src);
    } catch (const std::invalid_argument& e) {
      throw FeatureError(n, e.what());
    }
    for (std::size_t i = 0; i < kSampleFeatures; ++i) {
      out[i] += f[i];
      out[kSampleFeatures + i] = n == 0 ? f[i] : std::max(out[kSampleFeatures + i], f[i]);
    }
    ++n;
  }
  if (n == 0) throw FeatureError(0, "empty batch");
  for (std::size_t i = 0; i < kSampleFeatures; ++i) out[i] /= static_cast<double>(n);
  return out;
}

/// Online per-dimension mean/variance (Welford, population variance).
/// normalize() scores an observation against the statistics gathered before
/// it, clamps, and then folds it in.
class FeatureNormalizer {
 public:
  explicit FeatureNormalizer(double clamp = 5.0, double std_floor = 1e-6) : clamp_(clamp), floor_(std_floor) {
    mean_.fill(0.0);
    m2_.fill(0.0);
  }

  BatchFeatures normalize(const BatchFeatures& f) {
    BatchFeatures z = peek(f);
    observe(f);
    return z;
  }

  /// Normalized vector without updating the statistics.
  BatchFeatures peek(const BatchFeatures& f) const {
    BatchFeatures z{};
    if (count_ == 0) return z;
    for (std::size_t i = 0; i < kFeatureDim; ++i) {
      const double sd = std::max(std::sqrt(variance(i)), floor_);
      z[i] = std::clamp((f[i] - mean_[i]) / sd, -clamp_, clamp_);
    }
    return z;
  }

  void observe(const BatchFeatures& f) {
    ++count_;
    const double n = static_cast<double>(count_);
    for (std::size_t i = 0; i < kFeatureDim; ++i) {
      const double delta = f[i] - mean_[i];
      mean_[i] += delta / n;
      m2_[i] += delta * (f[i] - mean_[i]);
    }
  }

  std::size_t count() const { return count_; }
  double mean(std::size_t i) const { return mean_[i]; }
  double variance(std::size_t i) const { return count_ == 0 ? 0.0 : std::max(0.0, m2_[i] / static_cast<double>(count_)); }
  double clamp() const { return clamp_; }

  void save(nn::Checkpoint& ck, const std::string& prefix) const {
    ck.scalars[prefix + "count"] = static_cast<double>(count_);
    ck.tensors[prefix + "mean"] = Tensor2(1, kFeatureDim, std::vector<double>(mean_.begin(), mean_.end()));
    ck.tensors[prefix + "m2"] = Tensor2(1, kFeatureDim, std::vector<double>(m2_.begin(), m2_.end()));
  }
  void load(const nn::Checkpoint& ck, const std::string& prefix) {
    count_ = static_cast<std::size_t>(ck.scalar(prefix + "count"));
    const Tensor2& m = ck.tensor(prefix + "mean");
    const Tensor2& v = ck.tensor(prefix + "m2");
    if (m.size() != kFeatureDim || v.size() != kFeatureDim) throw nn::CheckpointError("normalizer shape mismatch");
    std::copy(m.data.begin(), m.data.end(), mean_.begin());
    std::copy(v.data.begin(), v.data.end(), m2_.begin());
  }

 private:
  double clamp_;
  double floor_;
  std::size_t count_ = 0;
  BatchFeatures mean_;
  BatchFeatures m2_;
};

/// Exponentially weighted mean/variance of one pathway's losses. The weight
/// of a new value is max(1 - decay, 1/n), so early values average uniformly.
class LossScale {
 public:
  explicit LossScale(double decay = 0.99, double std_floor = 1e-6, double clamp = 5.0)
      : decay_(decay), floor_(std_floor), clamp_(clamp) {}

  /// z-score of `loss` against the current statistics; 0 until two losses
  /// have been seen.
  double standardize(double loss) const {
    if (count_ < 2) return 0.0;
    return std::clamp((loss - mean_) / stddev(), -clamp_, clamp_);
  }

  void observe(double loss) {
    ++count_;
    const double alpha = std::max(1.0 - decay_, 1.0 / static_cast<double>(count_));
    const double delta = loss - mean_;
    mean_ += alpha * delta;
    var_ = (1.0 - alpha) * (var_ + alpha * delta * delta);
  }

  std::size_t count() const { return count_; }
  double mean() const { return mean_; }
  double stddev() const { return std::max(std::sqrt(var_), floor_); }

  void save(nn::Checkpoint& ck, const std::string& prefix) const {
    ck.scalars[prefix + "count"] = static_cast<double>(count_);
    ck.scalars[prefix + "mean"] = mean_;
    ck.scalars[prefix + "var"] = var_;
  }
  void load(const nn::Checkpoint& ck, const std::string& prefix) {
    count_ = static_cast<std::size_t>(ck.scalar(prefix + "count"));
    mean_ = ck.scalar(prefix + "mean");
    var_ = ck.scalar(prefix + "var");
  }

 private:
  double decay_;
  double floor_;
  double clamp_;
  std::size_t count_ = 0;
  double mean_ = 0.0;
  double var_ = 0.0;
};

enum class Pathway { sft = 0, rft = 1 };

inline const char* to_string(Pathway p) { return p == Pathway::sft ? "SFT" : "RFT"; }

enum class DecideMode { sample, argmax };

struct RouteDecision {
  int d = 0;  // 1 = RFT
  double p = 0.5;
  bool sampled = false;
  bool overridden = false;

  Pathway pathway() const { return d == 1 ? Pathway::rft : Pathway::sft; }
};

struct RouterConfig {
  std::size_t hidden = 64;
  double learning_rate = 1e-3;
  double baseline_decay = 0.9;
  double loss_ema_decay = 0.99;
  double clamp = 5.0;

  void validate() const {
    if (hidden == 0) throw std::invalid_argument("router.hidden must be positive");
    if (!(learning_rate > 0.0)) throw std::invalid_argument("router.learning_rate must be positive");
    if (!(baseline_decay >= 0.0 && baseline_decay < 1.0)) throw std::invalid_argument("router.baseline_decay must lie in [0, 1)");
    if (!(loss_ema_decay >= 0.0 && loss_ema_decay < 1.0)) throw std::invalid_argument("router.loss_ema_decay must lie in [0, 1)");
    if (!(clamp > 0.0)) throw std::invalid_argument("router.clamp must be positive");
  }
};

/// 12 -> hidden -> hidden -> 1 MLP with ReLU, emitting the RFT logit.
/// The output layer starts at zero, so a fresh router says p = 0.5.
class RouterNet {
 public:
  RouterNet() = default;
  RouterNet(std::size_t hidden, nn::Rng& rng) {
    params_.add("fc1.w", nn::normal_init(kFeatureDim, hidden, std::sqrt(2.0 / kFeatureDim), rng));
    params_.add("fc1.b", Tensor2(1, hidden), false);
    params_.add("fc2.w", nn::normal_init(hidden, hidden, std::sqrt(2.0 / static_cast<double>(hidden)), rng));
    params_.add("fc2.b", Tensor2(1, hidden), false);
    params_.add("out.w", Tensor2(hidden, 1), false);
    params_.add("out.b", Tensor2(1, 1), false);
  }

  nn::ParamSet& params() { return params_; }
  const nn::ParamSet& params() const { return params_; }

  /// n x 12 -> n x 1 logits.
  Var logits(Graph& g, Var x) {
    auto P = [&](const char* n) { return g.param(params_.get(n)); };
    Var h1 = g.relu(g.linear(x, P("fc1.w"), P("fc1.b")));
    Var h2 = g.relu(g.linear(h1, P("fc2.w"), P("fc2.b")));
    return g.linear(h2, P("out.w"), P("out.b"));
  }

  double probability(const BatchFeatures& z) {
    Graph g;
    Var out = g.sigmoid(logits(g, g.input(Tensor2::row({z.begin(), z.end()}))));
    return g.scalar(out);
  }

 private:
  nn::ParamSet params_;
};

/// Everything the router learns or tracks across batches.
class RouterState {
 public:
  RouterState() = default;
  RouterState(RouterConfig cfg, nn::Rng& rng)
      : cfg_(cfg),
        net_((cfg.validate(), cfg.hidden), rng),
        optimizer_(nn::OptimConfig{nn::OptimAlgorithm::adam, cfg.learning_rate, 0.9, 0.999, 1e-8, 0.0, 1.0}),
        normalizer_(cfg.clamp),
        loss_scale_{LossScale(cfg.loss_ema_decay, 1e-6, cfg.clamp), LossScale(cfg.loss_ema_decay, 1e-6, cfg.clamp)} {}

  const RouterConfig& config() const { return cfg_; }
  RouterNet& net() { return net_; }
  FeatureNormalizer& normalizer() { return normalizer_; }
  const FeatureNormalizer& normalizer() const { return normalizer_; }
  double baseline() const { return baseline_; }
  const LossScale& loss_scale(Pathway p) const { return loss_scale_[static_cast<int>(p)]; }
  std::size_t updates() const { return updates_; }

  BatchFeatures normalize(const BatchFeatures& f) { return normalizer_.normalize(f); }

  RouteDecision decide(const BatchFeatures& normalized, DecideMode mode, nn::Rng& rng) {
    RouteDecision d;
    d.p = net_.probability(normalized);
    if (mode == DecideMode::sample) {
      d.sampled = true;
      d.d = rng.bernoulli(d.p) ? 1 : 0;
    } else {
      d.d = d.p >= 0.5 ? 1 : 0;
    }
    return d;
  }

  /// One policy-gradient step with loss -log(p_chosen) * feedback. Returns
  /// the loss value. A zero feedback leaves the parameters untouched.
  double apply_feedback(const RouteDecision& decision, const BatchFeatures& normalized, double feedback) {
    Graph g;
    Var z = net_.logits(g, g.input(Tensor2::row({normalized.begin(), normalized.end()})));
    const int target[1] = {decision.d};
    Var loss = g.sigmoid_cross_entropy(z, target, feedback);
    const double value = g.scalar(loss);
    if (feedback != 0.0) {
      g.backward(loss);
      optimizer_.step(net_.params());
    }
    ++updates_;
    return value;
  }

  /// Full router update from an observed agent loss on the chosen pathway.
  /// Overridden decisions are ignored and return 0.
  double update(const RouteDecision& decision, const BatchFeatures& normalized, double observed_loss) {
    if (decision.overridden) return 0.0;
    if (!std::isfinite(observed_loss)) throw nn::NonFiniteError("router feedback loss is not finite");
    LossScale& scale = loss_scale_[static_cast<int>(decision.pathway())];
    const double standardized = scale.standardize(observed_loss);
    const double feedback = baseline_ - standardized;
    const double loss = apply_feedback(decision, normalized, feedback);
    baseline_ = cfg_.baseline_decay * baseline_ + (1.0 - cfg_.baseline_decay) * standardized;
    scale.observe(observed_loss);
    last_feedback_ = feedback;
    return loss;
  }

  double last_feedback() const { return last_feedback_; }

  void save(nn::Checkpoint& ck, const std::string& prefix = "router/") const {
    ck.put_params(prefix, net_.params());
    normalizer_.save(ck, prefix + "normalizer/");
    loss_scale_[0].save(ck, prefix + "loss_sft/");
    loss_scale_[1].save(ck, prefix + "loss_rft/");
    ck.scalars[prefix + "baseline"] = baseline_;
    ck.scalars[prefix + "updates"] = static_cast<double>(updates_);
  }
  void load(const nn::Checkpoint& ck, const std::string& prefix = "router/") {
    ck.get_params(prefix, net_.params());
    normalizer_.load(ck, prefix + "normalizer/");
    loss_scale_[0].load(ck, prefix + "loss_sft/");
    loss_scale_[1].load(ck, prefix + "loss_rft/");
    baseline_ = ck.scalar(prefix + "baseline");
    updates_ = static_cast<std::size_t>(ck.scalar(prefix + "updates"));
  }

 private:
  RouterConfig cfg_;
  RouterNet net_;
  nn::Optimizer optimizer_;
  FeatureNormalizer normalizer_;
  std::array<LossScale, 2> loss_scale_;
  double baseline_ = 0.0;
  double last_feedback_ = 0.0;
  std::size_t updates_ = 0;
};

}  // namespace patchforge::router
