#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "patchforge/minilang.hpp"
#include "patchforge/nn/graph.hpp"
#include "patchforge/nn/rng.hpp"

namespace testsupport {

namespace ml = patchforge::minilang;

struct RandomFnOptions {
  std::size_t max_statements = 20;
  int max_depth = 3;
  bool early_returns = true;
};

/// Random structured function for property tests. Statement budget is shared
/// across nesting levels so the total never exceeds `max_statements`.
class RandomFn {
 public:
  RandomFn(std::uint64_t seed, RandomFnOptions opt = {}) : rng_(seed), opt_(opt) {}

  ml::FnDecl next() {
    budget_ = 1 + rng_.below(opt_.max_statements - (opt_.early_returns ? 0 : 1));
    ml::FnDecl fn;
    fn.name = "f";
    fn.params = {"a", "b"};
    fn.body = block(0, true);
    return fn;
  }

 private:
  ml::Expr leaf() {
    switch (rng_.below(4)) {
      case 0: return ml::ast::int_lit(static_cast<long long>(rng_.below(50)));
      case 1: return ml::ast::var("a");
      case 2: return ml::ast::var("b");
      default: return ml::ast::var("x");
    }
  }

  ml::Expr value() {
    switch (rng_.below(5)) {
      case 0: return ml::ast::call("read_input");
      case 1: return ml::ast::binary("+", leaf(), leaf());
      case 2: return ml::ast::index(ml::ast::var("buf"), leaf());
      case 3: return ml::ast::call("eval", {leaf()});
      default: return leaf();
    }
  }

  std::vector<ml::Stmt> block(int depth, bool top) {
    std::vector<ml::Stmt> out;
    const std::size_t want = 1 + rng_.below(4);
    for (std::size_t i = 0; i < want && budget_ > 0; ++i) {
      --budget_;
      const auto pick = rng_.below(10);
      if (depth < opt_.max_depth && pick < 2) {
        auto then_body = block(depth + 1, false);
        if (rng_.bernoulli(0.5)) {
          out.push_back(ml::ast::if_else(ml::ast::binary("<", leaf(), leaf()), std::move(then_body),
                                         block(depth + 1, false)));
        } else {
          out.push_back(ml::ast::if_else(ml::ast::binary("<", leaf(), leaf()), std::move(then_body)));
        }
      } else if (depth < opt_.max_depth && pick < 3) {
        out.push_back(ml::ast::while_loop(ml::ast::binary("<", leaf(), leaf()), block(depth + 1, false)));
      } else if (opt_.early_returns && pick == 3) {
        out.push_back(ml::ast::ret(leaf()));
      } else if (pick < 6) {
        out.push_back(ml::ast::let("x", value()));
      } else if (pick < 8) {
        out.push_back(ml::ast::expr(ml::ast::call("print", {leaf()})));
      } else {
        out.push_back(ml::ast::index_assign("buf", leaf(), value()));
      }
    }
    if (top && !opt_.early_returns) out.push_back(ml::ast::ret(leaf()));
    return out;
  }

  patchforge::nn::Rng rng_;
  RandomFnOptions opt_;
  std::size_t budget_ = 0;
};

/// |analytic - numeric| / max(|analytic|, |numeric|, floor); the floor keeps
/// near-zero gradients from turning rounding noise into huge ratios.
inline double relative_error(double analytic, double numeric, double floor = 1e-2) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

struct GradCheck {
  double max_rel = 0.0;
  std::string worst;  // parameter[index] with the largest error
  std::size_t checked = 0;
};

/// Compares accumulated gradients with central differences of step `h` for
/// every scalar of every parameter in `params`. `loss(true)` must accumulate
/// gradients into the parameters and return the loss; `loss(false)` only
/// evaluates it.
inline GradCheck check_gradients(patchforge::nn::ParamSet& params, const std::function<double(bool)>& loss,
                                 double h = 1e-5) {
  params.zero_grad();
  loss(true);
  GradCheck out;
  for (auto& p : params) {
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double keep = p.value.data[i];
      p.value.data[i] = keep + h;
      const double up = loss(false);
      p.value.data[i] = keep - h;
      const double down = loss(false);
      p.value.data[i] = keep;
      const double rel = relative_error(p.grad.data[i], (up - down) / (2 * h));
      ++out.checked;
      if (rel > out.max_rel) {
        out.max_rel = rel;
        out.worst = p.name + "[" + std::to_string(i) + "]";
      }
    }
  }
  params.zero_grad();
  return out;
}

/// Same, for a loss recorded on a Graph; `build` binds the parameters with
/// Graph::param and returns a 1x1 node.
inline GradCheck check_gradients(patchforge::nn::ParamSet& params,
                                 const std::function<patchforge::nn::Var(patchforge::nn::Graph&)>& build,
                                 double h = 1e-5) {
  return check_gradients(
      params,
      std::function<double(bool)>([&](bool accumulate) {
        patchforge::nn::Graph g;
        const auto root = build(g);
        if (accumulate) g.backward(root);
        return g.scalar(root);
      }),
      h);
}

inline patchforge::nn::Tensor2 random_tensor(std::size_t rows, std::size_t cols, patchforge::nn::Rng& rng,
                                             double scale = 1.0) {
  patchforge::nn::Tensor2 t(rows, cols);
  for (double& x : t.data) x = scale * (2.0 * rng.uniform() - 1.0);
  return t;
}

}  // namespace testsupport
