#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "patchforge/nn/params.hpp"
#include "patchforge/nn/tensor.hpp"

namespace patchforge::nn {

/// Handle to a value recorded on a Graph.
struct Var {
  std::size_t id = 0;
};

/// Tape for reverse-mode differentiation. Every op records its output and a
/// closure that pushes the output gradient back to its inputs. Parameters
/// enter through param(); backward() accumulates into Parameter::grad.
class Graph {
 public:
  Var input(Tensor2 value) { return push(std::move(value), false, {}); }

  Var param(Parameter& p) {
    Var v = push(p.value, true, {});
    nodes_[v.id].param = &p;
    return v;
  }

  const Tensor2& value(Var v) const { return nodes_[v.id].value; }
  const Tensor2& grad(Var v) const { return nodes_[v.id].grad; }
  double scalar(Var v) const { return nodes_[v.id].value.data[0]; }
  std::size_t size() const { return nodes_.size(); }

  /// Back-propagates from a 1x1 node, scaling its gradient by `seed`.
  void backward(Var root, double seed = 1.0) {
    const Tensor2& rv = nodes_[root.id].value;
    if (rv.rows != 1 || rv.cols != 1) throw ShapeError("backward: root must be 1x1");
    grad_of(root.id).data[0] += seed;
    for (std::size_t i = root.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.grad.empty()) continue;
      if (n.backward) n.backward(*this, i);
      if (n.param != nullptr) {
        Tensor2& pg = n.param->grad;
        for (std::size_t j = 0; j < pg.size(); ++j) pg.data[j] += n.grad.data[j];
      }
    }
  }

  // ---- ops --------------------------------------------------------------

  Var matmul(Var a, Var b) {
    const Tensor2& A = value(a);
    const Tensor2& B = value(b);
    if (A.cols != B.rows) throw ShapeError("matmul: " + A.shape_string() + " x " + B.shape_string());
    Tensor2 out(A.rows, B.cols);
    kernels::matmul_acc(A, B, out);
    return push(std::move(out), needs(a) || needs(b), [a, b](Graph& g, std::size_t self) {
      const Tensor2& G = g.nodes_[self].grad;
      if (g.needs(a)) kernels::matmul_nt_acc(G, g.value(b), g.grad_of(a.id));
      if (g.needs(b)) kernels::matmul_tn_acc(g.value(a), G, g.grad_of(b.id));
    });
  }

  Var add(Var a, Var b) {
    require_same_shape(value(a), value(b), "add");
    Tensor2 out = value(a);
    const Tensor2& B = value(b);
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += B.data[i];
    return push(std::move(out), needs(a) || needs(b), [a, b](Graph& g, std::size_t self) {
      const Tensor2& G = g.nodes_[self].grad;
      for (Var x : {a, b}) {
        if (!g.needs(x)) continue;
        Tensor2& gx = g.grad_of(x.id);
        for (std::size_t i = 0; i < G.size(); ++i) gx.data[i] += G.data[i];
      }
    });
  }

  /// Adds a 1 x n row to every row of `a`.
  Var add_row(Var a, Var bias) {
    const Tensor2& A = value(a);
    const Tensor2& B = value(bias);
    if (B.rows != 1 || B.cols != A.cols) throw ShapeError("add_row: bias must be 1 x " + std::to_string(A.cols));
    Tensor2 out = A;
    for (std::size_t r = 0; r < out.rows; ++r) {
      double* row = out.row_ptr(r);
      for (std::size_t c = 0; c < out.cols; ++c) row[c] += B.data[c];
    }
    return push(std::move(out), needs(a) || needs(bias), [a, bias](Graph& g, std::size_t self) {
      const Tensor2& G = g.nodes_[self].grad;
      if (g.needs(a)) {
        Tensor2& ga = g.grad_of(a.id);
        for (std::size_t i = 0; i < G.size(); ++i) ga.data[i] += G.data[i];
      }
      if (g.needs(bias)) {
        Tensor2& gb = g.grad_of(bias.id);
        for (std::size_t r = 0; r < G.rows; ++r)
          for (std::size_t c = 0; c < G.cols; ++c) gb.data[c] += G(r, c);
      }
    });
  }

  Var scale(Var a, double s) {
    Tensor2 out = value(a);
    for (double& x : out.data) x *= s;
    return push(std::move(out), needs(a), [a, s](Graph& g, std::size_t self) {
      const Tensor2& G = g.nodes_[self].grad;
      Tensor2& ga = g.grad_of(a.id);
      for (std::size_t i = 0; i < G.size(); ++i) ga.data[i] += s * G.data[i];
    });
  }

  Var relu(Var a) {
    Tensor2 out = value(a);
    for (double& x : out.data) x = x > 0.0 ? x : 0.0;
    return push(std::move(out), needs(a), [a](Graph& g, std::size_t self) {
      const Tensor2& G = g.nodes_[self].grad;
      const Tensor2& X = g.value(a);
      Tensor2& ga = g.grad_of(a.id);
      for (std::size_t i = 0; i < G.size(); ++i)
        if (X.data[i] > 0.0) ga.data[i] += G.data[i];
    });
  }

  Var sigmoid(Var a) {
    Tensor2 out = value(a);
    for (double& x : out.data) x = 1.0 / (1.0 + std::exp(-x));
    return push(std::move(out), needs(a), [a](Graph& g, std::size_t self) {
      const Tensor2& G = g.nodes_[self].grad;
      const Tensor2& Y = g.nodes_[self].value;
      Tensor2& ga = g.grad_of(a.id);
      for (std::size_t i = 0; i < G.size(); ++i) ga.data[i] += G.data[i] * Y.data[i] * (1.0 - Y.data[i]);
    });
  }

  /// Row-wise layer normalization with 1 x n gain and bias.
  Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-5) {
    const Tensor2& X = value(x);
    const Tensor2& Gm = value(gamma);
    const Tensor2& Bt = value(beta);
    if (Gm.rows != 1 || Gm.cols != X.cols || !Gm.same_shape(Bt))
      throw ShapeError("layer_norm: gain/bias must be 1 x " + std::to_string(X.cols));
    const std::size_t n = X.cols;
    Tensor2 out(X.rows, n);
    Tensor2 xhat(X.rows, n);
    std::vector<double> inv(X.rows);
    for (std::size_t r = 0; r < X.rows; ++r)
      inv[r] = kernels::layer_norm_row(X.row_ptr(r), n, eps, Gm.data.data(), Bt.data.data(),
                                       xhat.row_ptr(r), out.row_ptr(r));
    return push(std::move(out), needs(x) || needs(gamma) || needs(beta),
                [x, gamma, beta, xhat = std::move(xhat), inv = std::move(inv)](Graph& g, std::size_t self) {
                  const Tensor2& G = g.nodes_[self].grad;
                  const std::size_t n = G.cols;
                  const double* gm = g.value(gamma).data.data();
                  if (g.needs(gamma) || g.needs(beta)) {
                    for (std::size_t r = 0; r < G.rows; ++r)
                      for (std::size_t c = 0; c < n; ++c) {
                        if (g.needs(gamma)) g.grad_of(gamma.id).data[c] += G(r, c) * xhat(r, c);
                        if (g.needs(beta)) g.grad_of(beta.id).data[c] += G(r, c);
                      }
                  }
                  if (!g.needs(x)) return;
                  Tensor2& gx = g.grad_of(x.id);
                  std::vector<double> dxhat(n);
                  for (std::size_t r = 0; r < G.rows; ++r) {
                    double mean_d = 0.0, mean_dx = 0.0;
                    for (std::size_t c = 0; c < n; ++c) {
                      dxhat[c] = G(r, c) * gm[c];
                      mean_d += dxhat[c];
                      mean_dx += dxhat[c] * xhat(r, c);
                    }
                    mean_d /= static_cast<double>(n);
                    mean_dx /= static_cast<double>(n);
                    double* row = gx.row_ptr(r);
                    for (std::size_t c = 0; c < n; ++c)
                      row[c] += inv[r] * (dxhat[c] - mean_d - xhat(r, c) * mean_dx);
                  }
                });
  }

  /// Gathers rows of `table` (V x d) for each id.
  Var embedding(Var table, std::span<const int> ids) {
    const Tensor2& T = value(table);
    Tensor2 out(ids.size(), T.cols);
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= T.rows)
        throw ShapeError("embedding: id " + std::to_string(ids[i]) + " out of range");
      std::copy_n(T.row_ptr(static_cast<std::size_t>(ids[i])), T.cols, out.row_ptr(i));
    }
    std::vector<int> idv(ids.begin(), ids.end());
    return push(std::move(out), needs(table), [table, idv = std::move(idv)](Graph& g, std::size_t self) {
      const Tensor2& G = g.nodes_[self].grad;
      Tensor2& gt = g.grad_of(table.id);
      for (std::size_t i = 0; i < idv.size(); ++i) {
        double* dst = gt.row_ptr(static_cast<std::size_t>(idv[i]));
        const double* src = G.row_ptr(i);
        for (std::size_t c = 0; c < G.cols; ++c) dst[c] += src[c];
      }
    });
  }

  /// Causal multi-head scaled dot-product attention over T x d inputs.
  Var causal_attention(Var q, Var k, Var v, std::size_t heads) {
    const Tensor2& Q = value(q);
    const Tensor2& K = value(k);
    const Tensor2& V = value(v);
    require_same_shape(Q, K, "attention");
    require_same_shape(Q, V, "attention");
    if (heads == 0 || Q.cols % heads != 0) throw ShapeError("attention: d not divisible by heads");
    const std::size_t T = Q.rows, d = Q.cols, dh = d / heads;
    const double sc = 1.0 / std::sqrt(static_cast<double>(dh));
    // probs[h] is T x T, lower-triangular.
    std::vector<Tensor2> probs(heads, Tensor2(T, T));
    Tensor2 out(T, d);
    for (std::size_t h = 0; h < heads; ++h) {
      const std::size_t off = h * dh;
      Tensor2& P = probs[h];
      for (std::size_t i = 0; i < T; ++i) {
        double* prow = P.row_ptr(i);
        const double* qi = Q.row_ptr(i) + off;
        double mx = -INFINITY;
        for (std::size_t j = 0; j <= i; ++j) {
          prow[j] = kernels::dot(qi, K.row_ptr(j) + off, dh) * sc;
          mx = std::max(mx, prow[j]);
        }
        double s = 0.0;
        for (std::size_t j = 0; j <= i; ++j) {
          prow[j] = std::exp(prow[j] - mx);
          s += prow[j];
        }
        double* orow = out.row_ptr(i) + off;
        for (std::size_t j = 0; j <= i; ++j) {
          prow[j] /= s;
          kernels::axpy(prow[j], V.row_ptr(j) + off, orow, dh);
        }
      }
    }
    return push(std::move(out), needs(q) || needs(k) || needs(v),
                [q, k, v, heads, sc, probs = std::move(probs)](Graph& g, std::size_t self) {
                  const Tensor2& G = g.nodes_[self].grad;
                  const Tensor2& Q = g.value(q);
                  const Tensor2& K = g.value(k);
                  const Tensor2& V = g.value(v);
                  const std::size_t T = Q.rows, dh = Q.cols / heads;
                  Tensor2* gq = g.needs(q) ? &g.grad_of(q.id) : nullptr;
                  Tensor2* gk = g.needs(k) ? &g.grad_of(k.id) : nullptr;
                  Tensor2* gv = g.needs(v) ? &g.grad_of(v.id) : nullptr;
                  std::vector<double> dp(T);
                  for (std::size_t h = 0; h < heads; ++h) {
                    const std::size_t off = h * dh;
                    const Tensor2& P = probs[h];
                    for (std::size_t i = 0; i < T; ++i) {
                      const double* go = G.row_ptr(i) + off;
                      const double* prow = P.row_ptr(i);
                      double acc = 0.0;
                      for (std::size_t j = 0; j <= i; ++j) {
                        dp[j] = kernels::dot(go, V.row_ptr(j) + off, dh);
                        acc += dp[j] * prow[j];
                        if (gv) kernels::axpy(prow[j], go, gv->row_ptr(j) + off, dh);
                      }
                      for (std::size_t j = 0; j <= i; ++j) {
                        const double ds = prow[j] * (dp[j] - acc) * sc;
                        if (ds == 0.0) continue;
                        if (gq) kernels::axpy(ds, K.row_ptr(j) + off, gq->row_ptr(i) + off, dh);
                        if (gk) kernels::axpy(ds, Q.row_ptr(i) + off, gk->row_ptr(j) + off, dh);
                      }
                    }
                  }
                });
  }

  /// weight * sum over rows t with targets[t] >= 0 of -log softmax(logits[t])[targets[t]].
  Var softmax_cross_entropy(Var logits, std::span<const int> targets, double weight = 1.0) {
    const Tensor2& L = value(logits);
    if (targets.size() != L.rows) throw ShapeError("softmax_cross_entropy: one target per row");
    Tensor2 logp(L.rows, L.cols);
    double total = 0.0;
    for (std::size_t r = 0; r < L.rows; ++r) {
      kernels::log_softmax_row(L.row_ptr(r), L.cols, logp.row_ptr(r));
      if (targets[r] < 0) continue;
      if (static_cast<std::size_t>(targets[r]) >= L.cols) throw ShapeError("softmax_cross_entropy: target out of range");
      total -= logp(r, static_cast<std::size_t>(targets[r]));
    }
    std::vector<int> tv(targets.begin(), targets.end());
    return push(Tensor2::scalar(weight * total), needs(logits),
                [logits, weight, tv = std::move(tv), logp = std::move(logp)](Graph& g, std::size_t self) {
                  const double gs = g.nodes_[self].grad.data[0] * weight;
                  Tensor2& gl = g.grad_of(logits.id);
                  for (std::size_t r = 0; r < logp.rows; ++r) {
                    if (tv[r] < 0) continue;
                    double* row = gl.row_ptr(r);
                    for (std::size_t c = 0; c < logp.cols; ++c) row[c] += gs * std::exp(logp(r, c));
                    row[tv[r]] -= gs;
                  }
                });
  }

  /// weight * sum_i -log P(target_i) for Bernoulli outcomes with
  /// P(1) = sigmoid(logit_i); logits are n x 1, targets 0 or 1.
  Var sigmoid_cross_entropy(Var logits, std::span<const int> targets, double weight = 1.0) {
    const Tensor2& L = value(logits);
    if (L.cols != 1 || L.rows != targets.size()) throw ShapeError("sigmoid_cross_entropy: expects n x 1 logits");
    double total = 0.0;
    for (std::size_t i = 0; i < L.rows; ++i) {
      const double z = targets[i] ? -L.data[i] : L.data[i];
      total += z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
    }
    std::vector<int> tv(targets.begin(), targets.end());
    return push(Tensor2::scalar(weight * total), needs(logits),
                [logits, weight, tv = std::move(tv)](Graph& g, std::size_t self) {
                  const double gs = g.nodes_[self].grad.data[0] * weight;
                  const Tensor2& L = g.value(logits);
                  Tensor2& gl = g.grad_of(logits.id);
                  for (std::size_t i = 0; i < tv.size(); ++i) {
                    const double p = 1.0 / (1.0 + std::exp(-L.data[i]));
                    gl.data[i] += gs * (p - (tv[i] ? 1.0 : 0.0));
                  }
                });
  }

  /// Column of log softmax(logits[t])[targets[t]] (0 where targets[t] < 0).
  Var log_softmax_gather(Var logits, std::span<const int> targets) {
    const Tensor2& L = value(logits);
    if (targets.size() != L.rows) throw ShapeError("log_softmax_gather: one target per row");
    Tensor2 logp(L.rows, L.cols);
    Tensor2 out(L.rows, 1);
    for (std::size_t r = 0; r < L.rows; ++r) {
      kernels::log_softmax_row(L.row_ptr(r), L.cols, logp.row_ptr(r));
      if (targets[r] >= 0) out.data[r] = logp(r, static_cast<std::size_t>(targets[r]));
    }
    std::vector<int> tv(targets.begin(), targets.end());
    return push(std::move(out), needs(logits),
                [logits, tv = std::move(tv), logp = std::move(logp)](Graph& g, std::size_t self) {
                  const Tensor2& G = g.nodes_[self].grad;
                  Tensor2& gl = g.grad_of(logits.id);
                  for (std::size_t r = 0; r < logp.rows; ++r) {
                    if (tv[r] < 0 || G.data[r] == 0.0) continue;
                    double* row = gl.row_ptr(r);
                    for (std::size_t c = 0; c < logp.cols; ++c) row[c] -= G.data[r] * std::exp(logp(r, c));
                    row[tv[r]] += G.data[r];
                  }
                });
  }

  /// Negated clipped surrogate, summed over tokens and scaled by `weight`:
  /// -weight * sum_t min(ratio_t * adv_t, clip(ratio_t, 1 - eps, 1 + eps) * adv_t)
  /// with ratio_t = exp(logp_t - old_logp_t).
  Var ppo_clip_objective(Var logp, std::span<const double> old_logp, std::span<const double> adv,
                         double eps, double weight = 1.0) {
    const Tensor2& L = value(logp);
    if (L.cols != 1 || L.rows != old_logp.size() || L.rows != adv.size())
      throw ShapeError("ppo_clip_objective: expects n x 1 log-probs with n old log-probs and advantages");
    std::vector<double> dterm(L.rows, 0.0);  // d(term)/d(logp)
    double total = 0.0;
    for (std::size_t t = 0; t < L.rows; ++t) {
      const double ratio = std::exp(L.data[t] - old_logp[t]);
      const double clipped = std::clamp(ratio, 1.0 - eps, 1.0 + eps);
      const double unclipped_term = ratio * adv[t];
      const double clipped_term = clipped * adv[t];
      if (unclipped_term <= clipped_term) {
        total += unclipped_term;
        dterm[t] = unclipped_term;
      } else {
        total += clipped_term;
      }
    }
    return push(Tensor2::scalar(-weight * total), needs(logp),
                [logp, weight, dterm = std::move(dterm)](Graph& g, std::size_t self) {
                  const double gs = g.nodes_[self].grad.data[0];
                  Tensor2& gl = g.grad_of(logp.id);
                  for (std::size_t t = 0; t < dterm.size(); ++t) gl.data[t] -= gs * weight * dterm[t];
                });
  }

  /// Mean squared error of an n x 1 prediction against targets.
  Var mse(Var pred, std::span<const double> target) {
    const Tensor2& P = value(pred);
    if (P.size() != target.size() || target.empty()) throw ShapeError("mse: size mismatch");
    double total = 0.0;
    for (std::size_t i = 0; i < target.size(); ++i) {
      const double d = P.data[i] - target[i];
      total += d * d;
    }
    const double n = static_cast<double>(target.size());
    std::vector<double> tv(target.begin(), target.end());
    return push(Tensor2::scalar(total / n), needs(pred), [pred, n, tv = std::move(tv)](Graph& g, std::size_t self) {
      const double gs = g.nodes_[self].grad.data[0];
      const Tensor2& P = g.value(pred);
      Tensor2& gp = g.grad_of(pred.id);
      for (std::size_t i = 0; i < tv.size(); ++i) gp.data[i] += gs * 2.0 * (P.data[i] - tv[i]) / n;
    });
  }

  /// Mean over the rows whose mask entry is nonzero; 1 x d.
  Var mean_rows(Var x, std::span<const char> mask) {
    const Tensor2& X = value(x);
    if (mask.size() != X.rows) throw ShapeError("mean_rows: one mask entry per row");
    std::size_t count = 0;
    for (char m : mask) count += m != 0;
    if (count == 0) throw ShapeError("mean_rows: empty mask");
    Tensor2 out(1, X.cols);
    for (std::size_t r = 0; r < X.rows; ++r) {
      if (!mask[r]) continue;
      for (std::size_t c = 0; c < X.cols; ++c) out.data[c] += X(r, c);
    }
    const double inv = 1.0 / static_cast<double>(count);
    for (double& v : out.data) v *= inv;
    std::vector<char> mv(mask.begin(), mask.end());
    return push(std::move(out), needs(x), [x, inv, mv = std::move(mv)](Graph& g, std::size_t self) {
      const Tensor2& G = g.nodes_[self].grad;
      Tensor2& gx = g.grad_of(x.id);
      for (std::size_t r = 0; r < mv.size(); ++r) {
        if (!mv[r]) continue;
        for (std::size_t c = 0; c < G.cols; ++c) gx(r, c) += G.data[c] * inv;
      }
    });
  }

  /// Rows [begin, end) of `x`.
  Var slice_rows(Var x, std::size_t begin, std::size_t end) {
    const Tensor2& X = value(x);
    if (begin > end || end > X.rows) throw ShapeError("slice_rows: bad range");
    Tensor2 out(end - begin, X.cols);
    std::copy(X.data.begin() + static_cast<std::ptrdiff_t>(begin * X.cols),
              X.data.begin() + static_cast<std::ptrdiff_t>(end * X.cols), out.data.begin());
    return push(std::move(out), needs(x), [x, begin](Graph& g, std::size_t self) {
      const Tensor2& G = g.nodes_[self].grad;
      Tensor2& gx = g.grad_of(x.id);
      for (std::size_t i = 0; i < G.size(); ++i) gx.data[begin * G.cols + i] += G.data[i];
    });
  }

  /// Sum of 1x1 nodes.
  Var sum(std::span<const Var> xs) {
    double total = 0.0;
    bool any = false;
    for (Var x : xs) {
      if (value(x).size() != 1) throw ShapeError("sum: expects 1x1 inputs");
      total += scalar(x);
      any = any || needs(x);
    }
    std::vector<Var> xv(xs.begin(), xs.end());
    return push(Tensor2::scalar(total), any, [xv = std::move(xv)](Graph& g, std::size_t self) {
      const double gs = g.nodes_[self].grad.data[0];
      for (Var x : xv)
        if (g.needs(x)) g.grad_of(x.id).data[0] += gs;
    });
  }

  // Linear layer helper: x W + b.
  Var linear(Var x, Var w, Var b) { return add_row(matmul(x, w), b); }

 private:
  using Backward = std::function<void(Graph&, std::size_t)>;

  struct Node {
    Tensor2 value;
    Tensor2 grad;
    Backward backward;
    Parameter* param = nullptr;
    bool needs_grad = false;
  };

  bool needs(Var v) const { return nodes_[v.id].needs_grad; }

  Tensor2& grad_of(std::size_t id) {
    Node& n = nodes_[id];
    if (n.grad.empty()) n.grad = Tensor2(n.value.rows, n.value.cols);
    return n.grad;
  }

  Var push(Tensor2 value, bool needs_grad, Backward backward) {
    if (!value.all_finite()) throw NonFiniteError("non-finite value produced on the graph");
    Node n;
    n.value = std::move(value);
    n.needs_grad = needs_grad;
    if (needs_grad) n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return Var{nodes_.size() - 1};
  }

  std::vector<Node> nodes_;
};

}  // namespace patchforge::nn
