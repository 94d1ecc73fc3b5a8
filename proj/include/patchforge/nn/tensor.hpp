#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace patchforge::nn {

class ShapeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NonFiniteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Dense row-major matrix of doubles.
struct Tensor2 {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Tensor2() = default;
  Tensor2(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}
  Tensor2(std::size_t r, std::size_t c, std::vector<double> values)
      : rows(r), cols(c), data(std::move(values)) {
    if (data.size() != r * c) throw ShapeError("tensor data length does not match shape");
  }

  static Tensor2 scalar(double v) { return Tensor2(1, 1, v); }
  static Tensor2 row(std::vector<double> values) {
    const std::size_t n = values.size();
    return Tensor2(1, n, std::move(values));
  }

  std::size_t size() const { return data.size(); }
  bool empty() const { return data.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  double* row_ptr(std::size_t r) { return data.data() + r * cols; }
  const double* row_ptr(std::size_t r) const { return data.data() + r * cols; }

  bool same_shape(const Tensor2& o) const { return rows == o.rows && cols == o.cols; }
  bool operator==(const Tensor2&) const = default;

  void fill(double v) { std::fill(data.begin(), data.end(), v); }

  bool all_finite() const {
    for (double v : data)
      if (!std::isfinite(v)) return false;
    return true;
  }

  std::string shape_string() const {
    return "[" + std::to_string(rows) + "x" + std::to_string(cols) + "]";
  }
};

inline void require_same_shape(const Tensor2& a, const Tensor2& b, const char* op) {
  if (!a.same_shape(b))
    throw ShapeError(std::string(op) + ": shape mismatch " + a.shape_string() + " vs " +
                     b.shape_string());
}

namespace kernels {

// Blocked C (+)= A * B with A addressed as a[i * a_rs + p * a_cs] and B, C
// row-major. Every C element sums its products in ascending p; with
// kFromC the sum starts at the old C value, otherwise at zero and is added
// to C at the end.
template <bool kFromC>
inline void gemm(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t a_rs,
                 std::size_t a_cs, const double* b, std::size_t ldb, double* c, std::size_t ldc) {
  constexpr std::size_t MR = 4, NR = 8;
  for (std::size_t i0 = 0; i0 < m; i0 += MR) {
    const std::size_t mr = std::min(MR, m - i0);
    for (std::size_t j0 = 0; j0 < n; j0 += NR) {
      const std::size_t nr = std::min(NR, n - j0);
      if (mr == MR && nr == NR) {
        using v4 = double __attribute__((vector_size(32)));
        v4 acc[MR][2];
        for (std::size_t r = 0; r < MR; ++r)
          for (std::size_t h = 0; h < 2; ++h) {
            if constexpr (kFromC) {
              __builtin_memcpy(&acc[r][h], c + (i0 + r) * ldc + j0 + 4 * h, sizeof(v4));
            } else {
              acc[r][h] = v4{0.0, 0.0, 0.0, 0.0};
            }
          }
        for (std::size_t p = 0; p < k; ++p) {
          v4 b0, b1;
          __builtin_memcpy(&b0, b + p * ldb + j0, sizeof(v4));
          __builtin_memcpy(&b1, b + p * ldb + j0 + 4, sizeof(v4));
          for (std::size_t r = 0; r < MR; ++r) {
            const double av = a[(i0 + r) * a_rs + p * a_cs];
            acc[r][0] += av * b0;
            acc[r][1] += av * b1;
          }
        }
        for (std::size_t r = 0; r < MR; ++r)
          for (std::size_t h = 0; h < 2; ++h) {
            double* out = c + (i0 + r) * ldc + j0 + 4 * h;
            if constexpr (kFromC) {
              __builtin_memcpy(out, &acc[r][h], sizeof(v4));
            } else {
              for (std::size_t q = 0; q < 4; ++q) out[q] += acc[r][h][q];
            }
          }
      } else {
        for (std::size_t r = 0; r < mr; ++r)
          for (std::size_t q = 0; q < nr; ++q) {
            double& out = c[(i0 + r) * ldc + j0 + q];
            double sum = kFromC ? out : 0.0;
            for (std::size_t p = 0; p < k; ++p) sum += a[(i0 + r) * a_rs + p * a_cs] * b[p * ldb + j0 + q];
            out = kFromC ? sum : out + sum;
          }
      }
    }
  }
}

// C += A * B   (A: m x k, B: k x n)
inline void matmul_acc(const Tensor2& a, const Tensor2& b, Tensor2& c) {
  gemm<true>(a.rows, b.cols, a.cols, a.data.data(), a.cols, 1, b.data.data(), b.cols, c.data.data(), c.cols);
}

// C += A * B^T   (A: m x k, B: n x k); each dot product starts from zero.
inline void matmul_nt_acc(const Tensor2& a, const Tensor2& b, Tensor2& c) {
  const std::size_t k = a.cols, n = b.rows;
  std::vector<double> bt(k * n);
  for (std::size_t j = 0; j < n; ++j) {
    const double* brow = b.row_ptr(j);
    for (std::size_t p = 0; p < k; ++p) bt[p * n + j] = brow[p];
  }
  gemm<false>(a.rows, n, k, a.data.data(), a.cols, 1, bt.data(), n, c.data.data(), c.cols);
}

// C += A^T * B   (A: k x m, B: k x n)
inline void matmul_tn_acc(const Tensor2& a, const Tensor2& b, Tensor2& c) {
  gemm<true>(a.cols, b.cols, a.rows, a.data.data(), 1, a.cols, b.data.data(), b.cols, c.data.data(), c.cols);
}

// y += alpha * x
inline void axpy(double alpha, const double* __restrict x, double* __restrict y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

// out = x * W + b for a single row x (length k), W: k x n. Same operation
// order as matmul_acc followed by a bias add.
inline void affine_row(const double* x, const Tensor2& w, const double* bias, double* out) {
  const std::size_t k = w.rows, n = w.cols;
  for (std::size_t j = 0; j < n; ++j) out[j] = 0.0;
  for (std::size_t p = 0; p < k; ++p) axpy(x[p], w.row_ptr(p), out, n);
  if (bias)
    for (std::size_t j = 0; j < n; ++j) out[j] += bias[j];
}

// Four interleaved partial sums, combined as (s0 + s1) + (s2 + s3).
inline double dot(const double* a, const double* b, std::size_t n) {
  double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    s0 += a[i] * b[i];
    s1 += a[i + 1] * b[i + 1];
    s2 += a[i + 2] * b[i + 2];
    s3 += a[i + 3] * b[i + 3];
  }
  for (; i < n; ++i) s0 += a[i] * b[i];
  return (s0 + s1) + (s2 + s3);
}

// Row-wise layer normalization; writes the normalized (pre-affine) row and
// returns the inverse standard deviation.
inline double layer_norm_row(const double* x, std::size_t n, double eps, const double* gamma,
                             const double* beta, double* xhat, double* out) {
  double mean = 0.0;
  for (std::size_t i = 0; i < n; ++i) mean += x[i];
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = x[i] - mean;
    var += d * d;
  }
  var /= static_cast<double>(n);
  const double inv = 1.0 / std::sqrt(var + eps);
  for (std::size_t i = 0; i < n; ++i) {
    xhat[i] = (x[i] - mean) * inv;
    out[i] = xhat[i] * gamma[i] + beta[i];
  }
  return inv;
}

// In-place numerically stable log-softmax of a row; returns log-sum-exp.
inline double log_softmax_row(const double* logits, std::size_t n, double* out) {
  double mx = logits[0];
  for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, logits[i]);
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += std::exp(logits[i] - mx);
  const double lse = mx + std::log(s);
  for (std::size_t i = 0; i < n; ++i) out[i] = logits[i] - lse;
  return lse;
}

}  // namespace kernels

}  // namespace patchforge::nn
