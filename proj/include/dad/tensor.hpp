#pragma once

#include <numeric>

#include "dad/core.hpp"

namespace dad {

// Dense row-major tensor of doubles. Shape [B,C,H,W] for images, [B,K] for
// logits, [K,d] for codebooks. Value semantics throughout.
struct Tensor {
  std::vector<int> shape;
  std::vector<real> v;

  Tensor() = default;
  explicit Tensor(std::vector<int> s) : shape(std::move(s)), v(numel_of(shape), real(0)) {}
  Tensor(std::vector<int> s, std::vector<real> data) : shape(std::move(s)), v(std::move(data)) {
    check(v.size() == size_t(numel_of(shape)), "tensor data does not match shape");
  }

  static int64_t numel_of(const std::vector<int>& s) {
    int64_t n = 1;
    for (int d : s) {
      check(d >= 0, "negative dimension");
      n *= d;
    }
    return n;
  }

  int64_t numel() const { return int64_t(v.size()); }
  int dim(int i) const { return shape[size_t(i)]; }
  int ndim() const { return int(shape.size()); }

  real* data() { return v.data(); }
  const real* data() const { return v.data(); }

  real& at(int64_t i) { return v[size_t(i)]; }
  real at(int64_t i) const { return v[size_t(i)]; }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  void fill(real x) { std::fill(v.begin(), v.end(), x); }

  static Tensor zeros(std::vector<int> s) { return Tensor(std::move(s)); }

  static Tensor full(std::vector<int> s, real x) {
    Tensor t(std::move(s));
    t.fill(x);
    return t;
  }

  static Tensor randn(std::vector<int> s, Rng& rng, real stddev = 1.0) {
    Tensor t(std::move(s));
    std::normal_distribution<real> d(0.0, stddev);
    for (auto& x : t.v) x = d(rng);
    return t;
  }

  static Tensor uniform(std::vector<int> s, Rng& rng, real lo, real hi) {
    Tensor t(std::move(s));
    std::uniform_real_distribution<real> d(lo, hi);
    for (auto& x : t.v) x = d(rng);
    return t;
  }

  bool all_finite() const {
    for (real x : v)
      if (!std::isfinite(x)) return false;
    return true;
  }
};

inline std::string shape_str(const std::vector<int>& s) {
  std::string out = "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

// C = alpha * op(A) * op(B) + beta * C, row-major. The inner j-loop is the
// vectorized hot path; parallel rows keep results independent of thread count.
void gemm(bool trans_a, bool trans_b, int m, int n, int k, real alpha, const real* a, int lda,
          const real* b, int ldb, real beta, real* c, int ldc);

}  // namespace dad
