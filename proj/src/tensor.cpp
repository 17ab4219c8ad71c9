#include "dad/tensor.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace dad {

namespace {

inline real fetch(const real* m, int ld, bool trans, int i, int j) {
  return trans ? m[size_t(j) * ld + i] : m[size_t(i) * ld + j];
}

}  // namespace

void gemm(bool trans_a, bool trans_b, int m, int n, int k, real alpha, const real* a, int lda,
          const real* b, int ldb, real beta, real* c, int ldc) {
  if (m == 0 || n == 0) return;
#pragma omp parallel for schedule(static)
  for (int i = 0; i < m; ++i) {
    real* crow = c + size_t(i) * ldc;
    if (beta == 0) {
      for (int j = 0; j < n; ++j) crow[j] = 0;
    } else if (beta != 1) {
      for (int j = 0; j < n; ++j) crow[j] *= beta;
    }
    if (!trans_a && !trans_b) {
      const real* arow = a + size_t(i) * lda;
      for (int p = 0; p < k; ++p) {
        const real aip = alpha * arow[p];
        const real* brow = b + size_t(p) * ldb;
        for (int j = 0; j < n; ++j) crow[j] += aip * brow[j];
      }
    } else if (trans_a && !trans_b) {
      for (int p = 0; p < k; ++p) {
        const real aip = alpha * a[size_t(p) * lda + i];
        const real* brow = b + size_t(p) * ldb;
        for (int j = 0; j < n; ++j) crow[j] += aip * brow[j];
      }
    } else {
      for (int j = 0; j < n; ++j) {
        real acc = 0;
        for (int p = 0; p < k; ++p) acc += fetch(a, lda, trans_a, i, p) * fetch(b, ldb, trans_b, p, j);
        crow[j] += alpha * acc;
      }
    }
  }
}

}  // namespace dad
