// Compiled with -mavx2 -mfma. Only reachable after cpu_has_avx2() succeeds.

#include "latentdial/kernels.hpp"

#include <immintrin.h>

#include <algorithm>
#include <cmath>
#include <vector>

namespace latentdial::kernels {
namespace {

constexpr std::size_t kMr = 4;
constexpr std::size_t kNr = 8;
constexpr std::size_t kMc = 64;
constexpr std::size_t kNc = 256;

// Packs rows [i0, i0+mr) of op(A) into a k-major panel of width kMr,
// zero-filling missing rows so every tile runs the same instruction stream.
void pack_a(Trans ta, const double* a, std::size_t lda, std::size_t i0, std::size_t mr,
            std::size_t k, double* out) {
  for (std::size_t p = 0; p < k; ++p) {
    for (std::size_t r = 0; r < kMr; ++r) {
      double v = 0.0;
      if (r < mr) v = ta == Trans::No ? a[(i0 + r) * lda + p] : a[p * lda + i0 + r];
      out[p * kMr + r] = v;
    }
  }
}

void pack_b(Trans tb, const double* b, std::size_t ldb, std::size_t j0, std::size_t nr,
            std::size_t k, double* out) {
  for (std::size_t p = 0; p < k; ++p) {
    double* row = out + p * kNr;
    if (tb == Trans::No && nr == kNr) {
      const double* src = b + p * ldb + j0;
      for (std::size_t c = 0; c < kNr; ++c) row[c] = src[c];
      continue;
    }
    for (std::size_t c = 0; c < kNr; ++c) {
      double v = 0.0;
      if (c < nr) v = tb == Trans::No ? b[p * ldb + j0 + c] : b[(j0 + c) * ldb + p];
      row[c] = v;
    }
  }
}

void micro_kernel(std::size_t k, const double* pa, const double* pb, double* tile) {
  __m256d c00 = _mm256_setzero_pd(), c01 = _mm256_setzero_pd();
  __m256d c10 = _mm256_setzero_pd(), c11 = _mm256_setzero_pd();
  __m256d c20 = _mm256_setzero_pd(), c21 = _mm256_setzero_pd();
  __m256d c30 = _mm256_setzero_pd(), c31 = _mm256_setzero_pd();
  for (std::size_t p = 0; p < k; ++p) {
    const __m256d b0 = _mm256_loadu_pd(pb);
    const __m256d b1 = _mm256_loadu_pd(pb + 4);
    __m256d av = _mm256_broadcast_sd(pa);
    c00 = _mm256_fmadd_pd(av, b0, c00);
    c01 = _mm256_fmadd_pd(av, b1, c01);
    av = _mm256_broadcast_sd(pa + 1);
    c10 = _mm256_fmadd_pd(av, b0, c10);
    c11 = _mm256_fmadd_pd(av, b1, c11);
    av = _mm256_broadcast_sd(pa + 2);
    c20 = _mm256_fmadd_pd(av, b0, c20);
    c21 = _mm256_fmadd_pd(av, b1, c21);
    av = _mm256_broadcast_sd(pa + 3);
    c30 = _mm256_fmadd_pd(av, b0, c30);
    c31 = _mm256_fmadd_pd(av, b1, c31);
    pa += kMr;
    pb += kNr;
  }
  _mm256_storeu_pd(tile + 0, c00);
  _mm256_storeu_pd(tile + 4, c01);
  _mm256_storeu_pd(tile + 8, c10);
  _mm256_storeu_pd(tile + 12, c11);
  _mm256_storeu_pd(tile + 16, c20);
  _mm256_storeu_pd(tile + 20, c21);
  _mm256_storeu_pd(tile + 24, c30);
  _mm256_storeu_pd(tile + 28, c31);
}

void gemm_avx2(Trans ta, Trans tb, std::size_t m, std::size_t n, std::size_t k, double alpha,
               const double* a, std::size_t lda, const double* b, std::size_t ldb, double beta,
               double* c, std::size_t ldc) {
  if (m == 0 || n == 0) return;
  thread_local std::vector<double> packed_a;
  thread_local std::vector<double> packed_b;
  packed_a.resize(std::max<std::size_t>(1, kMc * k));
  packed_b.resize(std::max<std::size_t>(1, kNc * k));
  alignas(32) double tile[kMr * kNr];

  for (std::size_t jc = 0; jc < n; jc += kNc) {
    const std::size_t nc = std::min(kNc, n - jc);
    const std::size_t npanels = (nc + kNr - 1) / kNr;
    for (std::size_t q = 0; q < npanels; ++q) {
      const std::size_t j0 = jc + q * kNr;
      pack_b(tb, b, ldb, j0, std::min(kNr, n - j0), k, packed_b.data() + q * kNr * k);
    }
    for (std::size_t ic = 0; ic < m; ic += kMc) {
      const std::size_t mc = std::min(kMc, m - ic);
      const std::size_t mpanels = (mc + kMr - 1) / kMr;
      for (std::size_t r = 0; r < mpanels; ++r) {
        const std::size_t i0 = ic + r * kMr;
        pack_a(ta, a, lda, i0, std::min(kMr, m - i0), k, packed_a.data() + r * kMr * k);
      }
      for (std::size_t q = 0; q < npanels; ++q) {
        const std::size_t j0 = jc + q * kNr;
        const std::size_t nr = std::min(kNr, n - j0);
        for (std::size_t r = 0; r < mpanels; ++r) {
          const std::size_t i0 = ic + r * kMr;
          const std::size_t mr = std::min(kMr, m - i0);
          micro_kernel(k, packed_a.data() + r * kMr * k, packed_b.data() + q * kNr * k, tile);
          for (std::size_t ii = 0; ii < mr; ++ii) {
            double* out = c + (i0 + ii) * ldc + j0;
            const double* acc = tile + ii * kNr;
            if (beta == 0.0) {
              for (std::size_t jj = 0; jj < nr; ++jj) out[jj] = alpha * acc[jj];
            } else {
              for (std::size_t jj = 0; jj < nr; ++jj) out[jj] = alpha * acc[jj] + beta * out[jj];
            }
          }
        }
      }
    }
  }
}

// mul then add, matching the scalar rounding exactly.
void axpy_avx2(std::size_t n, double alpha, const double* x, double* y) {
  const __m256d va = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d prod = _mm256_mul_pd(va, _mm256_loadu_pd(x + i));
    _mm256_storeu_pd(y + i, _mm256_add_pd(_mm256_loadu_pd(y + i), prod));
  }
  for (; i < n; ++i) y[i] += alpha * x[i];
}

double dot_avx2(std::size_t n, const double* x, const double* y) {
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), acc0);
    acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i + 4), _mm256_loadu_pd(y + i + 4), acc1);
  }
  alignas(32) double lanes[4];
  _mm256_store_pd(lanes, _mm256_add_pd(acc0, acc1));
  double acc = (lanes[0] + lanes[1]) + (lanes[2] + lanes[3]);
  for (; i < n; ++i) acc += x[i] * y[i];
  return acc;
}

// Same operation order as adam_scalar, so results are bit-identical.
void adam_avx2(std::size_t n, const AdamArgs& args, const double* grad, double* m, double* v,
               double* param) {
  const __m256d b1 = _mm256_set1_pd(args.beta1);
  const __m256d b2 = _mm256_set1_pd(args.beta2);
  const __m256d ob1 = _mm256_set1_pd(1.0 - args.beta1);
  const __m256d ob2 = _mm256_set1_pd(1.0 - args.beta2);
  const __m256d bc1 = _mm256_set1_pd(args.bc1);
  const __m256d bc2 = _mm256_set1_pd(args.bc2);
  const __m256d lr = _mm256_set1_pd(args.lr);
  const __m256d eps = _mm256_set1_pd(args.eps);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d g = _mm256_loadu_pd(grad + i);
    const __m256d mi = _mm256_add_pd(_mm256_mul_pd(b1, _mm256_loadu_pd(m + i)), _mm256_mul_pd(ob1, g));
    const __m256d vi = _mm256_add_pd(_mm256_mul_pd(b2, _mm256_loadu_pd(v + i)),
                                     _mm256_mul_pd(ob2, _mm256_mul_pd(g, g)));
    _mm256_storeu_pd(m + i, mi);
    _mm256_storeu_pd(v + i, vi);
    const __m256d mhat = _mm256_div_pd(mi, bc1);
    const __m256d vhat = _mm256_div_pd(vi, bc2);
    const __m256d step = _mm256_div_pd(_mm256_mul_pd(lr, mhat), _mm256_add_pd(_mm256_sqrt_pd(vhat), eps));
    _mm256_storeu_pd(param + i, _mm256_sub_pd(_mm256_loadu_pd(param + i), step));
  }
  const double one_b1 = 1.0 - args.beta1;
  const double one_b2 = 1.0 - args.beta2;
  for (; i < n; ++i) {
    const double g = grad[i];
    m[i] = args.beta1 * m[i] + one_b1 * g;
    v[i] = args.beta2 * v[i] + one_b2 * (g * g);
    const double mhat = m[i] / args.bc1;
    const double vhat = v[i] / args.bc2;
    param[i] -= args.lr * mhat / (std::sqrt(vhat) + args.eps);
  }
}

}  // namespace

const KernelTable* avx2_kernels_impl() {
  static const KernelTable table{"avx2", gemm_avx2, axpy_avx2, dot_avx2, adam_avx2};
  return &table;
}

}  // namespace latentdial::kernels
