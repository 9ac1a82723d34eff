#include "latentdial/kernels.hpp"

#include <cmath>

namespace latentdial::kernels {
namespace {

inline double at(const double* p, std::size_t ld, Trans t, std::size_t row, std::size_t col) {
  return t == Trans::No ? p[row * ld + col] : p[col * ld + row];
}

void gemm_scalar(Trans ta, Trans tb, std::size_t m, std::size_t n, std::size_t k, double alpha,
                 const double* a, std::size_t lda, const double* b, std::size_t ldb, double beta,
                 double* c, std::size_t ldc) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += at(a, lda, ta, i, p) * at(b, ldb, tb, p, j);
      double& out = c[i * ldc + j];
      out = beta == 0.0 ? alpha * acc : alpha * acc + beta * out;
    }
  }
}

void axpy_scalar(std::size_t n, double alpha, const double* x, double* y) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

double dot_scalar(std::size_t n, const double* x, const double* y) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += x[i] * y[i];
  return acc;
}

void adam_scalar(std::size_t n, const AdamArgs& args, const double* grad, double* m, double* v,
                 double* param) {
  const double one_b1 = 1.0 - args.beta1;
  const double one_b2 = 1.0 - args.beta2;
  for (std::size_t i = 0; i < n; ++i) {
    const double g = grad[i];
    m[i] = args.beta1 * m[i] + one_b1 * g;
    v[i] = args.beta2 * v[i] + one_b2 * (g * g);
    const double mhat = m[i] / args.bc1;
    const double vhat = v[i] / args.bc2;
    param[i] -= args.lr * mhat / (std::sqrt(vhat) + args.eps);
  }
}

}  // namespace

const KernelTable& scalar_kernels() {
  static const KernelTable table{"scalar", gemm_scalar, axpy_scalar, dot_scalar, adam_scalar};
  return table;
}

}  // namespace latentdial::kernels
