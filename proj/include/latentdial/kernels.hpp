#pragma once

// Dense arithmetic kernels used by every layer. Each kernel has a scalar
// reference implementation and, where the CPU supports it, an AVX2/FMA
// variant. The variant is picked once at startup (see active_kernels()).

#include <cstddef>
#include <string_view>

namespace latentdial::kernels {

enum class Trans { No, Yes };

// C[M x N] = alpha * op(A) * op(B) + beta * C, row-major with leading dims.
// op(A) is M x K, op(B) is K x N. Each output element is accumulated over k
// in ascending order, independent of its row/column position.
using GemmFn = void (*)(Trans ta, Trans tb, std::size_t m, std::size_t n, std::size_t k,
                        double alpha, const double* a, std::size_t lda, const double* b,
                        std::size_t ldb, double beta, double* c, std::size_t ldc);

// y += alpha * x
using AxpyFn = void (*)(std::size_t n, double alpha, const double* x, double* y);

using DotFn = double (*)(std::size_t n, const double* x, const double* y);

// One Adam update over a flat parameter buffer. bc1/bc2 are the bias
// corrections 1 - beta^t.
struct AdamArgs {
  double lr;
  double beta1;
  double beta2;
  double eps;
  double bc1;
  double bc2;
};
using AdamFn = void (*)(std::size_t n, const AdamArgs& args, const double* grad, double* m,
                        double* v, double* param);

struct KernelTable {
  std::string_view name;
  GemmFn gemm;
  AxpyFn axpy;
  DotFn dot;
  AdamFn adam;
};

const KernelTable& scalar_kernels();

// Null when the binary was built without AVX2 support or the CPU lacks it.
const KernelTable* avx2_kernels();

bool cpu_has_avx2();

// Selected once: LATENTDIAL_KERNELS=scalar|avx2 forces a table, otherwise the
// widest supported ISA wins.
const KernelTable& active_kernels();

}  // namespace latentdial::kernels
