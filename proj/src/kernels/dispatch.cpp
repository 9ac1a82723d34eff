#include "latentdial/kernels.hpp"

#include <cstdlib>
#include <stdexcept>
#include <string>

namespace latentdial::kernels {

#if defined(LATENTDIAL_HAVE_AVX2)
const KernelTable* avx2_kernels_impl();
#endif

bool cpu_has_avx2() {
#if defined(LATENTDIAL_HAVE_AVX2) && (defined(__x86_64__) || defined(__i386__))
  static const bool supported = [] {
    __builtin_cpu_init();
    return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
  }();
  return supported;
#else
  return false;
#endif
}

const KernelTable* avx2_kernels() {
#if defined(LATENTDIAL_HAVE_AVX2)
  if (cpu_has_avx2()) return avx2_kernels_impl();
#endif
  return nullptr;
}

const KernelTable& active_kernels() {
  static const KernelTable& table = []() -> const KernelTable& {
    const char* forced = std::getenv("LATENTDIAL_KERNELS");
    const std::string choice = forced ? forced : "";
    if (choice == "scalar") return scalar_kernels();
    if (choice == "avx2") {
      if (const auto* t = avx2_kernels()) return *t;
      throw std::runtime_error("LATENTDIAL_KERNELS=avx2 but AVX2/FMA is unavailable");
    }
    if (!choice.empty()) throw std::runtime_error("unknown LATENTDIAL_KERNELS value: " + choice);
    if (const auto* t = avx2_kernels()) return *t;
    return scalar_kernels();
  }();
  return table;
}

}  // namespace latentdial::kernels
