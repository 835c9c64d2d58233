#include "gres/simd/kernels.hpp"

#include <atomic>

namespace gres::simd {

#if GRES_HAVE_AVX2
const Kernels& avx2_kernels_impl();
#endif
#if GRES_HAVE_NEON
const Kernels& neon_kernels_impl();
#endif

const Kernels* avx2_kernels() {
#if GRES_HAVE_AVX2
  if (__builtin_cpu_supports("avx2")) return &avx2_kernels_impl();
#endif
  return nullptr;
}

const Kernels* neon_kernels() {
#if GRES_HAVE_NEON
  // Advanced SIMD is mandatory on AArch64.
  return &neon_kernels_impl();
#else
  return nullptr;
#endif
}

std::vector<const Kernels*> available_kernels() {
  std::vector<const Kernels*> out{&scalar_kernels()};
  if (const Kernels* k = avx2_kernels()) out.push_back(k);
  if (const Kernels* k = neon_kernels()) out.push_back(k);
  return out;
}

namespace {

const Kernels* detect() {
  if (const Kernels* k = avx2_kernels()) return k;
  if (const Kernels* k = neon_kernels()) return k;
  return &scalar_kernels();
}

std::atomic<const Kernels*>& slot() {
  static std::atomic<const Kernels*> current{detect()};
  return current;
}

}  // namespace

const Kernels& active() { return *slot().load(std::memory_order_acquire); }

void select(Isa isa) {
  const Kernels* k = nullptr;
  switch (isa) {
    case Isa::kScalar: k = &scalar_kernels(); break;
    case Isa::kAvx2: k = avx2_kernels(); break;
    case Isa::kNeon: k = neon_kernels(); break;
  }
  slot().store(k ? k : &scalar_kernels(), std::memory_order_release);
}

}  // namespace gres::simd
