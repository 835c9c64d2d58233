#pragma once

// Data-parallel inner loops used by the dense tensor ops and the geometry
// kernels. Every variant evaluates each output element with the same
// sequence of IEEE operations as the scalar reference (no FMA, no
// reassociation), so all variants agree bit for bit.

#include <cstddef>
#include <string_view>
#include <vector>

namespace gres::simd {

enum class Isa { kScalar, kAvx2, kNeon };

struct Kernels {
  Isa isa;
  std::string_view name;
  // y[i] += a * x[i]
  void (*axpy)(double a, const double* x, double* y, std::size_t n);
  // y[i] += x[i]
  void (*add)(const double* x, double* y, std::size_t n);
  // x[i] *= a
  void (*scale)(double a, double* x, std::size_t n);
  // y[i] += x[i] * z[i]
  void (*mul_add)(const double* x, const double* z, double* y, std::size_t n);
  // min_dist[i] = min(min_dist[i], (xs[i]-px)^2 + (ys[i]-py)^2 + (zs[i]-pz)^2)
  void (*update_min_sq_dist)(const double* xs, const double* ys, const double* zs,
                             double px, double py, double pz, double* min_dist,
                             std::size_t n);
};

const Kernels& scalar_kernels();

// nullptr when the variant is not compiled in or the CPU lacks the extension.
const Kernels* avx2_kernels();
const Kernels* neon_kernels();

// Every variant usable on this machine, scalar first.
std::vector<const Kernels*> available_kernels();

// Best variant for this CPU, chosen once on first use.
const Kernels& active();

// Forces a variant for the rest of the process (tests, benchmarking).
// Passing an unavailable Isa falls back to scalar.
void select(Isa isa);

}  // namespace gres::simd
