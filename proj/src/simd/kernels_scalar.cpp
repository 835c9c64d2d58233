#include "gres/simd/kernels.hpp"

namespace gres::simd {
namespace {

void axpy(double a, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

void add(const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += x[i];
}

void scale(double a, double* x, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) x[i] *= a;
}

void mul_add(const double* x, const double* z, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += x[i] * z[i];
}

void update_min_sq_dist(const double* xs, const double* ys, const double* zs,
                        double px, double py, double pz, double* min_dist,
                        std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = xs[i] - px;
    const double dy = ys[i] - py;
    const double dz = zs[i] - pz;
    const double d = dx * dx + dy * dy + dz * dz;
    if (d < min_dist[i]) min_dist[i] = d;
  }
}

}  // namespace

const Kernels& scalar_kernels() {
  static const Kernels k{Isa::kScalar, "scalar", axpy, add, scale, mul_add,
                         update_min_sq_dist};
  return k;
}

}  // namespace gres::simd
