#pragma once

// Elementwise float kernels used by the image pipeline. Each kernel has a
// scalar reference implementation and an AVX2 variant; the active variant is
// chosen once at startup from CPU capabilities. simd_enabled()/force_scalar()
// exist so tests can compare the two paths on the same data.

#include <cstddef>

namespace freefix::kernels {

enum class Isa { Scalar, Avx2 };

Isa active_isa();
void force_scalar(bool on);
bool simd_enabled();

// out = a*x + b*y
void axpby(const float* x, const float* y, float* out, std::size_t n,
           float a, float b);

// out = m*r + (1-m)*p, mask broadcast per element (same length)
void blend_masked(const float* m, const float* r, const float* p, float* out,
                  std::size_t n);

// Overall-guidance blend: out = m*r + (1-m)*(bm*r + (1-bm)*p)
// where bm = beta * alpha_mask (per element).
void blend_overall(const float* m, const float* bm, const float* r,
                   const float* p, float* out, std::size_t n);

// out = clamp(x, 0, 1)
void clamp01(const float* x, float* out, std::size_t n);

// out = a*x + b (per element)
void scale_add(const float* x, float* out, std::size_t n, float a, float b);

// out = x * y (Hadamard)
void hadamard(const float* x, const float* y, float* out, std::size_t n);

// reductions (double accumulators)
double sum_abs_diff(const float* x, const float* y, std::size_t n);
double sum_sq_diff(const float* x, const float* y, std::size_t n);
double sum(const float* x, std::size_t n);

} // namespace freefix::kernels
