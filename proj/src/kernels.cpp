#include "freefix/kernels.hpp"

#include <algorithm>
#include <atomic>

#if defined(__x86_64__) || defined(_M_X64)
#define FREEFIX_X86 1
#include <immintrin.h>
#else
#define FREEFIX_X86 0
#endif

namespace freefix::kernels {

namespace {

std::atomic<bool> g_force_scalar{false};

bool cpu_has_avx2() {
#if FREEFIX_X86
    return __builtin_cpu_supports("avx2");
#else
    return false;
#endif
}

const bool g_avx2 = cpu_has_avx2();

inline bool use_avx2() { return g_avx2 && !g_force_scalar.load(std::memory_order_relaxed); }

// ---- scalar reference kernels ----

void axpby_scalar(const float* x, const float* y, float* out, std::size_t n,
                  float a, float b) {
    for (std::size_t i = 0; i < n; ++i) out[i] = a * x[i] + b * y[i];
}

void blend_masked_scalar(const float* m, const float* r, const float* p,
                         float* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i)
        out[i] = m[i] * r[i] + (1.0f - m[i]) * p[i];
}

void blend_overall_scalar(const float* m, const float* bm, const float* r,
                          const float* p, float* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
        const float inner = bm[i] * r[i] + (1.0f - bm[i]) * p[i];
        out[i] = m[i] * r[i] + (1.0f - m[i]) * inner;
    }
}

void clamp01_scalar(const float* x, float* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i)
        out[i] = std::min(1.0f, std::max(0.0f, x[i]));
}

void scale_add_scalar(const float* x, float* out, std::size_t n, float a, float b) {
    for (std::size_t i = 0; i < n; ++i) out[i] = a * x[i] + b;
}

void hadamard_scalar(const float* x, const float* y, float* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = x[i] * y[i];
}

double sum_abs_diff_scalar(const float* x, const float* y, std::size_t n) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += std::abs(double(x[i]) - double(y[i]));
    return acc;
}

double sum_sq_diff_scalar(const float* x, const float* y, std::size_t n) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double d = double(x[i]) - double(y[i]);
        acc += d * d;
    }
    return acc;
}

double sum_scalar(const float* x, std::size_t n) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += double(x[i]);
    return acc;
}

#if FREEFIX_X86

// ---- AVX2 variants ----

__attribute__((target("avx2,fma")))
void axpby_avx2(const float* x, const float* y, float* out, std::size_t n,
                float a, float b) {
    const __m256 va = _mm256_set1_ps(a), vb = _mm256_set1_ps(b);
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        __m256 vx = _mm256_loadu_ps(x + i);
        __m256 vy = _mm256_loadu_ps(y + i);
        _mm256_storeu_ps(out + i, _mm256_fmadd_ps(va, vx, _mm256_mul_ps(vb, vy)));
    }
    for (; i < n; ++i) out[i] = a * x[i] + b * y[i];
}

__attribute__((target("avx2,fma")))
void blend_masked_avx2(const float* m, const float* r, const float* p,
                       float* out, std::size_t n) {
    const __m256 one = _mm256_set1_ps(1.0f);
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        __m256 vm = _mm256_loadu_ps(m + i);
        __m256 vr = _mm256_loadu_ps(r + i);
        __m256 vp = _mm256_loadu_ps(p + i);
        __m256 res = _mm256_add_ps(_mm256_mul_ps(vm, vr),
                                   _mm256_mul_ps(_mm256_sub_ps(one, vm), vp));
        _mm256_storeu_ps(out + i, res);
    }
    for (; i < n; ++i) out[i] = m[i] * r[i] + (1.0f - m[i]) * p[i];
}

__attribute__((target("avx2,fma")))
void blend_overall_avx2(const float* m, const float* bm, const float* r,
                        const float* p, float* out, std::size_t n) {
    const __m256 one = _mm256_set1_ps(1.0f);
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        __m256 vm = _mm256_loadu_ps(m + i);
        __m256 vbm = _mm256_loadu_ps(bm + i);
        __m256 vr = _mm256_loadu_ps(r + i);
        __m256 vp = _mm256_loadu_ps(p + i);
        __m256 inner = _mm256_add_ps(_mm256_mul_ps(vbm, vr),
                                     _mm256_mul_ps(_mm256_sub_ps(one, vbm), vp));
        __m256 res = _mm256_add_ps(_mm256_mul_ps(vm, vr),
                                   _mm256_mul_ps(_mm256_sub_ps(one, vm), inner));
        _mm256_storeu_ps(out + i, res);
    }
    for (; i < n; ++i) {
        const float inner = bm[i] * r[i] + (1.0f - bm[i]) * p[i];
        out[i] = m[i] * r[i] + (1.0f - m[i]) * inner;
    }
}

__attribute__((target("avx2")))
void clamp01_avx2(const float* x, float* out, std::size_t n) {
    const __m256 zero = _mm256_setzero_ps(), one = _mm256_set1_ps(1.0f);
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        __m256 v = _mm256_loadu_ps(x + i);
        _mm256_storeu_ps(out + i, _mm256_min_ps(one, _mm256_max_ps(zero, v)));
    }
    for (; i < n; ++i) out[i] = std::min(1.0f, std::max(0.0f, x[i]));
}

__attribute__((target("avx2,fma")))
void scale_add_avx2(const float* x, float* out, std::size_t n, float a, float b) {
    const __m256 va = _mm256_set1_ps(a), vb = _mm256_set1_ps(b);
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8)
        _mm256_storeu_ps(out + i, _mm256_fmadd_ps(va, _mm256_loadu_ps(x + i), vb));
    for (; i < n; ++i) out[i] = a * x[i] + b;
}

__attribute__((target("avx2")))
void hadamard_avx2(const float* x, const float* y, float* out, std::size_t n) {
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8)
        _mm256_storeu_ps(out + i,
                         _mm256_mul_ps(_mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i)));
    for (; i < n; ++i) out[i] = x[i] * y[i];
}

__attribute__((target("avx2")))
double sum_abs_diff_avx2(const float* x, const float* y, std::size_t n) {
    __m256d acc = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        __m128 vx = _mm_loadu_ps(x + i);
        __m128 vy = _mm_loadu_ps(y + i);
        __m256d d = _mm256_sub_pd(_mm256_cvtps_pd(vx), _mm256_cvtps_pd(vy));
        // abs via sign-bit mask
        const __m256d mask = _mm256_castsi256_pd(_mm256_set1_epi64x(0x7fffffffffffffffLL));
        acc = _mm256_add_pd(acc, _mm256_and_pd(d, mask));
    }
    alignas(32) double lanes[4];
    _mm256_store_pd(lanes, acc);
    double total = lanes[0] + lanes[1] + lanes[2] + lanes[3];
    for (; i < n; ++i) total += std::abs(double(x[i]) - double(y[i]));
    return total;
}

__attribute__((target("avx2,fma")))
double sum_sq_diff_avx2(const float* x, const float* y, std::size_t n) {
    __m256d acc = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        __m128 vx = _mm_loadu_ps(x + i);
        __m128 vy = _mm_loadu_ps(y + i);
        __m256d d = _mm256_sub_pd(_mm256_cvtps_pd(vx), _mm256_cvtps_pd(vy));
        acc = _mm256_fmadd_pd(d, d, acc);
    }
    alignas(32) double lanes[4];
    _mm256_store_pd(lanes, acc);
    double total = lanes[0] + lanes[1] + lanes[2] + lanes[3];
    for (; i < n; ++i) {
        const double d = double(x[i]) - double(y[i]);
        total += d * d;
    }
    return total;
}

__attribute__((target("avx2")))
double sum_avx2(const float* x, std::size_t n) {
    __m256d acc = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4)
        acc = _mm256_add_pd(acc, _mm256_cvtps_pd(_mm_loadu_ps(x + i)));
    alignas(32) double lanes[4];
    _mm256_store_pd(lanes, acc);
    double total = lanes[0] + lanes[1] + lanes[2] + lanes[3];
    for (; i < n; ++i) total += double(x[i]);
    return total;
}

#endif // FREEFIX_X86

} // namespace

Isa active_isa() { return use_avx2() ? Isa::Avx2 : Isa::Scalar; }
void force_scalar(bool on) { g_force_scalar.store(on, std::memory_order_relaxed); }
bool simd_enabled() { return use_avx2(); }

void axpby(const float* x, const float* y, float* out, std::size_t n, float a, float b) {
#if FREEFIX_X86
    if (use_avx2()) return axpby_avx2(x, y, out, n, a, b);
#endif
    axpby_scalar(x, y, out, n, a, b);
}

void blend_masked(const float* m, const float* r, const float* p, float* out, std::size_t n) {
#if FREEFIX_X86
    if (use_avx2()) return blend_masked_avx2(m, r, p, out, n);
#endif
    blend_masked_scalar(m, r, p, out, n);
}

void blend_overall(const float* m, const float* bm, const float* r, const float* p,
                   float* out, std::size_t n) {
#if FREEFIX_X86
    if (use_avx2()) return blend_overall_avx2(m, bm, r, p, out, n);
#endif
    blend_overall_scalar(m, bm, r, p, out, n);
}

void clamp01(const float* x, float* out, std::size_t n) {
#if FREEFIX_X86
    if (use_avx2()) return clamp01_avx2(x, out, n);
#endif
    clamp01_scalar(x, out, n);
}

void scale_add(const float* x, float* out, std::size_t n, float a, float b) {
#if FREEFIX_X86
    if (use_avx2()) return scale_add_avx2(x, out, n, a, b);
#endif
    scale_add_scalar(x, out, n, a, b);
}

void hadamard(const float* x, const float* y, float* out, std::size_t n) {
#if FREEFIX_X86
    if (use_avx2()) return hadamard_avx2(x, y, out, n);
#endif
    hadamard_scalar(x, y, out, n);
}

double sum_abs_diff(const float* x, const float* y, std::size_t n) {
#if FREEFIX_X86
    if (use_avx2()) return sum_abs_diff_avx2(x, y, n);
#endif
    return sum_abs_diff_scalar(x, y, n);
}

double sum_sq_diff(const float* x, const float* y, std::size_t n) {
#if FREEFIX_X86
    if (use_avx2()) return sum_sq_diff_avx2(x, y, n);
#endif
    return sum_sq_diff_scalar(x, y, n);
}

double sum(const float* x, std::size_t n) {
#if FREEFIX_X86
    if (use_avx2()) return sum_avx2(x, n);
#endif
    return sum_scalar(x, n);
}

} // namespace freefix::kernels
