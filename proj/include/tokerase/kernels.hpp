#pragma once

#include <cstddef>

// Dense double-array kernels behind the model math. Two backends: a scalar
// reference and an AVX2 variant, selected at runtime (the AVX2 one only when
// the CPU supports it). Every reduction accumulates into four lane-strided
// partial sums combined as (s0+s1)+(s2+s3), in both backends, so the two
// produce bit-identical results and the equivalence tests can compare exactly.
// Elementwise kernels use plain IEEE add/mul/div/sqrt (no FMA) for the same
// reason.
namespace tokerase::kernels {

enum class Backend { scalar, avx2 };

/// True when the running CPU (and this build) can execute the AVX2 backend.
bool avx2_supported() noexcept;

/// Backend currently in use. Defaults to the best supported one; the
/// TOKERASE_KERNELS environment variable ("scalar" or "avx2") overrides.
Backend active_backend() noexcept;

/// Force a backend. Returns false (and keeps the current one) if unsupported.
bool set_backend(Backend b) noexcept;

const char* backend_name(Backend b) noexcept;

/// Sum of x[0..n). Fixed 4-lane strided accumulation.
double sum(const double* x, std::size_t n) noexcept;

/// Dot product of x and y. Fixed 4-lane strided accumulation, no FMA.
double dot(const double* x, const double* y, std::size_t n) noexcept;

/// Maximum element; n must be >= 1.
double max_value(const double* x, std::size_t n) noexcept;

/// Maximum absolute element; 0 for n == 0.
double max_abs(const double* x, std::size_t n) noexcept;

/// dst[i] += src[i]
void add(double* dst, const double* src, std::size_t n) noexcept;

/// dst[i] += a * src[i]
void axpy(double* dst, double a, const double* src, std::size_t n) noexcept;

/// x[i] *= a
void scale(double* x, double a, std::size_t n) noexcept;

/// Bias-corrected Adam update over a flat parameter block:
///   m = b1*m + (1-b1)*g;  v = b2*v + (1-b2)*g*g
///   p -= lr * (m*inv_bc1) / (sqrt(v*inv_bc2) + eps)
/// inv_bc1/inv_bc2 are the 1/(1-beta^t) correction factors for this step.
void adam_update(double* p, double* m, double* v, const double* g,
                 std::size_t n, double lr, double beta1, double beta2,
                 double eps, double inv_bc1, double inv_bc2) noexcept;

}  // namespace tokerase::kernels
