#include "kernels_impl.hpp"

#if defined(TOKERASE_HAVE_AVX2)

#include <immintrin.h>

#include <cmath>
#include <cstddef>

// AVX2 backend. Mirrors the scalar reference operation-for-operation:
// reductions keep the same four strided lanes, elementwise kernels issue the
// same mul/add/div/sqrt sequence per element (no FMA), so results are
// bit-identical to the scalar backend.
namespace tokerase::kernels::avx2 {
namespace {

double sum_impl(const double* x, std::size_t n) {
  __m256d acc = _mm256_setzero_pd();
  const std::size_t n4 = n & ~std::size_t{3};
  for (std::size_t i = 0; i < n4; i += 4)
    acc = _mm256_add_pd(acc, _mm256_loadu_pd(x + i));
  alignas(32) double a[4];
  _mm256_store_pd(a, acc);
  for (std::size_t i = n4; i < n; ++i) a[i - n4] += x[i];
  return (a[0] + a[1]) + (a[2] + a[3]);
}

double dot_impl(const double* x, const double* y, std::size_t n) {
  __m256d acc = _mm256_setzero_pd();
  const std::size_t n4 = n & ~std::size_t{3};
  for (std::size_t i = 0; i < n4; i += 4) {
    const __m256d prod = _mm256_mul_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i));
    acc = _mm256_add_pd(acc, prod);
  }
  alignas(32) double a[4];
  _mm256_store_pd(a, acc);
  for (std::size_t i = n4; i < n; ++i) a[i - n4] += x[i] * y[i];
  return (a[0] + a[1]) + (a[2] + a[3]);
}

double max_value_impl(const double* x, std::size_t n) {
  if (n < 4) {
    double m = x[0];
    for (std::size_t i = 1; i < n; ++i) m = x[i] > m ? x[i] : m;
    return m;
  }
  __m256d acc = _mm256_loadu_pd(x);
  const std::size_t n4 = n & ~std::size_t{3};
  for (std::size_t i = 4; i < n4; i += 4)
    acc = _mm256_max_pd(acc, _mm256_loadu_pd(x + i));
  alignas(32) double a[4];
  _mm256_store_pd(a, acc);
  double m = a[0];
  m = a[1] > m ? a[1] : m;
  m = a[2] > m ? a[2] : m;
  m = a[3] > m ? a[3] : m;
  for (std::size_t i = n4; i < n; ++i) m = x[i] > m ? x[i] : m;
  return m;
}

double max_abs_impl(const double* x, std::size_t n) {
  const __m256d signmask = _mm256_set1_pd(-0.0);
  __m256d acc = _mm256_setzero_pd();
  const std::size_t n4 = n & ~std::size_t{3};
  for (std::size_t i = 0; i < n4; i += 4)
    acc = _mm256_max_pd(acc, _mm256_andnot_pd(signmask, _mm256_loadu_pd(x + i)));
  alignas(32) double a[4];
  _mm256_store_pd(a, acc);
  double m = a[0];
  m = a[1] > m ? a[1] : m;
  m = a[2] > m ? a[2] : m;
  m = a[3] > m ? a[3] : m;
  for (std::size_t i = n4; i < n; ++i) {
    const double v = std::fabs(x[i]);
    m = v > m ? v : m;
  }
  return m;
}

void add_impl(double* dst, const double* src, std::size_t n) {
  const std::size_t n4 = n & ~std::size_t{3};
  for (std::size_t i = 0; i < n4; i += 4)
    _mm256_storeu_pd(dst + i, _mm256_add_pd(_mm256_loadu_pd(dst + i), _mm256_loadu_pd(src + i)));
  for (std::size_t i = n4; i < n; ++i) dst[i] += src[i];
}

void axpy_impl(double* dst, double a, const double* src, std::size_t n) {
  const __m256d av = _mm256_set1_pd(a);
  const std::size_t n4 = n & ~std::size_t{3};
  for (std::size_t i = 0; i < n4; i += 4) {
    const __m256d prod = _mm256_mul_pd(av, _mm256_loadu_pd(src + i));
    _mm256_storeu_pd(dst + i, _mm256_add_pd(_mm256_loadu_pd(dst + i), prod));
  }
  for (std::size_t i = n4; i < n; ++i) dst[i] += a * src[i];
}

void scale_impl(double* x, double a, std::size_t n) {
  const __m256d av = _mm256_set1_pd(a);
  const std::size_t n4 = n & ~std::size_t{3};
  for (std::size_t i = 0; i < n4; i += 4)
    _mm256_storeu_pd(x + i, _mm256_mul_pd(_mm256_loadu_pd(x + i), av));
  for (std::size_t i = n4; i < n; ++i) x[i] *= a;
}

void adam_update_impl(double* p, double* m, double* v, const double* g,
                      std::size_t n, double lr, double beta1, double beta2,
                      double eps, double inv_bc1, double inv_bc2) {
  const double om1s = 1.0 - beta1;
  const double om2s = 1.0 - beta2;
  const __m256d b1 = _mm256_set1_pd(beta1);
  const __m256d b2 = _mm256_set1_pd(beta2);
  const __m256d om1 = _mm256_set1_pd(om1s);
  const __m256d om2 = _mm256_set1_pd(om2s);
  const __m256d lrv = _mm256_set1_pd(lr);
  const __m256d epsv = _mm256_set1_pd(eps);
  const __m256d bc1 = _mm256_set1_pd(inv_bc1);
  const __m256d bc2 = _mm256_set1_pd(inv_bc2);
  const std::size_t n4 = n & ~std::size_t{3};
  for (std::size_t i = 0; i < n4; i += 4) {
    const __m256d gi = _mm256_loadu_pd(g + i);
    const __m256d mi = _mm256_add_pd(_mm256_mul_pd(b1, _mm256_loadu_pd(m + i)),
                                     _mm256_mul_pd(om1, gi));
    const __m256d g2 = _mm256_mul_pd(gi, gi);
    const __m256d vi = _mm256_add_pd(_mm256_mul_pd(b2, _mm256_loadu_pd(v + i)),
                                     _mm256_mul_pd(om2, g2));
    _mm256_storeu_pd(m + i, mi);
    _mm256_storeu_pd(v + i, vi);
    const __m256d mhat = _mm256_mul_pd(mi, bc1);
    const __m256d vhat = _mm256_mul_pd(vi, bc2);
    const __m256d denom = _mm256_add_pd(_mm256_sqrt_pd(vhat), epsv);
    const __m256d step = _mm256_mul_pd(lrv, _mm256_div_pd(mhat, denom));
    _mm256_storeu_pd(p + i, _mm256_sub_pd(_mm256_loadu_pd(p + i), step));
  }
  for (std::size_t i = n4; i < n; ++i) {
    const double gi = g[i];
    m[i] = beta1 * m[i] + om1s * gi;
    v[i] = beta2 * v[i] + om2s * (gi * gi);
    const double mhat = m[i] * inv_bc1;
    const double vhat = v[i] * inv_bc2;
    p[i] -= lr * (mhat / (std::sqrt(vhat) + eps));
  }
}

}  // namespace

const OpsTable ops = {
    sum_impl,  dot_impl,  max_value_impl, max_abs_impl,
    add_impl,  axpy_impl, scale_impl,     adam_update_impl,
};

}  // namespace tokerase::kernels::avx2

#endif  // TOKERASE_HAVE_AVX2
