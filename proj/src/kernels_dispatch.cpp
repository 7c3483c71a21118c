#include "tokerase/kernels.hpp"

#include <cstdlib>
#include <cstring>

#include "kernels_impl.hpp"

namespace tokerase::kernels {
namespace {

const OpsTable* table_for(Backend b) noexcept {
#if defined(TOKERASE_HAVE_AVX2)
  if (b == Backend::avx2) return &avx2::ops;
#endif
  (void)b;
  return &scalar::ops;
}

Backend pick_default() noexcept {
  if (const char* env = std::getenv("TOKERASE_KERNELS")) {
    if (std::strcmp(env, "scalar") == 0) return Backend::scalar;
    if (std::strcmp(env, "avx2") == 0 && avx2_supported()) return Backend::avx2;
  }
  return avx2_supported() ? Backend::avx2 : Backend::scalar;
}

struct Dispatch {
  Backend backend;
  const OpsTable* ops;
  Dispatch() : backend(pick_default()), ops(table_for(backend)) {}
};

Dispatch& dispatch() noexcept {
  static Dispatch d;
  return d;
}

}  // namespace

bool avx2_supported() noexcept {
#if defined(TOKERASE_HAVE_AVX2)
  return __builtin_cpu_supports("avx2") != 0;
#else
  return false;
#endif
}

Backend active_backend() noexcept { return dispatch().backend; }

bool set_backend(Backend b) noexcept {
  if (b == Backend::avx2 && !avx2_supported()) return false;
  dispatch().backend = b;
  dispatch().ops = table_for(b);
  return true;
}

const char* backend_name(Backend b) noexcept {
  return b == Backend::avx2 ? "avx2" : "scalar";
}

double sum(const double* x, std::size_t n) noexcept { return dispatch().ops->sum(x, n); }

double dot(const double* x, const double* y, std::size_t n) noexcept {
  return dispatch().ops->dot(x, y, n);
}

double max_value(const double* x, std::size_t n) noexcept {
  return dispatch().ops->max_value(x, n);
}

double max_abs(const double* x, std::size_t n) noexcept {
  return n == 0 ? 0.0 : dispatch().ops->max_abs(x, n);
}

void add(double* dst, const double* src, std::size_t n) noexcept {
  dispatch().ops->add(dst, src, n);
}

void axpy(double* dst, double a, const double* src, std::size_t n) noexcept {
  dispatch().ops->axpy(dst, a, src, n);
}

void scale(double* x, double a, std::size_t n) noexcept { dispatch().ops->scale(x, a, n); }

void adam_update(double* p, double* m, double* v, const double* g, std::size_t n,
                 double lr, double beta1, double beta2, double eps,
                 double inv_bc1, double inv_bc2) noexcept {
  dispatch().ops->adam_update(p, m, v, g, n, lr, beta1, beta2, eps, inv_bc1, inv_bc2);
}

}  // namespace tokerase::kernels
