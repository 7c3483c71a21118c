#pragma once

#include <cstddef>

// Internal: per-backend entry points plus the dispatch table glue.
namespace tokerase::kernels {

struct OpsTable {
  double (*sum)(const double*, std::size_t);
  double (*dot)(const double*, const double*, std::size_t);
  double (*max_value)(const double*, std::size_t);
  double (*max_abs)(const double*, std::size_t);
  void (*add)(double*, const double*, std::size_t);
  void (*axpy)(double*, double, const double*, std::size_t);
  void (*scale)(double*, double, std::size_t);
  void (*adam_update)(double*, double*, double*, const double*, std::size_t,
                      double, double, double, double, double, double);
};

namespace scalar {
extern const OpsTable ops;
}

#if defined(TOKERASE_HAVE_AVX2)
namespace avx2 {
extern const OpsTable ops;
}
#endif

}  // namespace tokerase::kernels
