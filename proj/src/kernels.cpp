#include <cstring>

#include "vitrel/tensor.hpp"

namespace vitrel {

namespace kernels {

void gemm_i8(const std::int8_t* a, const std::int8_t* b, std::int32_t* c, std::size_t m,
             std::size_t k, std::size_t n) {
  const long rows = static_cast<long>(m);
#pragma omp parallel for schedule(static) if (m * n * k >= (std::size_t{1} << 18))
  for (long i = 0; i < rows; ++i) {
    std::int32_t* crow = c + i * n;
    std::memset(crow, 0, n * sizeof(std::int32_t));
    const std::int8_t* arow = a + i * k;
    for (std::size_t kk = 0; kk < k; ++kk) {
      const std::int32_t av = arow[kk];
      if (av == 0) continue;
      const std::int8_t* brow = b + kk * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * static_cast<std::int32_t>(brow[j]);
    }
  }
}

}  // namespace kernels

namespace ref {

void gemm_i8(const std::int8_t* a, const std::int8_t* b, std::int32_t* c, std::size_t m,
             std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      std::int32_t acc = 0;
      for (std::size_t kk = 0; kk < k; ++kk)
        acc += static_cast<std::int32_t>(a[i * k + kk]) * static_cast<std::int32_t>(b[kk * n + j]);
      c[i * n + j] = acc;
    }
}

}  // namespace ref

}  // namespace vitrel
