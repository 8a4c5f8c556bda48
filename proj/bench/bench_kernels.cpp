// Serial reference GEMM vs. the OpenMP kernel, plus protected GEMM cost.
#include <chrono>
#include <cstdio>
#include <random>

#include <omp.h>

#include "vitrel/abft.hpp"
#include "vitrel/tensor.hpp"

using namespace vitrel;

namespace {

QuantTensor random_tensor(std::size_t r, std::size_t c, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> d(-128, 127);
  QuantTensor t({r, c}, 1.0f);
  for (auto& v : t.data) v = static_cast<std::int8_t>(d(rng));
  return t;
}

template <class F>
double best_of(int reps, F&& f) {
  double best = 1e300;
  for (int i = 0; i < reps; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    f();
    const auto t1 = std::chrono::steady_clock::now();
    best = std::min(best, std::chrono::duration<double, std::milli>(t1 - t0).count());
  }
  return best;
}

}  // namespace

int main() {
  std::mt19937_64 rng(42);
  std::printf("threads: %d\n", omp_get_max_threads());
  std::printf("%-16s %10s %10s %8s %12s\n", "m x k x n", "ref ms", "omp ms", "speedup",
              "abft2x2 ms");
  const std::size_t shapes[][3] = {{65, 64, 192}, {65, 256, 64}, {256, 256, 256}, {512, 512, 512}};
  for (const auto& s : shapes) {
    const auto a = random_tensor(s[0], s[1], rng);
    const auto b = random_tensor(s[1], s[2], rng);
    std::vector<std::int32_t> c1(s[0] * s[2]), c2(s[0] * s[2]);
    const int reps = s[0] * s[1] * s[2] > 50'000'000 ? 2 : 5;
    const double t_ref = best_of(reps, [&] { ref::gemm_i8(a.data.data(), b.data.data(), c1.data(), s[0], s[1], s[2]); });
    const double t_omp = best_of(reps, [&] { kernels::gemm_i8(a.data.data(), b.data.data(), c2.data(), s[0], s[1], s[2]); });
    const double t_abft = best_of(reps, [&] {
      (void)protected_gemm(a, b, BlockSplit{2, 2}, nullptr, {}, nullptr);
    });
    if (c1 != c2) {
      std::printf("MISMATCH between reference and OpenMP kernels\n");
      return 1;
    }
    char label[32];
    std::snprintf(label, sizeof label, "%zux%zux%zu", s[0], s[1], s[2]);
    std::printf("%-16s %10.3f %10.3f %8.2f %12.3f\n", label, t_ref, t_omp, t_ref / t_omp, t_abft);
  }
  return 0;
}
