// Test-side oracles and fixtures. Nothing here calls into the library's own
// arithmetic: every reference value is recomputed from first principles.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "vitrel/dataset.hpp"
#include "vitrel/fault.hpp"
#include "vitrel/tensor.hpp"

namespace oracle {

inline std::vector<std::int64_t> gemm(const vitrel::QuantTensor& a, const vitrel::QuantTensor& b) {
  const std::size_t m = a.shape[0], k = a.shape[1], n = b.shape[1];
  std::vector<std::int64_t> c(m * n, 0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      std::int64_t s = 0;
      for (std::size_t t = 0; t < k; ++t)
        s += std::int64_t(a.data[i * k + t]) * std::int64_t(b.data[t * n + j]);
      c[i * n + j] = s;
    }
  return c;
}

inline double gelu_exact(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

inline std::vector<long double> softmax_direct(const std::vector<double>& x) {
  long double sum = 0;
  std::vector<long double> e(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) sum += e[i] = std::exp(static_cast<long double>(x[i]));
  for (auto& v : e) v /= sum;
  return e;
}

inline std::vector<long double> layernorm_two_pass(const std::vector<double>& x,
                                                   const std::vector<double>& g,
                                                   const std::vector<double>& b, double eps) {
  long double mean = 0, var = 0;
  for (double v : x) mean += v;
  mean /= x.size();
  for (double v : x) var += (v - mean) * (v - mean);
  var /= x.size();
  std::vector<long double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i)
    out[i] = (x[i] - mean) / std::sqrt(var + eps) * g[i] + b[i];
  return out;
}

// Monte-Carlo estimate of P(some block has two faulty cells on a shared row
// or column | the call has any faulty cell). Flips are placed one at a time
// over the 32*k*m*n exposed bits: a binomial count, then uniform positions.
struct CollisionEstimate {
  double fraction = 0;
  std::uint64_t faulty_calls = 0;
};

inline CollisionEstimate collision_mc(std::size_t m, std::size_t k, std::size_t n,
                                      std::uint32_t rb, std::uint32_t cb, double ber,
                                      std::uint64_t calls, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const double bits = 32.0 * k * m * n;
  std::binomial_distribution<std::uint64_t> count(static_cast<std::uint64_t>(bits), ber);
  std::uniform_int_distribution<std::uint64_t> cell(0, m * n - 1);
  auto block_of = [&](std::size_t r, std::size_t c) {
    // Near-equal split, same convention as floor(extent * i / parts) edges.
    std::size_t bi = 0, bj = 0;
    while (m * (bi + 1) / rb <= r) ++bi;
    while (n * (bj + 1) / cb <= c) ++bj;
    return bi * cb + bj;
  };
  CollisionEstimate est;
  std::uint64_t failed = 0;
  std::vector<std::size_t> cells;
  for (std::uint64_t call = 0; call < calls; ++call) {
    const std::uint64_t flips = count(rng);
    if (flips == 0) continue;
    ++est.faulty_calls;
    cells.clear();
    for (std::uint64_t f = 0; f < flips; ++f) cells.push_back(cell(rng));
    std::sort(cells.begin(), cells.end());
    cells.erase(std::unique(cells.begin(), cells.end()), cells.end());
    bool fail = false;
    for (std::size_t x = 0; x < cells.size() && !fail; ++x)
      for (std::size_t y = x + 1; y < cells.size() && !fail; ++y) {
        const std::size_t r1 = cells[x] / n, c1 = cells[x] % n, r2 = cells[y] / n, c2 = cells[y] % n;
        fail = (r1 == r2 || c1 == c2) && block_of(r1, c1) == block_of(r2, c2);
      }
    failed += fail;
  }
  est.fraction = est.faulty_calls ? double(failed) / double(est.faulty_calls) : 0.0;
  return est;
}

}  // namespace oracle

namespace fixture {

inline vitrel::QuantTensor random_tensor(std::size_t r, std::size_t c, std::mt19937_64& rng,
                                         float scale = 1.0f) {
  std::uniform_int_distribution<int> d(-128, 127);
  vitrel::QuantTensor t({r, c}, scale);
  for (auto& v : t.data) v = static_cast<std::int8_t>(d(rng));
  return t;
}

// Session that flips exactly the given (row, col, bit) accumulator bits of
// one GEMM's final MAC, so each cell changes by +/- 2^bit.
struct CellFault {
  std::size_t row, col;
  int bit;
};

class GemmFaults {
 public:
  GemmFaults(std::size_t m, std::size_t k, std::size_t n) : m_(m), k_(k), n_(n) {
    vitrel::RegionSpec spec;
    spec.words = std::uint64_t(m) * n * k;
    spec.width = 32;
    spec.row_words = std::uint64_t(n) * k;
    census_.append(spec);
  }
  vitrel::FaultSession session(const std::vector<CellFault>& faults) const {
    std::vector<std::uint64_t> pos;
    for (const auto& f : faults)
      pos.push_back(((f.row * n_ + f.col) * k_ + (k_ - 1)) * 32 + f.bit);
    return vitrel::FaultSession::from_positions(pos, vitrel::Scope::everything(), census_);
  }

 private:
  std::size_t m_, k_, n_;
  vitrel::Census census_;
};

// Tiny preset with a fitted head and its synthetic data, built once.
struct TinyWorld {
  vitrel::Model model;
  vitrel::DatasetSplit data;
};

inline const TinyWorld& tiny() {
  static const TinyWorld w = [] {
    TinyWorld t;
    auto cfg = vitrel::preset("tiny");
    vitrel::SyntheticSpec spec;
    spec.per_class_eval = 50;
    t.data = vitrel::make_synthetic(cfg, spec);
    t.model = vitrel::fit_head(vitrel::build_model(cfg), t.data.train);
    return t;
  }();
  return w;
}

inline vitrel::Dataset first(const vitrel::Dataset& d, std::size_t n) {
  return vitrel::Dataset(d.begin(), d.begin() + std::min(n, d.size()));
}

inline const TinyWorld& micro() {
  static const TinyWorld w = [] {
    TinyWorld t;
    auto cfg = vitrel::preset("micro");
    vitrel::SyntheticSpec spec;
    spec.per_class_train = 30;
    spec.per_class_eval = 10;
    t.data = vitrel::make_synthetic(cfg, spec);
    t.model = vitrel::fit_head(vitrel::build_model(cfg), t.data.train);
    return t;
  }();
  return w;
}

}  // namespace fixture
