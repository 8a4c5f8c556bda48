#pragma once

#include <cmath>
#include <concepts>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <span>
#include <vector>

#include "vitrel/component.hpp"
#include "vitrel/errors.hpp"
#include "vitrel/fault.hpp"

namespace vitrel {

class OverheadMeter;

/// Shape-carrying int8 tensor with a per-tensor symmetric scale
/// (real value = data * scale).
struct QuantTensor {
  std::vector<std::size_t> shape;
  std::vector<std::int8_t> data;
  float scale = 1.0f;

  QuantTensor() = default;
  QuantTensor(std::vector<std::size_t> shape, float scale);
  QuantTensor(std::vector<std::size_t> shape, std::vector<std::int8_t> data, float scale);

  std::size_t size() const { return data.size(); }
  std::size_t rows() const;
  std::size_t cols() const;
  std::int8_t at(std::size_t r, std::size_t c) const { return data[r * cols() + c]; }
  float real(std::size_t i) const { return static_cast<float>(data[i]) * scale; }

  // Throws ConfigError / ShapeError when an invariant is broken.
  void validate() const;
};

/// 32-bit GEMM accumulator tile (pre-requantization).
struct AccuTile {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::int32_t> data;

  AccuTile() = default;
  AccuTile(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0) {}

  std::int32_t& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  std::int32_t at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  bool operator==(const AccuTile&) const = default;
};

// Largest inner dimension for which int32 accumulation of int8 products
// cannot overflow: k * 128 * 128 <= 2^31 - 1.
inline constexpr std::size_t kMaxInnerDim = std::size_t{1} << 16;

namespace kernels {
// Row-parallel (OpenMP) int8 GEMM, c = a[m x k] * b[k x n].
void gemm_i8(const std::int8_t* a, const std::int8_t* b, std::int32_t* c, std::size_t m,
             std::size_t k, std::size_t n);
}  // namespace kernels

namespace ref {
// Serial triple loop; kept as the cross-check and benchmark baseline.
void gemm_i8(const std::int8_t* a, const std::int8_t* b, std::int32_t* c, std::size_t m,
             std::size_t k, std::size_t n);
}  // namespace ref

/// Integer GEMM. When `session` is non-null the call is one exposed region:
/// the accumulator word after every scalar MAC may take bit flips.
AccuTile gemm(const QuantTensor& a, const QuantTensor& b, FaultSession* session = nullptr,
              const ComponentId& id = {}, PatchMapping mapping = PatchMapping::kNone,
              OverheadMeter* meter = nullptr);

// Recomputes one output cell exactly (no injection).
std::int32_t gemm_cell(const QuantTensor& a, const QuantTensor& b, std::size_t row,
                       std::size_t col);

/// round(value * scale_in / scale_out), saturated to [-128, 127].
QuantTensor requantize(const AccuTile& t, double scale_in, double scale_out);

/// Symmetric per-tensor quantization with scale max|finite v| / 127.
/// NaN maps to 0 and infinities saturate.
QuantTensor quantize(std::span<const float> values, std::vector<std::size_t> shape);
std::int8_t saturate_round(double v);

// ---------------------------------------------------------------------------
// Non-linear functions. Templated on the real type: the model datapath runs
// them in float, tests and references in double.

/// Max-subtracted softmax. Throws ShapeError on an empty row. Non-finite
/// inputs produce non-finite outputs rather than throwing.
template <std::floating_point T>
void softmax(std::span<const T> row, std::span<T> out) {
  if (row.empty()) throw ShapeError("softmax: empty row");
  if (out.size() != row.size()) throw ShapeError("softmax: output length mismatch");
  T peak = row[0];
  for (T v : row) peak = v > peak ? v : peak;
  T sum = 0;
  for (std::size_t i = 0; i < row.size(); ++i) {
    out[i] = std::exp(row[i] - peak);
    sum += out[i];
  }
  for (T& v : out) v /= sum;
}

template <std::floating_point T>
std::vector<T> softmax(std::span<const T> row) {
  std::vector<T> out(row.size());
  softmax<T>(row, std::span<T>(out));
  return out;
}

/// Tanh-approximation GELU.
template <std::floating_point T>
T gelu(T x) {
  constexpr T kC = static_cast<T>(0.7978845608028654);  // sqrt(2/pi)
  return static_cast<T>(0.5) * x *
         (static_cast<T>(1) + std::tanh(kC * (x + static_cast<T>(0.044715) * x * x * x)));
}

template <std::floating_point T>
void layernorm(std::span<const T> row, std::span<const T> gamma, std::span<const T> beta,
               T eps, std::span<T> out) {
  if (row.size() != gamma.size() || row.size() != beta.size() || row.size() != out.size())
    throw ShapeError("layernorm: length mismatch");
  if (row.empty()) throw ShapeError("layernorm: empty row");
  if (!(eps > 0)) throw ConfigError("layernorm: eps must be positive");
  double mean = 0;
  for (T v : row) mean += v;
  mean /= static_cast<double>(row.size());
  double var = 0;
  for (T v : row) var += (v - mean) * (v - mean);
  var /= static_cast<double>(row.size());
  const double inv = 1.0 / std::sqrt(var + eps);
  for (std::size_t i = 0; i < row.size(); ++i)
    out[i] = static_cast<T>((row[i] - mean) * inv * gamma[i] + beta[i]);
}

template <std::floating_point T>
std::vector<T> layernorm(std::span<const T> row, std::span<const T> gamma,
                         std::span<const T> beta, T eps) {
  std::vector<T> out(row.size());
  layernorm<T>(row, gamma, beta, eps, std::span<T>(out));
  return out;
}

}  // namespace vitrel
