#include "vitrel/tensor.hpp"

#include <algorithm>
#include <cassert>
#include <functional>
#include <limits>
#include <numeric>
#include <string>

#include "vitrel/meter.hpp"

namespace vitrel {
namespace {

std::size_t product(const std::vector<std::size_t>& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

void require_matrix(const QuantTensor& t, const char* what) {
  if (t.shape.size() != 2) throw ShapeError(std::string(what) + ": expected a 2-D tensor");
  if (t.data.size() != product(t.shape))
    throw ShapeError(std::string(what) + ": data length does not match shape");
}

}  // namespace

QuantTensor::QuantTensor(std::vector<std::size_t> s, float sc)
    : shape(std::move(s)), data(product(shape), 0), scale(sc) {
  validate();
}

QuantTensor::QuantTensor(std::vector<std::size_t> s, std::vector<std::int8_t> d, float sc)
    : shape(std::move(s)), data(std::move(d)), scale(sc) {
  validate();
}

std::size_t QuantTensor::rows() const { return shape.empty() ? 0 : shape[0]; }
std::size_t QuantTensor::cols() const { return shape.size() < 2 ? 1 : shape[1]; }

void QuantTensor::validate() const {
  if (!(scale > 0.0f) || !std::isfinite(scale))
    throw ConfigError("QuantTensor: scale must be positive and finite");
  if (data.size() != product(shape)) throw ShapeError("QuantTensor: data length != shape product");
}

AccuTile gemm(const QuantTensor& a, const QuantTensor& b, FaultSession* session,
              const ComponentId& id, PatchMapping mapping, OverheadMeter* meter) {
  require_matrix(a, "gemm lhs");
  require_matrix(b, "gemm rhs");
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k)
    throw ShapeError("gemm: inner dimensions differ (" + std::to_string(k) + " vs " +
                     std::to_string(b.rows()) + ")");
  if (k > kMaxInnerDim) throw ShapeError("gemm: inner dimension exceeds 2^16");

  AccuTile c(m, n);
  kernels::gemm_i8(a.data.data(), b.data.data(), c.data.data(), m, k, n);
  if (meter) meter->add_base_muls(std::uint64_t(m) * n * k);
  if (session == nullptr) return c;

  RegionSpec spec;
  spec.id = id;
  spec.words = std::uint64_t(m) * n * k;
  spec.width = 32;
  spec.mapping = mapping;
  spec.row_words = std::uint64_t(n) * k;
  const std::vector<Flip> flips = session->open_region(spec);

  // Replay each faulty cell MAC by MAC so a flip lands on the running
  // accumulator and later additions build on the corrupted word.
  std::size_t f = 0;
  while (f < flips.size()) {
    const std::uint64_t cell = flips[f].word / k;
    const std::size_t i = cell / n, j = cell % n;
    std::uint32_t acc = 0;
    for (std::size_t kk = 0; kk < k; ++kk) {
      acc += static_cast<std::uint32_t>(static_cast<std::int32_t>(a.data[i * k + kk]) *
                                        static_cast<std::int32_t>(b.data[kk * n + j]));
      const std::uint64_t word = cell * k + kk;
      while (f < flips.size() && flips[f].word == word) acc ^= std::uint32_t{1} << flips[f++].bit;
    }
    c.at(i, j) = static_cast<std::int32_t>(acc);
  }
  return c;
}

std::int32_t gemm_cell(const QuantTensor& a, const QuantTensor& b, std::size_t row,
                       std::size_t col) {
  const std::size_t k = a.cols(), n = b.cols();
  std::int32_t acc = 0;
  for (std::size_t kk = 0; kk < k; ++kk)
    acc += static_cast<std::int32_t>(a.data[row * k + kk]) *
           static_cast<std::int32_t>(b.data[kk * n + col]);
  return acc;
}

std::int8_t saturate_round(double v) {
  if (std::isnan(v)) return 0;
  if (v >= 127.0) return 127;
  if (v <= -128.0) return -128;
  return static_cast<std::int8_t>(std::lround(v));
}

QuantTensor requantize(const AccuTile& t, double scale_in, double scale_out) {
  if (!std::isfinite(scale_in) || !std::isfinite(scale_out) || !(scale_in > 0) ||
      !(scale_out > 0))
    throw ConfigError("requantize: scales must be positive and finite");
  const double ratio = scale_in / scale_out;
  QuantTensor out({t.rows, t.cols}, static_cast<float>(scale_out));
  for (std::size_t i = 0; i < t.data.size(); ++i)
    out.data[i] = saturate_round(static_cast<double>(t.data[i]) * ratio);
  return out;
}

QuantTensor quantize(std::span<const float> values, std::vector<std::size_t> shape) {
  float peak = 0.0f;
  for (float v : values)
    if (std::isfinite(v)) peak = std::max(peak, std::fabs(v));
  float scale = peak > 0.0f ? peak / 127.0f : 1.0f;
  if (!(scale > 0.0f) || !std::isfinite(scale)) scale = 1.0f;
  QuantTensor out(std::move(shape), scale);
  if (out.data.size() != values.size()) throw ShapeError("quantize: shape does not match values");
  const double inv = 1.0 / scale;
  for (std::size_t i = 0; i < values.size(); ++i) out.data[i] = saturate_round(values[i] * inv);
  return out;
}

}  // namespace vitrel
