#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <vector>

#include "vitrel/meter.hpp"
#include "vitrel/tensor.hpp"

namespace vitrel {

/// Column sums and row sums of the expected product, computed from the
/// operands in exact 64-bit arithmetic.
struct ChecksumPair {
  std::vector<std::int64_t> col_checksum_row;  // length n
  std::vector<std::int64_t> row_checksum_col;  // length m
};

/// Partition of a GEMM output into row_blocks x col_blocks sub-blocks.
struct BlockSplit {
  std::uint32_t row_blocks = 1;
  std::uint32_t col_blocks = 1;

  std::uint64_t blocks() const { return std::uint64_t{row_blocks} * col_blocks; }
  // Block edges for a dimension of `extent` split into `parts` near-equal parts.
  static std::vector<std::size_t> edges(std::size_t extent, std::uint32_t parts);
  void validate(std::size_t rows, std::size_t cols) const;
  bool operator==(const BlockSplit&) const = default;
};

struct Mismatch {
  std::size_t index = 0;
  std::int64_t delta = 0;  // observed sum minus checksum
  bool operator==(const Mismatch&) const = default;
};

struct Mismatches {
  std::vector<Mismatch> rows;
  std::vector<Mismatch> cols;
  bool empty() const { return rows.empty() && cols.empty(); }
};

enum class UncorrectablePolicy : std::uint8_t {
  kZero,  // cells that cannot be restored are set to zero
  kKeep,  // leave them as computed (classic ABFT baseline)
};

struct Correction {
  std::size_t corrected = 0;  // cells restored from a checksum delta
  std::size_t zeroed = 0;
  bool resolved = true;       // every mismatch explained by a correction
};

// Exact recomputation of one output cell, used to confirm multi-pair fixes.
using CellOracle = std::function<std::int32_t(std::size_t row, std::size_t col)>;

ChecksumPair encode(const QuantTensor& a, const QuantTensor& b);
Mismatches verify(const AccuTile& c, const ChecksumPair& ck);
Correction correct(AccuTile& c, const Mismatches& mismatches,
                   UncorrectablePolicy policy = UncorrectablePolicy::kZero,
                   const CellOracle* oracle = nullptr);

/// GEMM with per-block checksum detection and correction. Checksums and
/// recomputations are fault-free; only the product itself is exposed.
AccuTile protected_gemm(const QuantTensor& a, const QuantTensor& b, const BlockSplit& split,
                        FaultSession* session, const ComponentId& id, OverheadMeter* meter,
                        UncorrectablePolicy policy = UncorrectablePolicy::kZero,
                        PatchMapping mapping = PatchMapping::kNone);

/// Analytic multiplication counts: per block ceil((m_b + n_b) / 2) for
/// detection (n for an n x n block), 2 * m_b * n_b per recovery invocation.
struct CostEstimate {
  double detection = 0;
  double recovery = 0;
  double total() const { return detection + recovery; }
};
CostEstimate cost_model(std::size_t m, std::size_t k, std::size_t n, const BlockSplit& split,
                        double recovery_invocations);
// Same model with the expected number of faulty blocks per call at `ber`.
CostEstimate expected_cost(std::size_t m, std::size_t k, std::size_t n, const BlockSplit& split,
                           double ber);

// Real multiplications the runtime charges for detecting one block.
std::uint64_t metered_detection_muls(std::size_t m_b, std::size_t k, std::size_t n_b);
std::uint64_t metered_recovery_muls(std::size_t m_b, std::size_t n_b);

}  // namespace vitrel
