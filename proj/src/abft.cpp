#include "vitrel/abft.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace vitrel {
namespace {

struct Block {
  std::size_t r0, r1, c0, c1;
  std::size_t rows() const { return r1 - r0; }
  std::size_t cols() const { return c1 - c0; }
};

void require_operands(const QuantTensor& a, const QuantTensor& b) {
  if (a.shape.size() != 2 || b.shape.size() != 2)
    throw ShapeError("abft: operands must be 2-D");
  if (a.cols() != b.rows()) throw ShapeError("abft: inner dimensions differ");
}

ChecksumPair encode_block(const QuantTensor& a, const QuantTensor& b, const Block& bl) {
  const std::size_t k = a.cols(), n = b.cols();
  std::vector<std::int64_t> a_colsum(k, 0), b_rowsum(k, 0);
  for (std::size_t i = bl.r0; i < bl.r1; ++i)
    for (std::size_t kk = 0; kk < k; ++kk) a_colsum[kk] += a.data[i * k + kk];
  for (std::size_t kk = 0; kk < k; ++kk)
    for (std::size_t j = bl.c0; j < bl.c1; ++j) b_rowsum[kk] += b.data[kk * n + j];

  ChecksumPair ck;
  ck.col_checksum_row.assign(bl.cols(), 0);
  ck.row_checksum_col.assign(bl.rows(), 0);
  for (std::size_t kk = 0; kk < k; ++kk)
    for (std::size_t j = bl.c0; j < bl.c1; ++j)
      ck.col_checksum_row[j - bl.c0] += a_colsum[kk] * b.data[kk * n + j];
  for (std::size_t i = bl.r0; i < bl.r1; ++i) {
    std::int64_t s = 0;
    for (std::size_t kk = 0; kk < k; ++kk) s += a.data[i * k + kk] * b_rowsum[kk];
    ck.row_checksum_col[i - bl.r0] = s;
  }
  return ck;
}

Mismatches verify_block(const AccuTile& c, const ChecksumPair& ck, const Block& bl) {
  Mismatches mm;
  std::vector<std::int64_t> col_sums(bl.cols(), 0);
  for (std::size_t i = bl.r0; i < bl.r1; ++i) {
    std::int64_t row_sum = 0;
    for (std::size_t j = bl.c0; j < bl.c1; ++j) {
      row_sum += c.at(i, j);
      col_sums[j - bl.c0] += c.at(i, j);
    }
    const std::int64_t d = row_sum - ck.row_checksum_col[i - bl.r0];
    if (d != 0) mm.rows.push_back({i, d});
  }
  for (std::size_t j = 0; j < bl.cols(); ++j) {
    const std::int64_t d = col_sums[j] - ck.col_checksum_row[j];
    if (d != 0) mm.cols.push_back({bl.c0 + j, d});
  }
  return mm;
}

std::size_t count_delta(const std::vector<Mismatch>& v, std::int64_t d) {
  return static_cast<std::size_t>(
      std::count_if(v.begin(), v.end(), [d](const Mismatch& m) { return m.delta == d; }));
}

bool fits_int32(std::int64_t v) {
  return v >= std::numeric_limits<std::int32_t>::min() &&
         v <= std::numeric_limits<std::int32_t>::max();
}

Correction correct_block(AccuTile& c, const Mismatches& mm, const Block& bl,
                         UncorrectablePolicy policy, const CellOracle* oracle) {
  Correction out;
  if (mm.empty()) return out;

  // Unique-delta pairing: a row pairs with a column when their delta occurs
  // exactly once among rows and exactly once among columns.
  struct Pair {
    std::size_t row, col;
    std::int64_t delta;
  };
  std::vector<Pair> pairs;
  for (const Mismatch& r : mm.rows) {
    if (count_delta(mm.rows, r.delta) != 1 || count_delta(mm.cols, r.delta) != 1) continue;
    auto it = std::find_if(mm.cols.begin(), mm.cols.end(),
                           [&](const Mismatch& m) { return m.delta == r.delta; });
    pairs.push_back({r.index, it->index, r.delta});
  }

  const bool perfect = pairs.size() == mm.rows.size() && pairs.size() == mm.cols.size();
  if (perfect) {
    std::vector<std::int32_t> fixed;
    bool ok = true;
    for (const Pair& p : pairs) {
      const std::int64_t v = static_cast<std::int64_t>(c.at(p.row, p.col)) - p.delta;
      if (!fits_int32(v)) {
        ok = false;
        break;
      }
      fixed.push_back(static_cast<std::int32_t>(v));
    }
    // Pairs can also arise from other cells sharing lines (an L of three
    // faults aliases two diagonal ones, or one cell when two deltas cancel).
    // Fixes are confirmed against a recomputation when one is available;
    // without it only a lone pair is trusted.
    if (ok && oracle != nullptr) {
      for (std::size_t i = 0; ok && i < pairs.size(); ++i)
        ok = (*oracle)(pairs[i].row, pairs[i].col) == fixed[i];
    } else if (pairs.size() > 1) {
      ok = false;
    }
    if (ok) {
      for (std::size_t i = 0; i < pairs.size(); ++i) c.at(pairs[i].row, pairs[i].col) = fixed[i];
      out.corrected = pairs.size();
      return out;
    }
  }

  out.resolved = false;
  if (policy == UncorrectablePolicy::kKeep) return out;

  // A fault whose row sum cancelled still shows in its column (and vice
  // versa), so every flagged line is cleared, not just the intersections.
  for (const Mismatch& r : mm.rows)
    for (std::size_t j = bl.c0; j < bl.c1; ++j)
      if (c.at(r.index, j) != 0) {
        c.at(r.index, j) = 0;
        ++out.zeroed;
      }
  for (const Mismatch& col : mm.cols)
    for (std::size_t i = bl.r0; i < bl.r1; ++i)
      if (c.at(i, col.index) != 0) {
        c.at(i, col.index) = 0;
        ++out.zeroed;
      }
  return out;
}

}  // namespace

std::vector<std::size_t> BlockSplit::edges(std::size_t extent, std::uint32_t parts) {
  if (parts == 0 || parts > std::max<std::size_t>(extent, 1))
    throw ConfigError("block split: " + std::to_string(parts) + " parts over extent " +
                      std::to_string(extent));
  std::vector<std::size_t> e(parts + 1);
  for (std::uint32_t i = 0; i <= parts; ++i) e[i] = extent * i / parts;
  return e;
}

void BlockSplit::validate(std::size_t rows, std::size_t cols) const {
  if (row_blocks == 0 || col_blocks == 0) throw ConfigError("block split: zero blocks");
  if (row_blocks > std::max<std::size_t>(rows, 1) || col_blocks > std::max<std::size_t>(cols, 1))
    throw ConfigError("block split exceeds output dimensions");
}

ChecksumPair encode(const QuantTensor& a, const QuantTensor& b) {
  require_operands(a, b);
  return encode_block(a, b, {0, a.rows(), 0, b.cols()});
}

Mismatches verify(const AccuTile& c, const ChecksumPair& ck) {
  if (ck.row_checksum_col.size() != c.rows || ck.col_checksum_row.size() != c.cols)
    throw ShapeError("verify: checksum lengths do not match the tile");
  return verify_block(c, ck, {0, c.rows, 0, c.cols});
}

Correction correct(AccuTile& c, const Mismatches& mismatches, UncorrectablePolicy policy,
                   const CellOracle* oracle) {
  return correct_block(c, mismatches, {0, c.rows, 0, c.cols}, policy, oracle);
}

std::uint64_t metered_detection_muls(std::size_t m_b, std::size_t k, std::size_t n_b) {
  return std::uint64_t(k) * (m_b + n_b);
}

std::uint64_t metered_recovery_muls(std::size_t m_b, std::size_t n_b) {
  return 2 * std::uint64_t(m_b) * n_b;
}

AccuTile protected_gemm(const QuantTensor& a, const QuantTensor& b, const BlockSplit& split,
                        FaultSession* session, const ComponentId& id, OverheadMeter* meter,
                        UncorrectablePolicy policy, PatchMapping mapping) {
  require_operands(a, b);
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  split.validate(m, n);
  AccuTile c = gemm(a, b, session, id, mapping, meter);

  const auto re = BlockSplit::edges(m, split.row_blocks);
  const auto ce = BlockSplit::edges(n, split.col_blocks);
  std::vector<Block> blocks;
  for (std::uint32_t bi = 0; bi < split.row_blocks; ++bi)
    for (std::uint32_t bj = 0; bj < split.col_blocks; ++bj)
      blocks.push_back({re[bi], re[bi + 1], ce[bj], ce[bj + 1]});

  const CellOracle oracle = [&](std::size_t r, std::size_t col) {
    if (meter) meter->add_recover_muls(k);
    return gemm_cell(a, b, r, col);
  };

  const long nblocks = static_cast<long>(blocks.size());
#pragma omp parallel for schedule(dynamic) if (nblocks > 1 && m * n * k >= (std::size_t{1} << 20))
  for (long bi = 0; bi < nblocks; ++bi) {
    const Block& bl = blocks[bi];
    if (bl.rows() == 0 || bl.cols() == 0) continue;
    const ChecksumPair ck = encode_block(a, b, bl);
    if (meter) meter->add_detect_muls(metered_detection_muls(bl.rows(), k, bl.cols()));
    const Mismatches mm = verify_block(c, ck, bl);
    if (mm.empty()) continue;
    if (meter) meter->add_recover_muls(metered_recovery_muls(bl.rows(), bl.cols()));
    correct_block(c, mm, bl, policy, &oracle);
  }
  return c;
}

CostEstimate cost_model(std::size_t m, std::size_t /*k*/, std::size_t n, const BlockSplit& split,
                        double recovery_invocations) {
  split.validate(m, n);
  const auto re = BlockSplit::edges(m, split.row_blocks);
  const auto ce = BlockSplit::edges(n, split.col_blocks);
  CostEstimate est;
  for (std::uint32_t i = 0; i < split.row_blocks; ++i)
    for (std::uint32_t j = 0; j < split.col_blocks; ++j)
      est.detection += static_cast<double>((re[i + 1] - re[i] + ce[j + 1] - ce[j] + 1) / 2);
  const double mb = static_cast<double>(m) / split.row_blocks;
  const double nb = static_cast<double>(n) / split.col_blocks;
  est.recovery = recovery_invocations * 2.0 * mb * nb;
  return est;
}

CostEstimate expected_cost(std::size_t m, std::size_t k, std::size_t n, const BlockSplit& split,
                           double ber) {
  split.validate(m, n);
  const auto re = BlockSplit::edges(m, split.row_blocks);
  const auto ce = BlockSplit::edges(n, split.col_blocks);
  const double log_keep = ber >= 1.0 ? -std::numeric_limits<double>::infinity() : std::log1p(-ber);
  CostEstimate est;
  for (std::uint32_t i = 0; i < split.row_blocks; ++i)
    for (std::uint32_t j = 0; j < split.col_blocks; ++j) {
      const std::size_t mb = re[i + 1] - re[i], nb = ce[j + 1] - ce[j];
      est.detection += static_cast<double>((mb + nb + 1) / 2);
      const double bits = 32.0 * static_cast<double>(k) * static_cast<double>(mb * nb);
      const double p_fault = ber <= 0 ? 0.0 : -std::expm1(bits * log_keep);
      est.recovery += p_fault * 2.0 * static_cast<double>(mb * nb);
    }
  return est;
}

}  // namespace vitrel
