#include <doctest.h>

#include <random>

#include "support.hpp"
#include "vitrel/abft.hpp"

using namespace vitrel;

namespace {

AccuTile oracle_tile(const QuantTensor& a, const QuantTensor& b) {
  const auto ref = oracle::gemm(a, b);
  AccuTile t(a.rows(), b.cols());
  for (std::size_t i = 0; i < ref.size(); ++i) t.data[i] = static_cast<std::int32_t>(ref[i]);
  return t;
}

// Every cell is either the fault-free value or zero.
bool exact_or_zero(const AccuTile& got, const AccuTile& truth) {
  for (std::size_t i = 0; i < got.data.size(); ++i)
    if (got.data[i] != truth.data[i] && got.data[i] != 0) return false;
  return true;
}

std::size_t exact_cells(const AccuTile& got, const AccuTile& truth) {
  std::size_t n = 0;
  for (std::size_t i = 0; i < got.data.size(); ++i) n += got.data[i] == truth.data[i];
  return n;
}

}  // namespace

TEST_CASE("encode: examples and the sum-of-product oracle") {
  const QuantTensor z({3, 4}, 1.0f), zb({4, 2}, 1.0f);
  const auto zc = encode(z, zb);
  CHECK(zc.col_checksum_row == std::vector<std::int64_t>{0, 0});
  CHECK(zc.row_checksum_col == std::vector<std::int64_t>{0, 0, 0});

  const QuantTensor eye({2, 2}, {1, 0, 0, 1}, 1.0f), b({2, 2}, {1, 2, 3, 4}, 1.0f);
  const auto ck = encode(eye, b);
  CHECK(ck.col_checksum_row == std::vector<std::int64_t>{4, 6});
  CHECK(ck.row_checksum_col == std::vector<std::int64_t>{3, 7});

  std::mt19937_64 rng(3);
  for (int rep = 0; rep < 20; ++rep) {
    const auto x = fixture::random_tensor(8, 8, rng), y = fixture::random_tensor(8, 8, rng);
    const auto ref = oracle::gemm(x, y);
    const auto c = encode(x, y);
    for (std::size_t i = 0; i < 8; ++i) {
      std::int64_t row = 0, col = 0;
      for (std::size_t j = 0; j < 8; ++j) {
        row += ref[i * 8 + j];
        col += ref[j * 8 + i];
      }
      CHECK(c.row_checksum_col[i] == row);
      CHECK(c.col_checksum_row[i] == col);
    }
  }
  CHECK_THROWS_AS(encode(QuantTensor({2, 3}, 1.0f), QuantTensor({2, 3}, 1.0f)), ShapeError);
}

TEST_CASE("verify: flags exactly the corrupted lines with their deltas") {
  std::mt19937_64 rng(4);
  const auto a = fixture::random_tensor(4, 5, rng), b = fixture::random_tensor(5, 4, rng);
  const auto ck = encode(a, b);
  auto c = gemm(a, b);
  CHECK(verify(c, ck).empty());

  c.at(1, 2) += 5;
  auto mm = verify(c, ck);
  CHECK(mm.rows == std::vector<Mismatch>{{1, 5}});
  CHECK(mm.cols == std::vector<Mismatch>{{2, 5}});

  c = gemm(a, b);
  c.at(3, 0) += 7;
  c.at(3, 2) -= 100;
  mm = verify(c, ck);
  CHECK(mm.rows == std::vector<Mismatch>{{3, -93}});
  CHECK(mm.cols == std::vector<Mismatch>{{0, 7}, {2, -100}});
}

TEST_CASE("correct: single fix, no-op, and same-row pair zeroed") {
  std::mt19937_64 rng(5);
  const auto a = fixture::random_tensor(4, 6, rng), b = fixture::random_tensor(6, 4, rng);
  const auto ck = encode(a, b);
  const AccuTile truth = oracle_tile(a, b);

  AccuTile c = gemm(a, b);
  c.at(1, 2) += 5;
  auto r = correct(c, verify(c, ck));
  CHECK(c == truth);
  CHECK(r.corrected == 1);
  CHECK(r.resolved);

  c = gemm(a, b);
  r = correct(c, verify(c, ck));
  CHECK(c == truth);
  CHECK(r.zeroed == 0);
  CHECK(r.corrected == 0);

  c = gemm(a, b);
  c.at(2, 0) += 9;
  c.at(2, 3) += 40;
  r = correct(c, verify(c, ck));
  CHECK_FALSE(r.resolved);
  CHECK(c.at(2, 0) == 0);
  CHECK(c.at(2, 3) == 0);
  CHECK(exact_or_zero(c, truth));

  // Keep policy leaves unresolved data untouched.
  c = gemm(a, b);
  c.at(2, 0) += 9;
  c.at(2, 3) += 40;
  AccuTile before = c;
  r = correct(c, verify(c, ck), UncorrectablePolicy::kKeep);
  CHECK(c == before);
  CHECK(r.zeroed == 0);
}

TEST_CASE("correct: diagonal pairs are trusted only with a confirming oracle") {
  std::mt19937_64 rng(6);
  const auto a = fixture::random_tensor(5, 3, rng), b = fixture::random_tensor(3, 5, rng);
  const auto ck = encode(a, b);
  const AccuTile truth = oracle_tile(a, b);
  const CellOracle cell = [&](std::size_t r, std::size_t c) { return truth.at(r, c); };

  AccuTile c = gemm(a, b);
  c.at(0, 1) += 16;
  c.at(3, 4) -= 1024;
  auto res = correct(c, verify(c, ck), UncorrectablePolicy::kZero, &cell);
  CHECK(res.corrected == 2);
  CHECK(c == truth);

  c = gemm(a, b);
  c.at(0, 1) += 16;
  c.at(3, 4) -= 1024;
  res = correct(c, verify(c, ck));
  CHECK_FALSE(res.resolved);
  CHECK(exact_or_zero(c, truth));

  // Three faults in an L alias as a diagonal pair; the oracle rejects it.
  c = gemm(a, b);
  c.at(1, 1) += 8;
  c.at(1, 3) += 32;
  c.at(4, 3) -= 32;
  res = correct(c, verify(c, ck), UncorrectablePolicy::kZero, &cell);
  CHECK_FALSE(res.resolved);
  CHECK(exact_or_zero(c, truth));
}

TEST_CASE("protected_gemm: no faults is bit-identical to gemm for every split") {
  std::mt19937_64 rng(7);
  std::uniform_int_distribution<std::size_t> dim(1, 12);
  for (int rep = 0; rep < 300; ++rep) {
    const std::size_t m = dim(rng), k = dim(rng), n = dim(rng);
    const auto a = fixture::random_tensor(m, k, rng), b = fixture::random_tensor(k, n, rng);
    const BlockSplit s{std::uint32_t(1 + rng() % m), std::uint32_t(1 + rng() % n)};
    CHECK(protected_gemm(a, b, s, nullptr, {}, nullptr) == gemm(a, b));
  }
}

TEST_CASE("protected_gemm: split 1x1 equals unblocked encode/verify/correct") {
  std::mt19937_64 rng(8);
  const auto a = fixture::random_tensor(6, 4, rng), b = fixture::random_tensor(4, 6, rng);
  fixture::GemmFaults faults(6, 4, 6);
  for (const auto& pattern : std::vector<std::vector<fixture::CellFault>>{
           {{2, 3, 5}}, {{0, 0, 30}}, {{1, 1, 2}, {1, 4, 9}}, {{0, 2, 3}, {5, 2, 3}}}) {
    auto s1 = faults.session(pattern);
    const AccuTile got = protected_gemm(a, b, {1, 1}, &s1, {}, nullptr);
    auto s2 = faults.session(pattern);
    AccuTile manual = gemm(a, b, &s2);
    const auto truth = oracle_tile(a, b);
    const CellOracle cell = [&](std::size_t r, std::size_t c) { return truth.at(r, c); };
    correct(manual, verify(manual, encode(a, b)), UncorrectablePolicy::kZero, &cell);
    CHECK(got == manual);
  }
}

TEST_CASE("protected_gemm: exhaustive single-bit accumulator faults on 6x6x4") {
  std::mt19937_64 rng(9);
  const auto a = fixture::random_tensor(6, 4, rng), b = fixture::random_tensor(4, 6, rng);
  const auto ck = encode(a, b);
  const AccuTile truth = oracle_tile(a, b);
  fixture::GemmFaults faults(6, 4, 6);
  for (std::size_t r = 0; r < 6; ++r)
    for (std::size_t c = 0; c < 6; ++c)
      for (int bit = 0; bit < 32; ++bit) {
        auto s = faults.session({{r, c, bit}});
        AccuTile hit = gemm(a, b, &s);
        REQUIRE(hit.at(r, c) != truth.at(r, c));
        const auto mm = verify(hit, ck);
        REQUIRE(mm.rows.size() == 1);
        REQUIRE(mm.cols.size() == 1);
        CHECK(mm.rows[0].index == r);
        CHECK(mm.cols[0].index == c);
        correct(hit, mm);
        REQUIRE(hit == truth);
        auto s2 = faults.session({{r, c, bit}});
        REQUIRE(protected_gemm(a, b, {1, 1}, &s2, {}, nullptr) == truth);
      }
}

TEST_CASE("protected_gemm: blocking separates a same-row pair") {
  std::mt19937_64 rng(10);
  const auto a = fixture::random_tensor(4, 3, rng), b = fixture::random_tensor(3, 4, rng);
  const AccuTile truth = oracle_tile(a, b);
  fixture::GemmFaults faults(4, 3, 4);
  const std::vector<fixture::CellFault> pattern{{1, 0, 6}, {1, 3, 11}};
  auto s1 = faults.session(pattern);
  const AccuTile flat = protected_gemm(a, b, {1, 1}, &s1, {}, nullptr);
  CHECK(exact_or_zero(flat, truth));
  // The unblocked pass cannot pair a single row with two columns.
  CHECK(flat.at(1, 0) == 0);
  auto s2 = faults.session(pattern);
  CHECK(protected_gemm(a, b, {2, 2}, &s2, {}, nullptr) == truth);
}

TEST_CASE("protected_gemm: random multi-fault patterns are never miscorrected") {
  std::mt19937_64 rng(11);
  const auto a = fixture::random_tensor(16, 8, rng), b = fixture::random_tensor(8, 16, rng);
  const AccuTile truth = oracle_tile(a, b);
  fixture::GemmFaults faults(16, 8, 16);
  std::uniform_int_distribution<std::size_t> cell(0, 15);
  std::uniform_int_distribution<int> bit(0, 31), count(1, 6);
  const BlockSplit splits[] = {{1, 1}, {2, 2}, {4, 4}, {1, 4}};
  for (int rep = 0; rep < 2000; ++rep) {
    std::vector<fixture::CellFault> pattern;
    for (int f = count(rng); f > 0; --f) pattern.push_back({cell(rng), cell(rng), bit(rng)});
    for (const auto& s : splits) {
      auto session = faults.session(pattern);
      const AccuTile got = protected_gemm(a, b, s, &session, {}, nullptr);
      REQUIRE(exact_or_zero(got, truth));
    }
  }
}

TEST_CASE("protected_gemm: restored cells do not decrease with more blocks") {
  std::mt19937_64 rng(12);
  const auto a = fixture::random_tensor(16, 8, rng), b = fixture::random_tensor(8, 16, rng);
  const AccuTile truth = oracle_tile(a, b);
  fixture::GemmFaults faults(16, 8, 16);
  std::uniform_int_distribution<std::size_t> cell(0, 15);
  std::uniform_int_distribution<int> bit(0, 31);
  const BlockSplit ladder[] = {{1, 1}, {2, 1}, {2, 2}, {4, 2}, {4, 4}, {8, 8}};
  std::vector<double> restored(std::size(ladder), 0);
  const int reps = 1000;
  for (int rep = 0; rep < reps; ++rep) {
    std::vector<fixture::CellFault> pattern;
    for (int f = 0; f < 4; ++f) pattern.push_back({cell(rng), cell(rng), bit(rng)});
    for (std::size_t s = 0; s < std::size(ladder); ++s) {
      auto session = faults.session(pattern);
      restored[s] += exact_cells(protected_gemm(a, b, ladder[s], &session, {}, nullptr), truth);
    }
  }
  for (std::size_t s = 0; s + 1 < restored.size(); ++s) {
    MESSAGE(ladder[s].row_blocks << "x" << ladder[s].col_blocks << ": " << restored[s] / reps);
    CHECK(restored[s + 1] >= restored[s]);
  }
}

TEST_CASE("cost model: analytic examples") {
  const std::size_t n = 64;
  CHECK(cost_model(n, n, n, {1, 1}, 0).detection == doctest::Approx(double(n)));
  CHECK(cost_model(n, n, n, {1, 1}, 0).recovery == 0);
  CHECK(cost_model(n, n, n, {1, 1}, 1).recovery == doctest::Approx(2.0 * n * n));
  const auto split = cost_model(n, n, n, {2, 2}, 0);
  CHECK(split.detection == doctest::Approx(4.0 * (n / 2)));
  CHECK(cost_model(n, n, n, {2, 2}, 1).recovery == doctest::Approx(2.0 * (n / 2) * (n / 2)));
  CHECK(expected_cost(n, n, n, {2, 2}, 0.0).recovery == 0);
  CHECK(expected_cost(n, n, n, {2, 2}, 0.0).detection == doctest::Approx(split.detection));
  CHECK(expected_cost(n, n, n, {1, 1}, 1.0).recovery == doctest::Approx(2.0 * n * n));
  CHECK_THROWS_AS(cost_model(4, 4, 4, {5, 1}, 0), ConfigError);
  CHECK_THROWS_AS(cost_model(4, 4, 4, {0, 1}, 0), ConfigError);
}

TEST_CASE("block edges partition every extent") {
  for (std::size_t extent = 1; extent < 40; ++extent)
    for (std::uint32_t parts = 1; parts <= extent; ++parts) {
      const auto e = BlockSplit::edges(extent, parts);
      REQUIRE(e.front() == 0);
      REQUIRE(e.back() == extent);
      for (std::size_t i = 0; i + 1 < e.size(); ++i) {
        REQUIRE(e[i + 1] > e[i]);
        REQUIRE(e[i + 1] - e[i] <= extent / parts + 1);
      }
    }
}

TEST_CASE("protected_gemm: metered detection and recovery counts") {
  std::mt19937_64 rng(13);
  const std::size_t m = 8, k = 5, n = 6;
  const auto a = fixture::random_tensor(m, k, rng), b = fixture::random_tensor(k, n, rng);
  OverheadMeter clean;
  protected_gemm(a, b, {2, 3}, nullptr, {}, &clean);
  auto snap = clean.snapshot();
  CHECK(snap.base_muls == m * k * n);
  CHECK(snap.abft_detect_muls == 6 * k * (4 + 2));
  CHECK(snap.abft_recover_muls == 0);

  // One fault: one block recovered plus one confirming recomputation.
  fixture::GemmFaults faults(m, k, n);
  auto s = faults.session({{5, 1, 4}});
  OverheadMeter hit;
  protected_gemm(a, b, {2, 3}, &s, {}, &hit);
  snap = hit.snapshot();
  CHECK(snap.abft_detect_muls == 6 * k * (4 + 2));
  CHECK(snap.abft_recover_muls == 2 * 4 * 2 + k);
  CHECK(metered_detection_muls(3, 7, 2) == 35);
  CHECK(metered_recovery_muls(3, 2) == 12);
}
