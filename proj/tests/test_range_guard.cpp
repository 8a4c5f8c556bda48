#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <limits>
#include <random>

#include "support.hpp"
#include "vitrel/lab.hpp"
#include "vitrel/range_guard.hpp"

using namespace vitrel;

namespace {
RangeEntry entry(double lo, double hi, double alpha = 0.02, bool widened = true) {
  RangeEntry e;
  e.min = lo;
  e.max = hi;
  e.alpha = alpha;
  e.widened = widened;
  return e;
}
RangeEntry softmax_entry() {
  RangeEntry e = entry(0, 1);
  e.fixed_range = true;
  return e;
}
}  // namespace

TEST_CASE("guard: examples") {
  CHECK(guard(1.5f, softmax_entry()) == 0.0f);
  CHECK(guard(-0.01f, softmax_entry()) == 0.0f);
  CHECK(guard(0.25f, softmax_entry()) == 0.25f);
  CHECK(guard(1.0f, softmax_entry()) == 1.0f);
  CHECK(guard(3.5f, entry(-10, 100)) == 3.5f);

  // Verbatim bounds (-10.2, 98): 99 is cut.
  const RangeEntry verbatim = entry(-10, 100, 0.02, false);
  CHECK(verbatim.scaled_lower() == doctest::Approx(-10.2));
  CHECK(verbatim.scaled_upper() == doctest::Approx(98.0));
  CHECK(guard(99.0f, verbatim) == 0.0f);
  CHECK(guard(97.9f, verbatim) == 97.9f);
  CHECK(guard(-10.1f, verbatim) == -10.1f);
  CHECK(guard(-10.3f, verbatim) == 0.0f);
  // The widened default also admits the profiled range itself.
  CHECK(guard(99.0f, entry(-10, 100)) == 99.0f);
  CHECK(guard(100.5f, entry(-10, 100)) == 0.0f);
}

TEST_CASE("guard: NaN and infinities are zeroed") {
  for (const auto& e : {entry(-1, 1), softmax_entry(), entry(-1, 1, 0.0, false)}) {
    CHECK(guard(std::numeric_limits<float>::quiet_NaN(), e) == 0.0f);
    CHECK(guard(std::numeric_limits<float>::infinity(), e) == 0.0f);
    CHECK(guard(-std::numeric_limits<float>::infinity(), e) == 0.0f);
  }
}

TEST_CASE("guard: idempotent and never moves an admitted value") {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-50, 50), al(0, 0.49);
  for (int i = 0; i < 20000; ++i) {
    double lo = u(rng), hi = u(rng);
    if (lo > hi) std::swap(lo, hi);
    const RangeEntry e = entry(lo, hi, al(rng), rng() % 2 == 0);
    const float v = static_cast<float>(u(rng) * 1.5);
    const float g = guard(v, e);
    REQUIRE(guard(g, e) == g);
    REQUIRE((g == v || g == 0.0f));
    REQUIRE((g == v) == e.admits(v));
  }
}

TEST_CASE("guard: charges two comparisons per value and no multiplications") {
  OverheadMeter meter;
  std::vector<float> v{0.1f, 2.0f, -3.0f, 0.5f};
  CHECK(guard_all(v.data(), v.size(), softmax_entry(), &meter) == 2);
  CHECK(v == std::vector<float>{0.1f, 0.0f, 0.0f, 0.5f});
  const auto s = meter.snapshot();
  CHECK(s.guard_comparisons == 8);
  CHECK(s.base_muls == 0);
  CHECK(s.abft_detect_muls + s.abft_recover_muls == 0);
}

TEST_CASE("profile entries: constant activations and softmax bounds") {
  RangeProfile p;
  const std::vector<float> c(10, 2.5f);
  p.observe({0, NlfKind::kGelu}, NlfKind::kGelu, c.data(), c.size());
  CHECK(p.find({0, NlfKind::kGelu})->min == 2.5);
  CHECK(p.find({0, NlfKind::kGelu})->max == 2.5);
  const std::vector<float> s{0.1f, 0.2f};
  p.observe({1, NlfKind::kSoftmax}, NlfKind::kSoftmax, s.data(), s.size());
  const RangeEntry* e = p.find({1, NlfKind::kSoftmax});
  CHECK(e->fixed_range);
  CHECK(e->min == 0.0);
  CHECK(e->max == 1.0);
  CHECK(p.find({3, NlfKind::kGelu}) == nullptr);
}

TEST_CASE("profile: alpha and entry validation") {
  CHECK_THROWS_AS(RangeProfile(0.5), ConfigError);
  CHECK_THROWS_AS(RangeProfile(-0.1), ConfigError);
  RangeProfile p;
  CHECK_THROWS_AS(p.set({0, NlfKind::kGelu}, entry(2, 1)), ConfigError);
  CHECK_THROWS_AS(profile(fixture::micro().model, Dataset{}), ConfigError);
}

TEST_CASE("profile: JSON round-trip") {
  const auto& w = fixture::micro();
  const RangeProfile p = profile(w.model, fixture::first(w.data.train, 8), 0.05);
  const RangeProfile q = RangeProfile::from_json(p.to_json());
  CHECK(q.alpha() == 0.05);
  REQUIRE(q.entries().size() == p.entries().size());
  for (const auto& [site, e] : p.entries()) {
    const RangeEntry* f = q.find(site);
    REQUIRE(f != nullptr);
    CHECK(f->min == e.min);
    CHECK(f->max == e.max);
    CHECK(f->fixed_range == e.fixed_range);
    CHECK(f->widened == e.widened);
  }
  const auto path = std::filesystem::temp_directory_path() / "vitrel_ranges_test.json";
  p.save(path.string());
  CHECK(RangeProfile::load(path.string()).to_json() == p.to_json());
  std::filesystem::remove(path);
  CHECK_THROWS(RangeProfile::from_json("{\"alpha\": 0.02}"));
}

TEST_CASE("profile: every NLF site of the model gets an entry") {
  const auto& w = fixture::tiny();
  const RangeProfile p = profile(w.model, fixture::first(w.data.train, 4));
  const int L = w.model.config.num_layers;
  CHECK(p.entries().size() == std::size_t(3 * L + 1));
  for (int l = 0; l < L; ++l)
    for (auto k : {NlfKind::kSoftmax, NlfKind::kGelu, NlfKind::kLayerNorm})
      CHECK(p.find({l, k}) != nullptr);
  CHECK(p.find({kOutsideBlocks, NlfKind::kLayerNorm}) != nullptr);
}

TEST_CASE("profile coverage on the tiny preset") {
  const auto& w = fixture::tiny();
  const Dataset held_in = fixture::first(w.data.train, 64);
  const RangeProfile p = profile(w.model, held_in);

  // Held-in samples pass through the guard untouched.
  ProtectionConfig guarded;
  guarded.ranges = &p;
  for (const auto& s : held_in) {
    OverheadMeter meter;
    REQUIRE(forward(w.model, s.image, nullptr, guarded, &meter) == forward(w.model, s.image));
    REQUIRE(meter.snapshot().guard_comparisons > 0);
  }

  // Fresh samples: at least 99% of scalar NLF outputs fall inside the bounds.
  std::uint64_t total = 0, inside = 0;
  ForwardHooks hooks;
  hooks.on_nlf = [&](const RangeSite& site, std::span<const float> v) {
    const RangeEntry* e = p.find(site);
    for (float x : v) {
      ++total;
      inside += e->admits(x);
    }
  };
  for (const auto& s : fixture::first(w.data.eval, 64)) forward(w.model, s.image, nullptr, {}, nullptr, &hooks);
  const double coverage = double(inside) / double(total);
  MESSAGE("fresh coverage " << coverage);
  CHECK(coverage >= 0.99);
}

TEST_CASE("guarded forward fails loudly on a missing profile entry") {
  const auto& w = fixture::micro();
  RangeProfile partial;
  partial.set({0, NlfKind::kGelu}, entry(-1, 1));
  ProtectionConfig prot;
  prot.ranges = &partial;
  CHECK_THROWS_AS(forward(w.model, w.data.eval[0].image, nullptr, prot), ConfigError);
}
