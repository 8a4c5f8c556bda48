#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "vitrel/component.hpp"

namespace vitrel {

enum class SamplingMode : std::uint8_t {
  kPlanned,    // binomial flip count, uniform global positions (default)
  kBernoulli,  // independent per-bit draws from a counter-based generator
};

// How the patch field of a region's ComponentId varies across its words.
enum class PatchMapping : std::uint8_t {
  kNone,      // every word carries the region id unchanged
  kGemmRows,  // GEMM output row r is patch r (patch-embedding GEMM)
  kPixels,    // C x S x S pixel plane, patch from the pixel coordinate
};

/// A contiguous run of exposed words produced by one arithmetic call.
struct RegionSpec {
  ComponentId id;
  std::uint64_t words = 0;
  std::uint8_t width = 32;
  PatchMapping mapping = PatchMapping::kNone;
  std::uint64_t row_words = 0;  // kGemmRows: words per output row (n * k)
  int image_size = 0;           // kPixels
  int patch_size = 0;           // kPixels

  ComponentId id_of(std::uint64_t word) const;
  std::uint64_t bits() const { return words * width; }
};

struct Region : RegionSpec {
  std::uint64_t bit_base = 0;
  std::uint64_t word_base = 0;
};

/// Word index within a region and bit index within that word.
struct Flip {
  std::uint64_t word = 0;
  std::uint8_t bit = 0;

  bool operator==(const Flip&) const = default;
};

struct FlipRecord {
  ComponentId id;
  std::uint64_t ordinal = 0;  // global word ordinal within the forward pass
  std::uint8_t bit = 0;
};

/// Which optional word classes a forward pass exposes. Must be identical
/// between a census and the sessions planned against it.
struct ExposureOptions {
  bool pixels = false;         // input pixel words (patch campaigns)
  bool residual_adds = false;  // residual-stream additions

  bool operator==(const ExposureOptions&) const = default;
};

/// Ordered list of every exposed region of one forward pass.
class Census {
 public:
  void append(const RegionSpec& spec);

  const std::vector<Region>& regions() const { return regions_; }
  std::uint64_t total_bits() const { return total_bits_; }
  std::uint64_t total_words() const { return total_words_; }
  // Bits whose word id lies in scope.
  std::uint64_t bits_in(const Scope& scope) const;
  // Region containing a global bit position, or nullptr when out of range.
  const Region* locate(std::uint64_t bit) const;

  bool operator==(const Census& other) const;

 private:
  std::vector<Region> regions_;
  std::uint64_t total_bits_ = 0;
  std::uint64_t total_words_ = 0;
};

/// Binomial(total_bits, ber) distinct positions drawn uniformly without
/// replacement, returned sorted.
std::vector<std::uint64_t> plan_flips(std::uint64_t total_bits, double ber, std::mt19937_64& rng);

// Counter-based uniform in [0,1) keyed by (seed, component hash, ordinal, lane).
double counter_uniform(std::uint64_t seed, std::uint64_t id_hash, std::uint64_t ordinal,
                       std::uint64_t lane);
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t a, std::uint64_t b = 0);

/// Bit-flip source for one forward pass (one Monte-Carlo trial).
class FaultSession {
 public:
  // Records regions only; never flips anything.
  static FaultSession census_only(ExposureOptions exposure = {});
  static FaultSession bernoulli(double ber, std::uint64_t seed, Scope scope,
                                ExposureOptions exposure = {});
  // Plans flips over the census' global bit space, keeping those in scope.
  static FaultSession planned(double ber, std::uint64_t seed, Scope scope, const Census& census,
                              ExposureOptions exposure = {});
  // Uses an explicit list of global bit positions (already scope-filtered).
  static FaultSession from_positions(std::vector<std::uint64_t> positions, Scope scope,
                                     const Census& census, ExposureOptions exposure = {});

  double ber() const { return ber_; }
  std::uint64_t seed() const { return seed_; }
  SamplingMode mode() const { return mode_; }
  const Scope& scope() const { return scope_; }
  const ExposureOptions& exposure() const { return exposure_; }
  bool recording_census() const { return census_mode_; }

  // Scalar exposure of one 32-bit word.
  std::uint32_t expose(std::uint32_t word, const ComponentId& id);

  // Reserves the next region of the op sequence; returns its in-scope flips
  // sorted by (word, bit).
  std::vector<Flip> open_region(const RegionSpec& spec);

  void enable_log(bool on) { logging_ = on; }
  const std::vector<FlipRecord>& flip_log() const { return log_; }
  std::uint64_t flips_applied() const { return flips_applied_; }
  // Planned mode: number of in-scope positions still pending.
  std::size_t planned_in_scope() const { return positions_.size(); }

  const Census& recorded_census() const { return recorded_; }

 private:
  FaultSession() = default;

  double ber_ = 0.0;
  std::uint64_t seed_ = 0;
  SamplingMode mode_ = SamplingMode::kPlanned;
  Scope scope_;
  ExposureOptions exposure_;
  bool census_mode_ = false;
  bool logging_ = false;

  std::vector<std::uint64_t> positions_;  // planned, in scope, sorted
  const Census* census_ = nullptr;
  std::size_t region_index_ = 0;
  std::uint64_t bit_cursor_ = 0;
  std::uint64_t word_cursor_ = 0;
  std::uint64_t flips_applied_ = 0;

  std::vector<FlipRecord> log_;
  Census recorded_;
};

/// flip_log rows as CSV: trial,component,ordinal,bit
std::string flip_log_csv(const std::vector<std::pair<int, std::vector<FlipRecord>>>& trials);

}  // namespace vitrel
