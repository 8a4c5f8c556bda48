#include "vitrel/fault.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

#include "vitrel/errors.hpp"

namespace vitrel {
namespace {

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

void check_ber(double ber) {
  if (!(ber >= 0.0 && ber <= 1.0)) throw ConfigError("BER must lie in [0, 1]");
}

// P(at least one of `bits` independent bits flips).
double any_flip(double ber, int bits) {
  if (ber >= 1.0) return 1.0;
  return -std::expm1(bits * std::log1p(-ber));
}

}  // namespace

ComponentId RegionSpec::id_of(std::uint64_t word) const {
  switch (mapping) {
    case PatchMapping::kNone:
      return id;
    case PatchMapping::kGemmRows: {
      ComponentId out = id;
      out.patch = static_cast<int>(word / row_words);
      return out;
    }
    case PatchMapping::kPixels: {
      ComponentId out = id;
      const std::uint64_t plane = std::uint64_t(image_size) * image_size;
      const std::uint64_t pix = word % plane;
      const int y = static_cast<int>(pix / image_size);
      const int x = static_cast<int>(pix % image_size);
      const int grid = image_size / patch_size;
      out.patch = (y / patch_size) * grid + x / patch_size;
      return out;
    }
  }
  return id;
}

void Census::append(const RegionSpec& spec) {
  Region r;
  static_cast<RegionSpec&>(r) = spec;
  r.bit_base = total_bits_;
  r.word_base = total_words_;
  total_bits_ += spec.bits();
  total_words_ += spec.words;
  regions_.push_back(r);
}

std::uint64_t Census::bits_in(const Scope& scope) const {
  std::uint64_t bits = 0;
  for (const auto& r : regions_) {
    if (r.mapping == PatchMapping::kNone) {
      if (scope.contains(r.id)) bits += r.bits();
      continue;
    }
    for (std::uint64_t w = 0; w < r.words; ++w)
      if (scope.contains(r.id_of(w))) bits += r.width;
  }
  return bits;
}

const Region* Census::locate(std::uint64_t bit) const {
  if (bit >= total_bits_) return nullptr;
  auto it = std::upper_bound(regions_.begin(), regions_.end(), bit,
                             [](std::uint64_t b, const Region& r) { return b < r.bit_base; });
  while (it != regions_.begin()) {
    --it;
    if (it->bits() > 0) return &*it;
  }
  return nullptr;
}

bool Census::operator==(const Census& other) const {
  if (total_bits_ != other.total_bits_ || regions_.size() != other.regions_.size()) return false;
  for (std::size_t i = 0; i < regions_.size(); ++i) {
    const auto& a = regions_[i];
    const auto& b = other.regions_[i];
    if (a.id != b.id || a.words != b.words || a.width != b.width || a.mapping != b.mapping ||
        a.bit_base != b.bit_base)
      return false;
  }
  return true;
}

std::vector<std::uint64_t> plan_flips(std::uint64_t total_bits, double ber,
                                      std::mt19937_64& rng) {
  check_ber(ber);
  if (total_bits == 0 || ber == 0.0) return {};
  std::uint64_t count = total_bits;
  if (ber < 1.0) {
    std::binomial_distribution<std::uint64_t> binom(total_bits, ber);
    count = binom(rng);
  }
  std::vector<std::uint64_t> out;
  if (count == 0) return out;
  if (count == total_bits) {
    out.resize(total_bits);
    for (std::uint64_t i = 0; i < total_bits; ++i) out[i] = i;
    return out;
  }
  // Floyd's sampling; draw the complement when more than half is selected.
  const bool complement = count > total_bits / 2;
  const std::uint64_t draw = complement ? total_bits - count : count;
  std::unordered_set<std::uint64_t> chosen;
  chosen.reserve(draw * 2);
  for (std::uint64_t j = total_bits - draw; j < total_bits; ++j) {
    std::uniform_int_distribution<std::uint64_t> pick(0, j);
    const std::uint64_t t = pick(rng);
    if (!chosen.insert(t).second) chosen.insert(j);
  }
  if (!complement) {
    out.assign(chosen.begin(), chosen.end());
  } else {
    out.reserve(count);
    for (std::uint64_t i = 0; i < total_bits; ++i)
      if (!chosen.count(i)) out.push_back(i);
  }
  std::sort(out.begin(), out.end());
  return out;
}

double counter_uniform(std::uint64_t seed, std::uint64_t id_hash, std::uint64_t ordinal,
                       std::uint64_t lane) {
  std::uint64_t h = splitmix(seed);
  h = splitmix(h ^ id_hash);
  h = splitmix(h ^ ordinal);
  h = splitmix(h ^ (lane * 0xd6e8feb86659fd93ULL));
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}

std::uint64_t derive_seed(std::uint64_t master, std::uint64_t a, std::uint64_t b) {
  return splitmix(splitmix(splitmix(master) ^ a) ^ (b * 0x9e3779b97f4a7c15ULL));
}

FaultSession FaultSession::census_only(ExposureOptions exposure) {
  FaultSession s;
  s.census_mode_ = true;
  s.exposure_ = exposure;
  s.scope_ = Scope::nothing();
  return s;
}

FaultSession FaultSession::bernoulli(double ber, std::uint64_t seed, Scope scope,
                                     ExposureOptions exposure) {
  check_ber(ber);
  FaultSession s;
  s.ber_ = ber;
  s.seed_ = seed;
  s.mode_ = SamplingMode::kBernoulli;
  s.scope_ = std::move(scope);
  s.exposure_ = exposure;
  return s;
}

FaultSession FaultSession::planned(double ber, std::uint64_t seed, Scope scope,
                                   const Census& census, ExposureOptions exposure) {
  check_ber(ber);
  std::mt19937_64 rng(derive_seed(seed, 0x706c616eULL));
  auto all = plan_flips(census.total_bits(), ber, rng);
  std::vector<std::uint64_t> kept;
  for (std::uint64_t pos : all) {
    const Region* r = census.locate(pos);
    if (r && scope.contains(r->id_of((pos - r->bit_base) / r->width))) kept.push_back(pos);
  }
  FaultSession s = from_positions(std::move(kept), std::move(scope), census, exposure);
  s.ber_ = ber;
  s.seed_ = seed;
  return s;
}

FaultSession FaultSession::from_positions(std::vector<std::uint64_t> positions, Scope scope,
                                          const Census& census, ExposureOptions exposure) {
  FaultSession s;
  s.mode_ = SamplingMode::kPlanned;
  s.positions_ = std::move(positions);
  std::sort(s.positions_.begin(), s.positions_.end());
  s.scope_ = std::move(scope);
  s.census_ = &census;
  s.exposure_ = exposure;
  return s;
}

std::uint32_t FaultSession::expose(std::uint32_t word, const ComponentId& id) {
  RegionSpec spec;
  spec.id = id;
  spec.words = 1;
  spec.width = 32;
  for (const Flip& f : open_region(spec)) word ^= (std::uint32_t{1} << f.bit);
  return word;
}

std::vector<Flip> FaultSession::open_region(const RegionSpec& spec) {
  std::vector<Flip> flips;
  const std::uint64_t bit_base = bit_cursor_;
  const std::uint64_t word_base = word_cursor_;
  bit_cursor_ += spec.bits();
  word_cursor_ += spec.words;

  if (census_mode_) {
    recorded_.append(spec);
    return flips;
  }

  if (mode_ == SamplingMode::kPlanned) {
    if (census_ == nullptr) return flips;
    const auto& regions = census_->regions();
    if (region_index_ >= regions.size() || regions[region_index_].id != spec.id ||
        regions[region_index_].words != spec.words || regions[region_index_].width != spec.width)
      throw std::logic_error("fault session: op sequence diverged from census at region " +
                             std::to_string(region_index_) + " (" + spec.id.str() + ")");
    ++region_index_;
    auto lo = std::lower_bound(positions_.begin(), positions_.end(), bit_base);
    auto hi = std::lower_bound(lo, positions_.end(), bit_base + spec.bits());
    for (auto it = lo; it != hi; ++it) {
      const std::uint64_t off = *it - bit_base;
      flips.push_back({off / spec.width, static_cast<std::uint8_t>(off % spec.width)});
    }
  } else {
    if (ber_ == 0.0) return flips;
    const bool uniform_id = spec.mapping == PatchMapping::kNone;
    if (uniform_id && !scope_.contains(spec.id)) return flips;
    const int w = spec.width;
    const double p_any = any_flip(ber_, w);
    std::vector<double> cond(w);
    for (int i = 0; i < w; ++i) cond[i] = ber_ / any_flip(ber_, w - i);
    const std::uint64_t shared_hash = spec.id.hash();
    for (std::uint64_t word = 0; word < spec.words; ++word) {
      std::uint64_t h = shared_hash;
      if (!uniform_id) {
        const ComponentId id = spec.id_of(word);
        if (!scope_.contains(id)) continue;
        h = id.hash();
      }
      const std::uint64_t ordinal = word_base + word;
      if (counter_uniform(seed_, h, ordinal, 0) >= p_any) continue;
      // Conditioned on at least one flip: walk the bits, drawing bit i with
      // P(flip_i | none before, at least one from i on) until the first flip,
      // then independently at the base rate.
      bool seen = false;
      for (int b = 0; b < w; ++b) {
        const double p = seen ? ber_ : cond[b];
        if (counter_uniform(seed_, h, ordinal, 1 + b) < p) {
          flips.push_back({word, static_cast<std::uint8_t>(b)});
          seen = true;
        }
      }
    }
  }

  flips_applied_ += flips.size();
  if (logging_)
    for (const Flip& f : flips) log_.push_back({spec.id_of(f.word), word_base + f.word, f.bit});
  return flips;
}

std::string flip_log_csv(const std::vector<std::pair<int, std::vector<FlipRecord>>>& trials) {
  std::ostringstream out;
  out << "trial,component,ordinal,bit\n";
  for (const auto& [trial, records] : trials)
    for (const auto& r : records)
      out << trial << ',' << r.id.str() << ',' << r.ordinal << ',' << int(r.bit) << '\n';
  return out.str();
}

}  // namespace vitrel
