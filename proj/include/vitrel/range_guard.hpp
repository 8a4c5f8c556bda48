#pragma once

#include <compare>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "vitrel/meter.hpp"

namespace vitrel {

enum class NlfKind : std::uint8_t { kSoftmax, kGelu, kLayerNorm };
std::string_view to_string(NlfKind k);
NlfKind parse_nlf(std::string_view s);

/// Profiling granularity: one entry per (layer, NLF kind).
struct RangeSite {
  int layer = 0;
  NlfKind kind = NlfKind::kLayerNorm;
  auto operator<=>(const RangeSite&) const = default;
};

struct RangeEntry {
  double min = 0;
  double max = 0;
  double alpha = 0.02;
  bool fixed_range = false;  // softmax: [0, 1]
  // Also admit the profiled [min, max] itself, so clean samples pass.
  bool widened = true;

  // Open interval ((1 + alpha) * min, (1 - alpha) * max).
  double scaled_lower() const { return (1.0 + alpha) * min; }
  double scaled_upper() const { return (1.0 - alpha) * max; }
  bool admits(double v) const;
};

inline constexpr double kDefaultAlpha = 0.02;

class RangeProfile {
 public:
  explicit RangeProfile(double alpha = kDefaultAlpha);

  double alpha() const { return alpha_; }
  const std::map<RangeSite, RangeEntry>& entries() const { return entries_; }
  const RangeEntry* find(const RangeSite& site) const;
  // Widens the site's [min, max] to include `values` (non-finite ignored).
  void observe(const RangeSite& site, NlfKind kind, const float* values, std::size_t n);
  void set(const RangeSite& site, const RangeEntry& e);

  std::string to_json() const;
  static RangeProfile from_json(const std::string& text);
  void save(const std::string& path) const;
  static RangeProfile load(const std::string& path);

 private:
  double alpha_;
  std::map<RangeSite, RangeEntry> entries_;
};

/// Out-of-range values (including NaN) become zero; two comparisons are
/// charged per value.
float guard(float value, const RangeEntry& entry, OverheadMeter* meter = nullptr);
// In-place over a span; returns the number of values zeroed.
std::size_t guard_all(float* values, std::size_t n, const RangeEntry& entry,
                      OverheadMeter* meter = nullptr);

}  // namespace vitrel
