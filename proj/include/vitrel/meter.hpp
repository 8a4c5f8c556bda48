#pragma once

#include <atomic>
#include <cstdint>

namespace vitrel {

/// Frozen copy of the meter counters.
struct MeterSnapshot {
  std::uint64_t base_muls = 0;
  std::uint64_t abft_detect_muls = 0;
  std::uint64_t abft_recover_muls = 0;
  std::uint64_t guard_comparisons = 0;

  // (detect + recover) / base; comparisons are not part of the fraction.
  double overhead_fraction() const;
  MeterSnapshot& operator+=(const MeterSnapshot& o);
  bool operator==(const MeterSnapshot&) const = default;
};

/// Operation counters shared by the kernels of one or more forward passes.
/// Updates are atomic.
class OverheadMeter {
 public:
  OverheadMeter() = default;
  OverheadMeter(const OverheadMeter&) = delete;
  OverheadMeter& operator=(const OverheadMeter&) = delete;

  void add_base_muls(std::uint64_t n) { base_muls_.fetch_add(n, std::memory_order_relaxed); }
  void add_detect_muls(std::uint64_t n) { detect_.fetch_add(n, std::memory_order_relaxed); }
  void add_recover_muls(std::uint64_t n) { recover_.fetch_add(n, std::memory_order_relaxed); }
  void add_comparisons(std::uint64_t n) { compares_.fetch_add(n, std::memory_order_relaxed); }
  void add(const MeterSnapshot& s);

  MeterSnapshot snapshot() const;
  void reset();

 private:
  std::atomic<std::uint64_t> base_muls_{0};
  std::atomic<std::uint64_t> detect_{0};
  std::atomic<std::uint64_t> recover_{0};
  std::atomic<std::uint64_t> compares_{0};
};

}  // namespace vitrel
