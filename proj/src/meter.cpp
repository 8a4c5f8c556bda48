#include "vitrel/meter.hpp"

namespace vitrel {

double MeterSnapshot::overhead_fraction() const {
  if (base_muls == 0) return 0.0;
  return static_cast<double>(abft_detect_muls + abft_recover_muls) /
         static_cast<double>(base_muls);
}

MeterSnapshot& MeterSnapshot::operator+=(const MeterSnapshot& o) {
  base_muls += o.base_muls;
  abft_detect_muls += o.abft_detect_muls;
  abft_recover_muls += o.abft_recover_muls;
  guard_comparisons += o.guard_comparisons;
  return *this;
}

void OverheadMeter::add(const MeterSnapshot& s) {
  add_base_muls(s.base_muls);
  add_detect_muls(s.abft_detect_muls);
  add_recover_muls(s.abft_recover_muls);
  add_comparisons(s.guard_comparisons);
}

MeterSnapshot OverheadMeter::snapshot() const {
  MeterSnapshot s;
  s.base_muls = base_muls_.load(std::memory_order_acquire);
  s.abft_detect_muls = detect_.load(std::memory_order_acquire);
  s.abft_recover_muls = recover_.load(std::memory_order_acquire);
  s.guard_comparisons = compares_.load(std::memory_order_acquire);
  return s;
}

void OverheadMeter::reset() {
  base_muls_.store(0);
  detect_.store(0);
  recover_.store(0);
  compares_.store(0);
}

}  // namespace vitrel
