#include "vitrel/range_guard.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include <json.hpp>

#include "vitrel/errors.hpp"

namespace vitrel {

std::string_view to_string(NlfKind k) {
  switch (k) {
    case NlfKind::kSoftmax:
      return "SOFTMAX";
    case NlfKind::kGelu:
      return "GELU";
    case NlfKind::kLayerNorm:
      return "LAYERNORM";
  }
  return "?";
}

NlfKind parse_nlf(std::string_view s) {
  if (s == "SOFTMAX") return NlfKind::kSoftmax;
  if (s == "GELU") return NlfKind::kGelu;
  if (s == "LAYERNORM") return NlfKind::kLayerNorm;
  throw ConfigError("unknown NLF kind '" + std::string(s) + "'");
}

bool RangeEntry::admits(double v) const {
  if (std::isnan(v)) return false;
  if (fixed_range) return v >= 0.0 && v <= 1.0;
  if (v > scaled_lower() && v < scaled_upper()) return true;
  return widened && v >= min && v <= max;
}

RangeProfile::RangeProfile(double alpha) : alpha_(alpha) {
  if (!(alpha >= 0.0 && alpha < 0.5)) throw ConfigError("range guard: alpha must lie in [0, 0.5)");
}

const RangeEntry* RangeProfile::find(const RangeSite& site) const {
  auto it = entries_.find(site);
  return it == entries_.end() ? nullptr : &it->second;
}

void RangeProfile::observe(const RangeSite& site, NlfKind kind, const float* values,
                           std::size_t n) {
  auto [it, fresh] = entries_.try_emplace(site);
  RangeEntry& e = it->second;
  if (fresh) {
    e.alpha = alpha_;
    e.fixed_range = kind == NlfKind::kSoftmax;
    e.min = std::numeric_limits<double>::infinity();
    e.max = -std::numeric_limits<double>::infinity();
  }
  for (std::size_t i = 0; i < n; ++i) {
    const double v = values[i];
    if (!std::isfinite(v)) continue;
    e.min = std::min(e.min, v);
    e.max = std::max(e.max, v);
  }
  if (e.fixed_range) {
    e.min = 0.0;
    e.max = 1.0;
  }
}

void RangeProfile::set(const RangeSite& site, const RangeEntry& e) {
  if (!(e.min <= e.max)) throw ConfigError("range entry: min > max");
  if (!(e.alpha >= 0.0 && e.alpha < 0.5)) throw ConfigError("range entry: alpha out of range");
  entries_[site] = e;
}

std::string RangeProfile::to_json() const {
  nlohmann::json j;
  j["alpha"] = alpha_;
  auto& rows = j["sites"] = nlohmann::json::array();
  for (const auto& [site, e] : entries_) {
    rows.push_back({{"layer", site.layer},
                    {"kind", std::string(to_string(site.kind))},
                    {"min", e.min},
                    {"max", e.max},
                    {"alpha", e.alpha},
                    {"fixed", e.fixed_range},
                    {"widened", e.widened}});
  }
  return j.dump(2) + "\n";
}

RangeProfile RangeProfile::from_json(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    RangeProfile p(j.at("alpha").get<double>());
    for (const auto& row : j.at("sites")) {
      RangeSite site{row.at("layer").get<int>(), parse_nlf(row.at("kind").get<std::string>())};
      RangeEntry e;
      e.min = row.at("min").get<double>();
      e.max = row.at("max").get<double>();
      e.alpha = row.at("alpha").get<double>();
      e.fixed_range = row.at("fixed").get<bool>();
      e.widened = row.value("widened", true);
      p.set(site, e);
    }
    return p;
  } catch (const nlohmann::json::exception& ex) {
    throw ConfigError(std::string("range profile: ") + ex.what());
  }
}

void RangeProfile::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path);
  out << to_json();
}

RangeProfile RangeProfile::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json(ss.str());
}

float guard(float value, const RangeEntry& entry, OverheadMeter* meter) {
  if (meter) meter->add_comparisons(2);
  return entry.admits(value) ? value : 0.0f;
}

std::size_t guard_all(float* values, std::size_t n, const RangeEntry& entry,
                      OverheadMeter* meter) {
  std::size_t zeroed = 0;
  for (std::size_t i = 0; i < n; ++i)
    if (!entry.admits(values[i])) {
      values[i] = 0.0f;
      ++zeroed;
    }
  if (meter) meter->add_comparisons(2 * n);
  return zeroed;
}

}  // namespace vitrel
