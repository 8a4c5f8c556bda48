#include "vitrel/report.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "vitrel/errors.hpp"

namespace vitrel {

std::string tool_version() { return VITREL_VERSION; }

std::string config_hash(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string fmt_real(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

namespace {

std::string join_ids(const std::vector<ComponentId>& ids) {
  std::string s;
  for (std::size_t i = 0; i < ids.size(); ++i) s += (i ? ";" : "") + ids[i].str();
  return s;
}

nlohmann::ordered_json meter_obj(const MeterSnapshot& s) {
  return {{"base_muls", s.base_muls},
          {"abft_detect_muls", s.abft_detect_muls},
          {"abft_recover_muls", s.abft_recover_muls},
          {"guard_comparisons", s.guard_comparisons},
          {"overhead_fraction", s.overhead_fraction()}};
}

}  // namespace

std::string report_csv(const VulnerabilityReport& r) {
  std::ostringstream out;
  out << "label,component,vf,half_width,protected_acc\n";
  for (const auto& e : r.entries)
    out << e.label << ',' << join_ids(e.component) << ',' << fmt_real(e.vf) << ','
        << fmt_real(e.half_width) << ',' << fmt_real(e.protected_acc) << '\n';
  return out.str();
}

std::string report_json(const VulnerabilityReport& r, const std::string& hash) {
  nlohmann::ordered_json entries = nlohmann::ordered_json::array();
  for (const auto& e : r.entries)
    entries.push_back({{"label", e.label},
                       {"component", join_ids(e.component)},
                       {"vf", e.vf},
                       {"half_width", e.half_width},
                       {"protected_acc", e.protected_acc}});
  nlohmann::ordered_json j = {{"tool", "vitrel"},
                              {"version", tool_version()},
                              {"config_hash", hash},
                              {"granularity", std::string(to_string(r.granularity))},
                              {"ber", r.ber},
                              {"trials", r.trials},
                              {"images", r.images},
                              {"seed", r.seed},
                              {"clean_acc", r.clean_acc},
                              {"baseline_acc", r.baseline_acc},
                              {"baseline_half_width", r.baseline_half_width},
                              {"exposed_bits", r.exposed_bits},
                              {"meter", meter_obj(r.meter)}};
  if (r.grid > 0) j["grid"] = r.grid;
  j["entries"] = entries;
  return j.dump(2) + "\n";
}

std::string heatmap_text(const std::vector<std::vector<double>>& grid) {
  std::ostringstream out;
  for (const auto& row : grid) {
    for (std::size_t i = 0; i < row.size(); ++i) out << (i ? " " : "") << fmt_real(row[i]);
    out << '\n';
  }
  return out.str();
}

std::string meter_json(const MeterSnapshot& s) { return meter_obj(s).dump(2) + "\n"; }

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << content;
  if (!out) throw std::runtime_error("write failed for " + path);
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace vitrel
