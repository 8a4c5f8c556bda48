#pragma once

#include <string>
#include <vector>

#include "vitrel/lab.hpp"
#include "vitrel/meter.hpp"

namespace vitrel {

std::string tool_version();
// FNV-1a over the text, as 16 hex digits.
std::string config_hash(const std::string& text);

std::string report_csv(const VulnerabilityReport& r);
std::string report_json(const VulnerabilityReport& r, const std::string& config_hash);
std::string heatmap_text(const std::vector<std::vector<double>>& grid);
std::string meter_json(const MeterSnapshot& s);

// Fixed-format number rendering so reruns are byte-identical.
std::string fmt_real(double v);

void write_file(const std::string& path, const std::string& content);
std::string read_file(const std::string& path);

}  // namespace vitrel
