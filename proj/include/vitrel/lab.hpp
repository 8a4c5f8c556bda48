#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vitrel/dataset.hpp"
#include "vitrel/fault.hpp"
#include "vitrel/meter.hpp"
#include "vitrel/model.hpp"

namespace vitrel {

struct AccuracyEstimate {
  double accuracy = 0;
  double half_width = 0;  // 95% interval from trial-level variance
  int trials = 0;
  std::size_t images = 0;
  std::vector<double> per_trial;
  MeterSnapshot meter;  // summed over every forward of the estimate
};

/// One injection arm of a campaign: where flips land and what protects.
struct Arm {
  Scope scope = Scope::everything();
  const ProtectionConfig* protection = nullptr;
};

/// Runs Monte-Carlo accuracy estimates for one model and dataset. Trials of
/// all arms share flip plans (common random numbers).
class Campaign {
 public:
  Campaign(const Model& model, const Dataset& data, ExposureOptions exposure = {},
           SamplingMode mode = SamplingMode::kPlanned);

  const Model& model() const { return model_; }
  const Dataset& data() const { return data_; }
  const Census& census() const { return census_; }
  const ExposureOptions& exposure() const { return exposure_; }
  double clean_accuracy() const { return clean_acc_; }

  std::vector<AccuracyEstimate> measure_arms(double ber, const std::vector<Arm>& arms, int trials,
                                             std::uint64_t seed) const;
  AccuracyEstimate measure(double ber, const Scope& scope, int trials, std::uint64_t seed,
                           const ProtectionConfig* protection = nullptr) const;

 private:
  struct CleanRef {
    std::vector<int> predictions;
    MeterSnapshot per_image;
  };
  CleanRef clean_reference(const ProtectionConfig* protection) const;

  const Model& model_;
  const Dataset& data_;
  ExposureOptions exposure_;
  SamplingMode mode_;
  Census census_;
  std::vector<int> clean_pred_;
  double clean_acc_ = 0;
};

AccuracyEstimate measure_accuracy(const Model& model, const Dataset& data, double ber,
                                  const Scope& scope, int trials, std::uint64_t seed);

enum class Granularity : std::uint8_t { kModel, kLayer, kModule, kPatch };
std::string_view to_string(Granularity g);
Granularity parse_granularity(std::string_view s);

struct VfEntry {
  std::string label;
  std::vector<ComponentId> component;
  double vf = 0;
  double half_width = 0;
  double protected_acc = 0;
};

struct VulnerabilityReport {
  Granularity granularity = Granularity::kModel;
  double ber = 0;
  int trials = 0;
  std::size_t images = 0;
  std::uint64_t seed = 0;
  double clean_acc = 0;
  double baseline_acc = 0;
  double baseline_half_width = 0;
  std::uint64_t exposed_bits = 0;
  std::vector<VfEntry> entries;
  MeterSnapshot meter;
  int grid = 0;  // patch heatmap side length
};

struct PairedVf {
  double vf = 0;
  double half_width = 0;
  AccuracyEstimate baseline;
  AccuracyEstimate protected_arm;
};

/// acc(scope minus component) - acc(scope), paired seeds across the arms.
PairedVf vulnerability_factor(const Campaign& campaign, const std::vector<ComponentId>& component,
                              double ber, int trials, std::uint64_t seed,
                              const Scope& base = Scope::everything());

// Partitions used by the sweeps.
std::vector<std::pair<std::string, std::vector<ComponentId>>> layer_partition(const ModelConfig& c);
std::vector<std::pair<std::string, std::vector<ComponentId>>> module_partition();
// Linear sites of one planner layer (block index or num_layers for stem/head).
std::vector<ComponentId> linear_component(const ModelConfig& c, int planner_layer);

VulnerabilityReport model_report(const Campaign& campaign, double ber, int trials,
                                 std::uint64_t seed);
VulnerabilityReport layer_sweep(const Campaign& campaign, double ber, int trials,
                                std::uint64_t seed);
VulnerabilityReport module_sweep(const Campaign& campaign, double ber, int trials,
                                 std::uint64_t seed);

enum class PatchMode : std::uint8_t { kPixels, kEmbedding };
/// Requires a campaign built with pixel exposure for kPixels.
VulnerabilityReport patch_sweep(const Campaign& campaign, double ber, int trials,
                                std::uint64_t seed, PatchMode mode = PatchMode::kPixels);
// Row-major grid x grid matrix of patch VFs.
std::vector<std::vector<double>> heatmap(const VulnerabilityReport& report);

/// Per-(layer, NLF kind) output ranges over fault-free passes of `samples`;
/// softmax sites get the fixed [0, 1] range.
RangeProfile profile(const Model& model, const Dataset& samples, double alpha = kDefaultAlpha);

// Spearman rank correlation (average ranks for ties).
double spearman(const std::vector<double>& x, const std::vector<double>& y);

}  // namespace vitrel
