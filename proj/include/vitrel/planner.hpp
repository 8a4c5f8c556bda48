#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "vitrel/abft.hpp"
#include "vitrel/lab.hpp"
#include "vitrel/model.hpp"

namespace vitrel {

struct PlannerInput {
  double ber = 0;
  std::vector<double> layer_vf;  // indexed by planner layer
  std::vector<GemmSite> sites;
  double clean_acc = 1;
  double baseline_acc = 1;
  double target_acc_loss = 0.02;
  double overhead_limit = 0.02;
  std::uint64_t total_muls = 0;
  // Empirical residual VF of a layer protected at `level`; the analytic
  // vf_update rule is used when empty.
  std::function<double(int layer, int level)> remeasure;

  static PlannerInput for_model(const ModelConfig& c, double ber, std::vector<double> layer_vf,
                                double clean_acc, double baseline_acc);
};

enum class ObjectiveMode : std::uint8_t { kTargetAccuracy, kMaxAccuracyUnderLimit };
std::string_view to_string(ObjectiveMode m);

struct PlanStep {
  int layer = 0;
  int level = 0;  // 0: protected at 1x1, d: block count doubled d times
  double predicted_loss = 0;
  double estimated_overhead = 0;
};

struct AbftPlan {
  std::map<std::string, BlockSplit> splits;  // protected sites only
  double estimated_overhead = 0;
  double predicted_loss = 0;
  ObjectiveMode mode = ObjectiveMode::kTargetAccuracy;
  std::vector<PlanStep> trace;

  ProtectionConfig protection(UncorrectablePolicy policy = UncorrectablePolicy::kZero) const;
  std::string to_json() const;
  static AbftPlan from_json(const std::string& text);
  void save(const std::string& path) const;
  static AbftPlan load(const std::string& path);
};

/// P(some block of one call stays uncorrupted-uncorrectable | call has a
/// fault): a block fails when two faulty cells share a row or column.
double residual_fraction(std::size_t m, std::size_t k, std::size_t n, const BlockSplit& split,
                         double ber);
double vf_update(double layer_vf, const BlockSplit& split, double ber, std::size_t m,
                 std::size_t k, std::size_t n);

// Split reached after `level` doublings along the longer block side.
BlockSplit split_for_level(std::size_t m, std::size_t n, int level);

AbftPlan plan(const PlannerInput& input);

// Analytic overhead of a set of splits (fraction of total multiplications).
double estimated_overhead(const PlannerInput& input, const std::map<std::string, BlockSplit>& s);

struct PlanValidation {
  AccuracyEstimate accuracy;
  double measured_overhead = 0;
};

PlanValidation validate_plan(const AbftPlan& plan, const Campaign& campaign, double ber,
                             int trials, std::uint64_t seed, const Scope& scope,
                             const RangeProfile* ranges = nullptr);

/// Planner VF table: entry l is clean accuracy minus accuracy with only the
/// linear ops of planner layer l exposed (paired trials). Also returns the
/// all-exposed baseline measured on the same trials.
struct LayerVfTable {
  std::vector<double> vf;
  std::vector<double> half_width;
  AccuracyEstimate baseline;
};
LayerVfTable planner_vfs(const Campaign& campaign, double ber, int trials, std::uint64_t seed);

struct ProtectOptions {
  double target_acc_loss = 0.02;
  double overhead_limit = 0.02;
  double alpha = kDefaultAlpha;
  std::size_t profile_samples = 64;
  bool empirical_update = false;       // re-measure VFs instead of vf_update
  std::optional<AbftPlan> plan;        // skip planning
  std::optional<RangeProfile> ranges;  // skip profiling
};

/// Unprotected vs. fixed global 1x1 ABFT vs. adaptive ABFT + range guard,
/// measured on shared flip plans.
struct ProtectionComparison {
  double ber = 0;
  LayerVfTable table;
  AbftPlan plan;
  RangeProfile ranges;
  AccuracyEstimate none, fixed, adaptive;
};
ProtectionComparison compare_protection(const Campaign& campaign, const Dataset& profile_set,
                                        double ber, int trials, std::uint64_t seed,
                                        const ProtectOptions& options = {});

}  // namespace vitrel
