#include "vitrel/planner.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include <json.hpp>

#include "vitrel/errors.hpp"

namespace vitrel {
namespace {

constexpr double kTieTolerance = 1e-9;

double log_choose(double n, double k) {
  return std::lgamma(n + 1) - std::lgamma(k + 1) - std::lgamma(n - k + 1);
}

// P(two or more faulty cells of an mb x nb block share a row or column),
// each cell faulty independently with probability p. Summed as
// sum_j (C(N,j) - rooks_j) p^j (1-p)^(N-j), j >= 2, so no term cancels.
double block_failure(std::size_t mb, std::size_t nb, double p) {
  const double N = static_cast<double>(mb) * static_cast<double>(nb);
  if (p <= 0 || N < 2) return 0.0;
  if (p >= 1) return 1.0;
  const double lp = std::log(p), lq = std::log1p(-p);
  const std::size_t rook_max = std::min(mb, nb);
  double total = 0;
  double peak = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 2; j <= static_cast<std::size_t>(N); ++j) {
    const double jj = static_cast<double>(j);
    const double log_all = log_choose(N, jj) + jj * lp + (N - jj) * lq;
    double frac = 1.0;  // share of j-subsets that are not rook placements
    if (j <= rook_max) {
      const double log_rooks = log_choose(double(mb), jj) + log_choose(double(nb), jj) +
                               std::lgamma(jj + 1) - log_choose(N, jj);
      frac = -std::expm1(log_rooks);
    }
    const double term = frac * std::exp(log_all);
    total += term;
    peak = std::max(peak, log_all);
    // Past the binomial mode and contributing nothing measurable.
    if (jj > N * p + 1 && log_all < peak - 46) break;
  }
  return std::min(total, 1.0);
}

struct LayerState {
  int level = -1;  // -1 unprotected
  double residual = 0;
};

}  // namespace

PlannerInput PlannerInput::for_model(const ModelConfig& c, double ber, std::vector<double> layer_vf,
                                     double clean_acc, double baseline_acc) {
  if (layer_vf.size() != static_cast<std::size_t>(c.num_layers) + 1)
    throw ConfigError("planner: VF table must cover every block plus stem/head");
  PlannerInput in;
  in.ber = ber;
  in.layer_vf = std::move(layer_vf);
  in.sites = gemm_sites(c);
  in.clean_acc = clean_acc;
  in.baseline_acc = baseline_acc;
  in.total_muls = base_multiplications(c);
  return in;
}

std::string_view to_string(ObjectiveMode m) {
  return m == ObjectiveMode::kTargetAccuracy ? "TARGET_ACC" : "MAX_ACC_UNDER_LIMIT";
}

double residual_fraction(std::size_t m, std::size_t k, std::size_t n, const BlockSplit& split,
                         double ber) {
  split.validate(m, n);
  if (ber <= 0 || m == 0 || n == 0 || k == 0) return 0.0;
  const double p = ber >= 1 ? 1.0 : -std::expm1(32.0 * static_cast<double>(k) * std::log1p(-ber));
  const auto re = BlockSplit::edges(m, split.row_blocks);
  const auto ce = BlockSplit::edges(n, split.col_blocks);
  double log_all_ok = 0;
  for (std::uint32_t i = 0; i < split.row_blocks; ++i)
    for (std::uint32_t j = 0; j < split.col_blocks; ++j) {
      const double f = block_failure(re[i + 1] - re[i], ce[j + 1] - ce[j], p);
      if (f >= 1) return 1.0;
      log_all_ok += std::log1p(-f);
    }
  const double p_fail = -std::expm1(log_all_ok);
  const double p_any =
      p >= 1 ? 1.0 : -std::expm1(static_cast<double>(m) * static_cast<double>(n) * std::log1p(-p));
  if (p_any <= 0) return 0.0;
  return std::clamp(p_fail / p_any, 0.0, 1.0);
}

double vf_update(double layer_vf, const BlockSplit& split, double ber, std::size_t m,
                 std::size_t k, std::size_t n) {
  return layer_vf * residual_fraction(m, k, n, split, ber);
}

BlockSplit split_for_level(std::size_t m, std::size_t n, int level) {
  BlockSplit s;
  for (int d = 0; d < level; ++d) {
    const double mb = static_cast<double>(m) / s.row_blocks;
    const double nb = static_cast<double>(n) / s.col_blocks;
    const bool rows_can = s.row_blocks < m, cols_can = s.col_blocks < n;
    if (!rows_can && !cols_can) break;
    if (rows_can && (mb >= nb || !cols_can))
      s.row_blocks = static_cast<std::uint32_t>(std::min<std::size_t>(2 * s.row_blocks, m));
    else
      s.col_blocks = static_cast<std::uint32_t>(std::min<std::size_t>(2 * s.col_blocks, n));
  }
  return s;
}

double estimated_overhead(const PlannerInput& input, const std::map<std::string, BlockSplit>& s) {
  if (input.total_muls == 0) return 0.0;
  double extra = 0;
  for (const auto& site : input.sites) {
    auto it = s.find(site.name);
    if (it == s.end()) continue;
    extra += site.calls * expected_cost(site.m, site.k, site.n, it->second, input.ber).total();
  }
  return extra / static_cast<double>(input.total_muls);
}

AbftPlan plan(const PlannerInput& input) {
  const std::size_t L = input.layer_vf.size();
  if (!(input.ber >= 0 && input.ber <= 1)) throw ConfigError("planner: ber must lie in [0, 1]");
  if (!(input.overhead_limit >= 0) || !(input.target_acc_loss >= 0))
    throw ConfigError("planner: limits must be non-negative");
  for (const auto& s : input.sites)
    if (s.planner_layer < 0 || static_cast<std::size_t>(s.planner_layer) >= L)
      throw ConfigError("planner: site " + s.name + " has no VF entry");
  for (double v : input.layer_vf)
    if (!std::isfinite(v)) throw ConfigError("planner: VF table has a non-finite entry");

  // Negative VFs are measurement noise: nothing to protect.
  std::vector<double> vf(L);
  for (std::size_t l = 0; l < L; ++l) vf[l] = std::max(0.0, input.layer_vf[l]);
  double vf_sum = 0;
  for (double v : vf) vf_sum += v;
  const double total_loss = std::max(0.0, input.clean_acc - input.baseline_acc);

  std::vector<LayerState> st(L);
  for (std::size_t l = 0; l < L; ++l) st[l].residual = vf[l];

  // The VF table is rescaled to the measured total loss, which keeps the
  // estimate honest whether the per-layer VFs add up or overlap.
  auto predicted = [&](const std::vector<LayerState>& s) {
    if (vf_sum <= 0) return total_loss;
    double r = 0;
    for (const auto& x : s) r += x.residual;
    return total_loss * r / vf_sum;
  };
  auto splits_of = [&](const std::vector<LayerState>& s) {
    std::map<std::string, BlockSplit> out;
    for (const auto& site : input.sites) {
      const int lv = s[site.planner_layer].level;
      if (lv >= 0) out[site.name] = split_for_level(site.m, site.n, lv);
    }
    return out;
  };
  std::map<std::pair<std::size_t, int>, double> measured;
  auto residual_at = [&](std::size_t l, int level) {
    if (input.remeasure) {
      auto [it, fresh] = measured.try_emplace({l, level}, 0.0);
      if (fresh) it->second = std::max(0.0, input.remeasure(static_cast<int>(l), level));
      return it->second;
    }
    double muls = 0, acc = 0;
    for (const auto& site : input.sites) {
      if (static_cast<std::size_t>(site.planner_layer) != l) continue;
      const double w = static_cast<double>(site.muls());
      muls += w;
      acc += w * residual_fraction(site.m, site.k, site.n, split_for_level(site.m, site.n, level),
                                   input.ber);
    }
    return muls > 0 ? vf[l] * acc / muls : 0.0;
  };
  // Whether moving layer l one level up changes any split.
  auto can_advance = [&](std::size_t l, int level) {
    if (level < 0) return true;
    for (const auto& site : input.sites)
      if (static_cast<std::size_t>(site.planner_layer) == l &&
          !(split_for_level(site.m, site.n, level + 1) == split_for_level(site.m, site.n, level)))
        return true;
    return false;
  };

  AbftPlan result;
  double loss = predicted(st);
  const double slack = 1e-12;

  while (loss > input.target_acc_loss || result.mode == ObjectiveMode::kMaxAccuracyUnderLimit) {
    // Candidate moves ordered by current residual VF (ties: lowest index).
    std::vector<std::size_t> order;
    for (std::size_t l = 0; l < L; ++l)
      if (st[l].residual > 0 && can_advance(l, st[l].level)) order.push_back(l);
    if (order.empty()) break;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return st[a].residual > st[b].residual + kTieTolerance * std::max(1.0, st[b].residual);
    });

    bool moved = false;
    for (std::size_t l : order) {
      auto next = st;
      next[l].level = st[l].level + 1;
      const double ovh = estimated_overhead(input, splits_of(next));
      if (ovh > input.overhead_limit + slack) {
        // The limit binds: from here on maximise accuracy among feasible moves.
        result.mode = ObjectiveMode::kMaxAccuracyUnderLimit;
        continue;
      }
      next[l].residual = residual_at(l, next[l].level);
      const double next_loss = predicted(next);
      if (result.mode == ObjectiveMode::kMaxAccuracyUnderLimit && next_loss >= loss) continue;
      st = std::move(next);
      loss = next_loss;
      result.trace.push_back({static_cast<int>(l), st[l].level, loss, ovh});
      moved = true;
      break;
    }
    if (!moved) break;
    if (result.mode == ObjectiveMode::kMaxAccuracyUnderLimit && loss <= input.target_acc_loss) break;
  }

  result.splits = splits_of(st);
  result.estimated_overhead = estimated_overhead(input, result.splits);
  result.predicted_loss = loss;
  return result;
}

ProtectionConfig AbftPlan::protection(UncorrectablePolicy policy) const {
  ProtectionConfig p;
  p.abft = splits;
  p.policy = policy;
  return p;
}

std::string AbftPlan::to_json() const {
  nlohmann::json sites = nlohmann::json::object();
  for (const auto& [name, s] : splits) sites[name] = {s.row_blocks, s.col_blocks};
  nlohmann::json steps = nlohmann::json::array();
  for (const auto& s : trace)
    steps.push_back({{"layer", s.layer},
                     {"level", s.level},
                     {"predicted_loss", s.predicted_loss},
                     {"estimated_overhead", s.estimated_overhead}});
  nlohmann::json j = {{"objective_mode", std::string(to_string(mode))},
                      {"estimated_overhead", estimated_overhead},
                      {"predicted_loss", predicted_loss},
                      {"splits", sites},
                      {"trace", steps}};
  return j.dump(2) + "\n";
}

AbftPlan AbftPlan::from_json(const std::string& text) {
  AbftPlan p;
  try {
    const auto j = nlohmann::json::parse(text);
    const auto mode = j.at("objective_mode").get<std::string>();
    if (mode == "TARGET_ACC")
      p.mode = ObjectiveMode::kTargetAccuracy;
    else if (mode == "MAX_ACC_UNDER_LIMIT")
      p.mode = ObjectiveMode::kMaxAccuracyUnderLimit;
    else
      throw ConfigError("plan: unknown objective mode " + mode);
    p.estimated_overhead = j.at("estimated_overhead").get<double>();
    p.predicted_loss = j.at("predicted_loss").get<double>();
    for (const auto& [name, v] : j.at("splits").items())
      p.splits[name] = BlockSplit{v.at(0).get<std::uint32_t>(), v.at(1).get<std::uint32_t>()};
    for (const auto& s : j.value("trace", nlohmann::json::array()))
      p.trace.push_back({s.at("layer").get<int>(), s.at("level").get<int>(),
                         s.at("predicted_loss").get<double>(),
                         s.at("estimated_overhead").get<double>()});
  } catch (const nlohmann::json::exception& ex) {
    throw ConfigError(std::string("plan: ") + ex.what());
  }
  return p;
}

void AbftPlan::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << to_json();
}

AbftPlan AbftPlan::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read plan " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json(ss.str());
}

PlanValidation validate_plan(const AbftPlan& plan, const Campaign& campaign, double ber,
                             int trials, std::uint64_t seed, const Scope& scope,
                             const RangeProfile* ranges) {
  const auto sites = gemm_sites(campaign.model().config);
  for (const auto& [name, split] : plan.splits) {
    auto it = std::find_if(sites.begin(), sites.end(), [&](const GemmSite& s) { return s.name == name; });
    if (it == sites.end()) throw ConfigError("plan site " + name + " is not in the model");
    split.validate(it->m, it->n);
  }
  ProtectionConfig prot = plan.protection();
  prot.ranges = ranges;
  PlanValidation v;
  v.accuracy = campaign.measure(ber, scope, trials, seed, &prot);
  v.measured_overhead = v.accuracy.meter.overhead_fraction();
  return v;
}

LayerVfTable planner_vfs(const Campaign& campaign, double ber, int trials, std::uint64_t seed) {
  const ModelConfig& cfg = campaign.model().config;
  std::vector<Arm> arms{{Scope::everything(), nullptr}};
  for (int l = 0; l <= cfg.num_layers; ++l)
    arms.push_back({Scope{linear_component(cfg, l), {}}, nullptr});
  const auto est = campaign.measure_arms(ber, arms, trials, seed);

  LayerVfTable t;
  t.baseline = est[0];
  const double clean = campaign.clean_accuracy();
  for (std::size_t a = 1; a < est.size(); ++a) {
    // Paired against the clean arm, which is the same on every trial.
    std::vector<double> d;
    for (double v : est[a].per_trial) d.push_back(clean - v);
    double m = 0;
    for (double v : d) m += v;
    m /= static_cast<double>(d.size());
    double ss = 0;
    for (double v : d) ss += (v - m) * (v - m);
    const double hw = d.size() < 2 ? 0.0
                                   : 1.96 * std::sqrt(ss / static_cast<double>(d.size() - 1)) /
                                         std::sqrt(static_cast<double>(d.size()));
    t.vf.push_back(m);
    t.half_width.push_back(hw);
  }
  return t;
}

ProtectionComparison compare_protection(const Campaign& campaign, const Dataset& profile_set,
                                        double ber, int trials, std::uint64_t seed,
                                        const ProtectOptions& options) {
  if (profile_set.empty()) throw ConfigError("protect: no profiling samples");
  const ModelConfig& cfg = campaign.model().config;
  ProtectionComparison out;
  out.ber = ber;
  // Planning and validation use independent trial seeds.
  const std::uint64_t plan_seed = derive_seed(seed, 0x706c616e6e6572ULL);
  out.table = planner_vfs(campaign, ber, trials, plan_seed);

  PlannerInput in = PlannerInput::for_model(cfg, ber, out.table.vf, campaign.clean_accuracy(),
                                            out.table.baseline.accuracy);
  in.target_acc_loss = options.target_acc_loss;
  in.overhead_limit = options.overhead_limit;
  if (options.empirical_update)
    in.remeasure = [&](int layer, int level) {
      ProtectionConfig p;
      for (const auto& site : in.sites)
        if (site.planner_layer == layer) p.abft[site.name] = split_for_level(site.m, site.n, level);
      const auto est =
          campaign.measure(ber, Scope{linear_component(cfg, layer), {}}, trials, plan_seed, &p);
      return campaign.clean_accuracy() - est.accuracy;
    };
  out.plan = options.plan ? *options.plan : plan(in);

  const std::size_t n = std::min(options.profile_samples, profile_set.size());
  out.ranges = options.ranges ? *options.ranges
                              : profile(campaign.model(),
                                        Dataset(profile_set.begin(), profile_set.begin() + n),
                                        options.alpha);

  const ProtectionConfig fixed = ProtectionConfig::global_abft(cfg, UncorrectablePolicy::kKeep);
  ProtectionConfig adaptive = out.plan.protection(UncorrectablePolicy::kZero);
  adaptive.ranges = &out.ranges;
  const auto est = campaign.measure_arms(
      ber, {{Scope::everything(), nullptr}, {Scope::everything(), &fixed},
            {Scope::everything(), &adaptive}},
      trials, derive_seed(seed, 0x76616c6964ULL));
  out.none = est[0];
  out.fixed = est[1];
  out.adaptive = est[2];
  return out;
}

}  // namespace vitrel
