#include "vitrel/lab.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "vitrel/errors.hpp"

namespace vitrel {
namespace {

constexpr double kZ95 = 1.96;

double mean_of(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double half_width_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double ss = 0;
  for (double x : v) ss += (x - m) * (x - m);
  const double sd = std::sqrt(ss / static_cast<double>(v.size() - 1));
  return kZ95 * sd / std::sqrt(static_cast<double>(v.size()));
}

void check_run(const Dataset& data, double ber, int trials) {
  if (data.empty()) throw ConfigError("campaign: empty dataset");
  if (trials < 1) throw ConfigError("campaign: trials must be >= 1");
  if (!(ber >= 0.0 && ber <= 1.0)) throw ConfigError("campaign: ber must lie in [0, 1]");
}

// Rejects component ids that address nothing in the model.
void check_component(const Campaign& c, const std::vector<ComponentId>& component) {
  if (component.empty()) throw ConfigError("component list is empty");
  const ModelConfig& cfg = c.model().config;
  for (const ComponentId& id : component) {
    if (id.layer != kAllLayers && id.layer != kOutsideBlocks &&
        (id.layer < 0 || id.layer >= cfg.num_layers))
      throw ConfigError("component " + id.str() + ": layer out of range");
    if (id.patch != kAllPatches && (id.patch < 0 || id.patch >= cfg.num_patches()))
      throw ConfigError("component " + id.str() + ": patch out of range");
    if (c.census().bits_in(Scope{{id}, {}}) == 0)
      throw ConfigError("component " + id.str() + " has no exposed words in this campaign");
  }
}

std::vector<double> diffs(const AccuracyEstimate& a, const AccuracyEstimate& b) {
  std::vector<double> d(a.per_trial.size());
  for (std::size_t t = 0; t < d.size(); ++t) d[t] = a.per_trial[t] - b.per_trial[t];
  return d;
}

using Partition = std::vector<std::pair<std::string, std::vector<ComponentId>>>;

// Baseline arm over `base` plus one arm per entry with the entry removed.
VulnerabilityReport removal_sweep(const Campaign& campaign, Granularity g, const Partition& parts,
                                  double ber, int trials, std::uint64_t seed) {
  std::vector<Arm> arms{{Scope::everything(), nullptr}};
  for (const auto& [label, comp] : parts) {
    check_component(campaign, comp);
    arms.push_back({Scope::everything().without(comp), nullptr});
  }
  const auto est = campaign.measure_arms(ber, arms, trials, seed);

  VulnerabilityReport r;
  r.granularity = g;
  r.ber = ber;
  r.trials = trials;
  r.images = campaign.data().size();
  r.seed = seed;
  r.clean_acc = campaign.clean_accuracy();
  r.baseline_acc = est[0].accuracy;
  r.baseline_half_width = est[0].half_width;
  r.exposed_bits = campaign.census().total_bits();
  for (const auto& e : est) r.meter += e.meter;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    const auto d = diffs(est[i + 1], est[0]);
    r.entries.push_back({parts[i].first, parts[i].second, mean_of(d), half_width_of(d),
                         est[i + 1].accuracy});
  }
  return r;
}

}  // namespace

Campaign::Campaign(const Model& model, const Dataset& data, ExposureOptions exposure,
                   SamplingMode mode)
    : model_(model), data_(data), exposure_(exposure), mode_(mode) {
  if (data.empty()) throw ConfigError("campaign: empty dataset");
  census_ = take_census(model, exposure);
  clean_pred_.resize(data.size());
#pragma omp parallel for schedule(dynamic)
  for (std::size_t i = 0; i < data.size(); ++i) clean_pred_[i] = top1(forward(model, data[i].image));
  std::size_t ok = 0;
  for (std::size_t i = 0; i < data.size(); ++i) ok += clean_pred_[i] == data[i].label;
  clean_acc_ = static_cast<double>(ok) / static_cast<double>(data.size());
}

Campaign::CleanRef Campaign::clean_reference(const ProtectionConfig* protection) const {
  CleanRef ref;
  if (protection == nullptr || protection->empty()) {
    ref.predictions = clean_pred_;
    ref.per_image.base_muls = base_multiplications(model_.config);
    return ref;
  }
  // Fault-free costs do not depend on the image; predictions can (the guard
  // may clip an eval value that profiling never saw).
  ref.predictions.resize(data_.size());
  std::vector<MeterSnapshot> snaps(data_.size());
#pragma omp parallel for schedule(dynamic)
  for (std::size_t i = 0; i < data_.size(); ++i) {
    OverheadMeter meter;
    ref.predictions[i] = top1(forward(model_, data_[i].image, nullptr, *protection, &meter));
    snaps[i] = meter.snapshot();
  }
  ref.per_image = snaps[0];
  return ref;
}

std::vector<AccuracyEstimate> Campaign::measure_arms(double ber, const std::vector<Arm>& arms,
                                                     int trials, std::uint64_t seed) const {
  check_run(data_, ber, trials);
  const std::size_t n_img = data_.size(), n_arm = arms.size();
  const std::size_t jobs = static_cast<std::size_t>(trials) * n_img;

  std::vector<CleanRef> refs;
  for (const Arm& a : arms) refs.push_back(clean_reference(a.protection));
  static const ProtectionConfig kNone{};

  std::vector<std::uint8_t> correct(n_arm * jobs, 0);
  std::vector<MeterSnapshot> meters(n_arm * jobs);

#pragma omp parallel for schedule(dynamic)
  for (std::size_t job = 0; job < jobs; ++job) {
    const std::size_t trial = job / n_img, img = job % n_img;
    const std::uint64_t job_seed = derive_seed(seed, trial, img);
    const LabeledImage& sample = data_[img];

    std::vector<std::uint64_t> plan;
    if (mode_ == SamplingMode::kPlanned && ber > 0) {
      std::mt19937_64 rng(derive_seed(job_seed, 0x706c616eULL));
      plan = plan_flips(census_.total_bits(), ber, rng);
    }
    for (std::size_t a = 0; a < n_arm; ++a) {
      const Arm& arm = arms[a];
      const ProtectionConfig& prot = arm.protection ? *arm.protection : kNone;
      const std::size_t slot = a * jobs + job;
      std::optional<FaultSession> session;
      if (mode_ == SamplingMode::kPlanned) {
        std::vector<std::uint64_t> kept;
        for (std::uint64_t pos : plan) {
          const Region* r = census_.locate(pos);
          if (r && arm.scope.contains(r->id_of((pos - r->bit_base) / r->width)))
            kept.push_back(pos);
        }
        if (!kept.empty())
          session = FaultSession::from_positions(std::move(kept), arm.scope, census_, exposure_);
      } else if (ber > 0 && !arm.scope.empty()) {
        session = FaultSession::bernoulli(ber, job_seed, arm.scope, exposure_);
      }
      if (!session) {
        correct[slot] = refs[a].predictions[img] == sample.label;
        meters[slot] = refs[a].per_image;
        continue;
      }
      OverheadMeter meter;
      correct[slot] = top1(forward(model_, sample.image, &*session, prot, &meter)) == sample.label;
      meters[slot] = meter.snapshot();
    }
  }

  std::vector<AccuracyEstimate> out(n_arm);
  for (std::size_t a = 0; a < n_arm; ++a) {
    AccuracyEstimate& e = out[a];
    e.trials = trials;
    e.images = n_img;
    e.per_trial.assign(trials, 0.0);
    for (std::size_t job = 0; job < jobs; ++job) {
      e.per_trial[job / n_img] += correct[a * jobs + job];
      e.meter += meters[a * jobs + job];
    }
    for (double& v : e.per_trial) v /= static_cast<double>(n_img);
    e.accuracy = mean_of(e.per_trial);
    e.half_width = half_width_of(e.per_trial);
  }
  return out;
}

AccuracyEstimate Campaign::measure(double ber, const Scope& scope, int trials, std::uint64_t seed,
                                   const ProtectionConfig* protection) const {
  return measure_arms(ber, {{scope, protection}}, trials, seed).front();
}

AccuracyEstimate measure_accuracy(const Model& model, const Dataset& data, double ber,
                                  const Scope& scope, int trials, std::uint64_t seed) {
  check_run(data, ber, trials);
  return Campaign(model, data).measure(ber, scope, trials, seed);
}

std::string_view to_string(Granularity g) {
  switch (g) {
    case Granularity::kModel: return "model";
    case Granularity::kLayer: return "layer";
    case Granularity::kModule: return "module";
    case Granularity::kPatch: return "patch";
  }
  return "?";
}

Granularity parse_granularity(std::string_view s) {
  for (auto g : {Granularity::kModel, Granularity::kLayer, Granularity::kModule,
                 Granularity::kPatch})
    if (to_string(g) == s) return g;
  throw ConfigError("unknown granularity '" + std::string(s) + "'");
}

PairedVf vulnerability_factor(const Campaign& campaign, const std::vector<ComponentId>& component,
                              double ber, int trials, std::uint64_t seed, const Scope& base) {
  check_component(campaign, component);
  const auto est =
      campaign.measure_arms(ber, {{base, nullptr}, {base.without(component), nullptr}}, trials, seed);
  const auto d = diffs(est[1], est[0]);
  return {mean_of(d), half_width_of(d), est[0], est[1]};
}

Partition layer_partition(const ModelConfig& c) {
  Partition p;
  for (int l = 0; l < c.num_layers; ++l)
    p.push_back({"L" + std::to_string(l), {ComponentId{l, ModuleKind::kAll, OpKind::kAll, kAllPatches}}});
  p.push_back({"outside", {ComponentId{kOutsideBlocks, ModuleKind::kAll, OpKind::kAll, kAllPatches}}});
  return p;
}

Partition module_partition() {
  Partition p;
  for (auto m : {ModuleKind::kMhaLf, ModuleKind::kFfLf, ModuleKind::kNlf, ModuleKind::kPatchEmbed,
                 ModuleKind::kHead})
    p.push_back({std::string(to_string(m)), {ComponentId{kAllLayers, m, OpKind::kAll, kAllPatches}}});
  return p;
}

std::vector<ComponentId> linear_component(const ModelConfig& c, int planner_layer) {
  if (planner_layer < 0 || planner_layer > c.num_layers)
    throw ConfigError("planner layer out of range");
  if (planner_layer == c.num_layers)
    return {{kOutsideBlocks, ModuleKind::kPatchEmbed, OpKind::kFc, kAllPatches},
            {kOutsideBlocks, ModuleKind::kHead, OpKind::kFc, kAllPatches}};
  return {{planner_layer, ModuleKind::kMhaLf, OpKind::kFc, kAllPatches},
          {planner_layer, ModuleKind::kMhaLf, OpKind::kGemm, kAllPatches},
          {planner_layer, ModuleKind::kFfLf, OpKind::kFc, kAllPatches}};
}

VulnerabilityReport model_report(const Campaign& campaign, double ber, int trials,
                                 std::uint64_t seed) {
  return removal_sweep(campaign, Granularity::kModel, {{"model", {ComponentId::whole_model()}}},
                       ber, trials, seed);
}

VulnerabilityReport layer_sweep(const Campaign& campaign, double ber, int trials,
                                std::uint64_t seed) {
  return removal_sweep(campaign, Granularity::kLayer, layer_partition(campaign.model().config), ber,
                       trials, seed);
}

VulnerabilityReport module_sweep(const Campaign& campaign, double ber, int trials,
                                 std::uint64_t seed) {
  return removal_sweep(campaign, Granularity::kModule, module_partition(), ber, trials, seed);
}

VulnerabilityReport patch_sweep(const Campaign& campaign, double ber, int trials,
                                std::uint64_t seed, PatchMode mode) {
  const ModelConfig& cfg = campaign.model().config;
  if (mode == PatchMode::kPixels && !campaign.exposure().pixels)
    throw ConfigError("pixel-domain patch sweep needs a campaign with pixel exposure");
  const OpKind op = mode == PatchMode::kPixels ? OpKind::kPixel : OpKind::kFc;
  const int P = cfg.num_patches();

  // Arm 0 injects into every patch at once; arm p+1 into patch p only. The
  // protected counterpart of each is the fault-free model.
  std::vector<Arm> arms{{Scope{{ComponentId{kOutsideBlocks, ModuleKind::kPatchEmbed, op, kAllPatches}}, {}},
                         nullptr}};
  for (int p = 0; p < P; ++p)
    arms.push_back(
        {Scope{{ComponentId{kOutsideBlocks, ModuleKind::kPatchEmbed, op, p}}, {}}, nullptr});
  const auto est = campaign.measure_arms(ber, arms, trials, seed);

  VulnerabilityReport r;
  r.granularity = Granularity::kPatch;
  r.ber = ber;
  r.trials = trials;
  r.images = campaign.data().size();
  r.seed = seed;
  r.clean_acc = campaign.clean_accuracy();
  r.baseline_acc = est[0].accuracy;
  r.baseline_half_width = est[0].half_width;
  r.exposed_bits = campaign.census().bits_in(arms[0].scope);
  r.grid = cfg.grid();
  for (const auto& e : est) r.meter += e.meter;
  for (int p = 0; p < P; ++p) {
    const auto& e = est[p + 1];
    // Paired against the clean predictions, which are the same every trial.
    std::vector<double> d(e.per_trial.size());
    for (std::size_t t = 0; t < d.size(); ++t) d[t] = campaign.clean_accuracy() - e.per_trial[t];
    r.entries.push_back({"P" + std::to_string(p), arms[p + 1].scope.include, mean_of(d),
                         half_width_of(d), campaign.clean_accuracy()});
  }
  return r;
}

std::vector<std::vector<double>> heatmap(const VulnerabilityReport& r) {
  if (r.grid <= 0 || r.entries.size() != static_cast<std::size_t>(r.grid) * r.grid)
    throw ConfigError("heatmap: report is not a patch sweep");
  std::vector<std::vector<double>> out(r.grid, std::vector<double>(r.grid));
  for (int y = 0; y < r.grid; ++y)
    for (int x = 0; x < r.grid; ++x) out[y][x] = r.entries[y * r.grid + x].vf;
  return out;
}

RangeProfile profile(const Model& model, const Dataset& samples, double alpha) {
  if (samples.empty()) throw ConfigError("profile: no samples");
  if (!(alpha >= 0 && alpha < 1)) throw ConfigError("profile: alpha must lie in [0, 1)");
  RangeProfile prof(alpha);
  ForwardHooks hooks;
  hooks.on_nlf = [&](const RangeSite& site, std::span<const float> v) {
    prof.observe(site, site.kind, v.data(), v.size());
  };
  for (const auto& s : samples) forward(model, s.image, nullptr, {}, nullptr, &hooks);
  return prof;
}

double spearman(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw ConfigError("spearman: need two equal series");
  auto ranks = [](const std::vector<double>& v) {
    std::vector<std::size_t> idx(v.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](auto a, auto b) { return v[a] < v[b]; });
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < idx.size();) {
      std::size_t j = i;
      while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
      const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
      for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
      i = j + 1;
    }
    return r;
  };
  const auto rx = ranks(x), ry = ranks(y);
  const double mx = mean_of(rx), my = mean_of(ry);
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0 || syy == 0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

}  // namespace vitrel
