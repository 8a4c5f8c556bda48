// vitrel: fault-injection campaigns, vulnerability reports and protection
// planning for small quantized vision transformers.
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "vitrel/dataset.hpp"
#include "vitrel/errors.hpp"
#include "vitrel/lab.hpp"
#include "vitrel/planner.hpp"
#include "vitrel/report.hpp"

namespace fs = std::filesystem;
using namespace vitrel;
using json = nlohmann::ordered_json;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;

// Everything a run depends on. Its canonical JSON is what gets hashed.
struct Experiment {
  std::string config_path;
  std::string preset_name = "tiny";
  std::string model_config;  // explicit ModelConfig file
  std::string archive;       // trained weights, skips head fitting
  std::string data_dir;      // <dir>/train/<label>/*.ppm and <dir>/eval/...
  SyntheticSpec synthetic;
  std::vector<double> bers;
  int trials = 200;
  std::uint64_t seed = 1;
  std::string out = "out";
  std::string granularity = "model";
  std::string patch_mode = "pixels";
  std::string plan_path;
  std::string ranges_path;
  double alpha = kDefaultAlpha;
  double target = 0.02;
  double limit = 0.02;
  std::size_t profile_samples = 64;
  bool empirical_update = false;

  ModelConfig model_cfg;

  json canonical(const std::string& command) const {
    json j;
    j["command"] = command;
    j["model"] = json::parse(model_cfg.to_json());
    j["archive"] = archive;
    if (data_dir.empty())
      j["dataset"] = {{"synthetic",
                       {{"per_class_train", synthetic.per_class_train},
                        {"per_class_eval", synthetic.per_class_eval},
                        {"noise", synthetic.noise},
                        {"seed", synthetic.seed}}}};
    else
      j["dataset"] = {{"path", data_dir}};
    j["ber"] = bers;
    j["trials"] = trials;
    j["seed"] = seed;
    j["granularity"] = granularity;
    j["patch_mode"] = patch_mode;
    j["protection"] = {{"plan", plan_path},
                       {"ranges", ranges_path},
                       {"alpha", alpha},
                       {"target_acc_loss", target},
                       {"overhead_limit", limit},
                       {"profile_samples", profile_samples},
                       {"empirical_update", empirical_update}};
    return j;
  }
};

// Values from --config fill anything the command line left unset.
void apply_config_file(Experiment& e, const CLI::App& app) {
  if (e.config_path.empty()) return;
  json j;
  try {
    j = json::parse(read_file(e.config_path));
  } catch (const json::exception& ex) {
    throw ConfigError(e.config_path + ": " + ex.what());
  }
  auto unset = [&](const char* flag) { return app.count(flag) == 0; };
  try {
    if (j.contains("model") && unset("--preset") && unset("--model-config")) {
      const auto& m = j["model"];
      if (m.is_string())
        e.preset_name = m.get<std::string>();
      else
        e.model_config = m.dump();
    }
    if (j.contains("archive") && unset("--archive")) e.archive = j["archive"].get<std::string>();
    if (j.contains("dataset") && unset("--data")) {
      const auto& d = j["dataset"];
      if (d.contains("path")) e.data_dir = d["path"].get<std::string>();
      if (d.contains("synthetic")) {
        const auto& s = d["synthetic"];
        e.synthetic.per_class_train = s.value("per_class_train", e.synthetic.per_class_train);
        e.synthetic.per_class_eval = s.value("per_class_eval", e.synthetic.per_class_eval);
        e.synthetic.noise = s.value("noise", e.synthetic.noise);
        e.synthetic.seed = s.value("seed", e.synthetic.seed);
      }
    }
    if (j.contains("ber") && unset("--ber")) e.bers = j["ber"].get<std::vector<double>>();
    if (j.contains("trials") && unset("--trials")) e.trials = j["trials"].get<int>();
    if (j.contains("seed") && unset("--seed")) e.seed = j["seed"].get<std::uint64_t>();
    if (j.contains("out") && unset("--out")) e.out = j["out"].get<std::string>();
    if (j.contains("granularity") && unset("--granularity"))
      e.granularity = j["granularity"].get<std::string>();
    if (j.contains("protection")) {
      const auto& p = j["protection"];
      if (unset("--plan")) e.plan_path = p.value("plan", e.plan_path);
      if (unset("--ranges")) e.ranges_path = p.value("ranges", e.ranges_path);
      if (unset("--alpha")) e.alpha = p.value("alpha", e.alpha);
      if (unset("--target")) e.target = p.value("target_acc_loss", e.target);
      if (unset("--limit")) e.limit = p.value("overhead_limit", e.limit);
    }
  } catch (const json::exception& ex) {
    throw ConfigError(e.config_path + ": " + ex.what());
  }
}

void resolve_model(Experiment& e) {
  if (!e.model_config.empty()) {
    e.model_cfg = fs::exists(e.model_config) ? ModelConfig::load(e.model_config)
                                             : ModelConfig::from_json(e.model_config);
  } else {
    e.model_cfg = preset(e.preset_name);
  }
  if (e.trials < 1) throw ConfigError("--trials must be >= 1");
  for (double b : e.bers)
    if (!(b >= 0 && b <= 1)) throw ConfigError("BER values must lie in [0, 1]");
}

struct Workspace {
  Model model;
  DatasetSplit data;
};

Workspace load_workspace(Experiment& e) {
  Workspace w;
  if (!e.archive.empty()) {
    w.model = load_archive(e.archive);
    e.model_cfg = w.model.config;  // the archive carries its own config
  }
  if (!e.data_dir.empty()) {
    w.data.train = load_image_directory((fs::path(e.data_dir) / "train").string(), e.model_cfg);
    w.data.eval = load_image_directory((fs::path(e.data_dir) / "eval").string(), e.model_cfg);
  } else {
    w.data = make_synthetic(e.model_cfg, e.synthetic);
  }
  if (e.archive.empty()) w.model = fit_head(build_model(e.model_cfg), w.data.train);
  if (w.data.eval.empty()) throw ConfigError("evaluation set is empty");
  return w;
}

std::string provenance_comment(const Experiment& e, const std::string& hash) {
  return "# vitrel " + tool_version() + " config_hash=" + hash +
         " seed=" + std::to_string(e.seed) + "\n";
}

json provenance(const Experiment& e, const std::string& hash) {
  return {{"tool", "vitrel"}, {"version", tool_version()}, {"config_hash", hash}, {"seed", e.seed}};
}

std::string out_path(const Experiment& e, const std::string& name) {
  fs::create_directories(e.out);
  return (fs::path(e.out) / name).string();
}

int cmd_build_model(Experiment& e, bool list) {
  if (list) {
    std::printf("%-12s %8s %8s %6s %6s %14s\n", "preset", "layers", "heads", "dim", "patch",
                "parameters");
    for (const auto& p : presets())
      std::printf("%-12s %8s %8s %6d %6d %14llu\n", p.name.c_str(), p.layers_verbatim.c_str(),
                  p.heads_verbatim.c_str(), p.config.embed_dim, p.config.patch_size,
                  static_cast<unsigned long long>(parameter_count(p.config)));
    return 0;
  }
  Workspace w = load_workspace(e);
  const std::string hash = config_hash(e.canonical("build-model").dump());
  const std::string stem = out_path(e, "model");
  save_archive(w.model, stem);
  const double acc = clean_accuracy(w.model, w.data.eval);
  json j = provenance(e, hash);
  j["config"] = json::parse(w.model.config.to_json());
  j["parameters"] = w.model.parameter_count();
  j["base_multiplications"] = base_multiplications(w.model.config);
  j["clean_acc"] = acc;
  write_file(out_path(e, "model_summary.json"), j.dump(2) + "\n");
  std::printf("%s: %llu parameters, %llu multiplications per forward, clean accuracy %s\n",
              w.model.config.name.c_str(),
              static_cast<unsigned long long>(w.model.parameter_count()),
              static_cast<unsigned long long>(base_multiplications(w.model.config)),
              fmt_real(acc).c_str());
  std::printf("wrote %s.bin / %s.json\n", stem.c_str(), stem.c_str());
  return 0;
}

int cmd_sweep(Experiment& e) {
  if (e.bers.empty()) e.bers = {0, 1e-10, 1e-9, 1e-8, 1e-7};
  Workspace w = load_workspace(e);
  const std::string hash = config_hash(e.canonical("sweep").dump());
  Campaign campaign(w.model, w.data.eval);
  std::string csv = provenance_comment(e, hash) + "ber,accuracy,half_width,clean_acc\n";
  for (std::size_t i = 0; i < e.bers.size(); ++i) {
    const auto est = campaign.measure(e.bers[i], Scope::everything(), e.trials, derive_seed(e.seed, i));
    csv += fmt_real(e.bers[i]) + "," + fmt_real(est.accuracy) + "," + fmt_real(est.half_width) +
           "," + fmt_real(campaign.clean_accuracy()) + "\n";
    std::printf("ber %-8s accuracy %s +/- %s\n", fmt_real(e.bers[i]).c_str(),
                fmt_real(est.accuracy).c_str(), fmt_real(est.half_width).c_str());
  }
  const auto path = out_path(e, "sweep.csv");
  write_file(path, csv);
  std::printf("wrote %s\n", path.c_str());
  return 0;
}

int cmd_vf(Experiment& e) {
  if (e.bers.empty()) e.bers = {1e-8};
  const Granularity g = parse_granularity(e.granularity);
  if (e.patch_mode != "pixels" && e.patch_mode != "embedding")
    throw ConfigError("--patch-mode must be pixels or embedding");
  const PatchMode pm = e.patch_mode == "pixels" ? PatchMode::kPixels : PatchMode::kEmbedding;
  Workspace w = load_workspace(e);
  const std::string hash = config_hash(e.canonical("vf").dump());
  ExposureOptions exposure;
  exposure.pixels = g == Granularity::kPatch && pm == PatchMode::kPixels;
  Campaign campaign(w.model, w.data.eval, exposure);

  for (std::size_t i = 0; i < e.bers.size(); ++i) {
    const double ber = e.bers[i];
    const std::uint64_t seed = derive_seed(e.seed, i);
    VulnerabilityReport r;
    switch (g) {
      case Granularity::kModel: r = model_report(campaign, ber, e.trials, seed); break;
      case Granularity::kLayer: r = layer_sweep(campaign, ber, e.trials, seed); break;
      case Granularity::kModule: r = module_sweep(campaign, ber, e.trials, seed); break;
      case Granularity::kPatch: r = patch_sweep(campaign, ber, e.trials, seed, pm); break;
    }
    const std::string stem = "vf_" + std::string(to_string(g)) +
                             (e.bers.size() > 1 ? "_" + std::to_string(i) : "");
    write_file(out_path(e, stem + ".csv"), provenance_comment(e, hash) + report_csv(r));
    write_file(out_path(e, stem + ".json"), report_json(r, hash));
    if (g == Granularity::kPatch)
      write_file(out_path(e, stem + "_heatmap.txt"),
                 provenance_comment(e, hash) + heatmap_text(heatmap(r)));
    std::printf("ber %s: clean %s baseline %s +/- %s\n", fmt_real(ber).c_str(),
                fmt_real(r.clean_acc).c_str(), fmt_real(r.baseline_acc).c_str(),
                fmt_real(r.baseline_half_width).c_str());
    for (const auto& en : r.entries)
      std::printf("  %-12s vf %10s +/- %s\n", en.label.c_str(), fmt_real(en.vf).c_str(),
                  fmt_real(en.half_width).c_str());
  }
  return 0;
}

int cmd_profile(Experiment& e) {
  Workspace w = load_workspace(e);
  const std::string hash = config_hash(e.canonical("profile-range").dump());
  const std::size_t n = std::min(e.profile_samples, w.data.train.size());
  const RangeProfile prof =
      profile(w.model, Dataset(w.data.train.begin(), w.data.train.begin() + n), e.alpha);
  json j = json::parse(prof.to_json());
  j["provenance"] = provenance(e, hash);
  const auto path = out_path(e, "ranges.json");
  write_file(path, j.dump(2) + "\n");
  std::printf("profiled %zu sites on %zu samples, wrote %s\n", prof.entries().size(), n,
              path.c_str());
  return 0;
}

json estimate_json(const AccuracyEstimate& a) {
  return {{"accuracy", a.accuracy},
          {"half_width", a.half_width},
          {"overhead", a.meter.overhead_fraction()},
          {"guard_comparisons", a.meter.guard_comparisons}};
}

int cmd_protect(Experiment& e) {
  if (e.bers.empty()) e.bers = {1e-8};
  Workspace w = load_workspace(e);
  const std::string hash = config_hash(e.canonical("protect").dump());
  Campaign campaign(w.model, w.data.eval);
  ProtectOptions opt;
  opt.target_acc_loss = e.target;
  opt.overhead_limit = e.limit;
  opt.alpha = e.alpha;
  opt.profile_samples = e.profile_samples;
  opt.empirical_update = e.empirical_update;
  if (!e.plan_path.empty()) opt.plan = AbftPlan::load(e.plan_path);
  if (!e.ranges_path.empty()) opt.ranges = RangeProfile::load(e.ranges_path);

  std::string csv = provenance_comment(e, hash) + "ber,arm,accuracy,half_width,overhead\n";
  json runs = json::array();
  for (std::size_t i = 0; i < e.bers.size(); ++i) {
    const double ber = e.bers[i];
    const auto cmp = compare_protection(campaign, w.data.train, ber, e.trials,
                                        derive_seed(e.seed, i), opt);
    const std::string suffix = e.bers.size() > 1 ? "_" + std::to_string(i) : "";
    write_file(out_path(e, "plan" + suffix + ".json"), cmp.plan.to_json());
    json rj = json::parse(cmp.ranges.to_json());
    rj["provenance"] = provenance(e, hash);
    write_file(out_path(e, "ranges" + suffix + ".json"), rj.dump(2) + "\n");

    std::printf("ber %s  clean %s\n", fmt_real(ber).c_str(),
                fmt_real(campaign.clean_accuracy()).c_str());
    std::printf("  %-18s %10s %10s %10s\n", "arm", "accuracy", "+/-", "overhead");
    const std::pair<const char*, const AccuracyEstimate*> arms[] = {
        {"none", &cmp.none}, {"fixed-abft", &cmp.fixed}, {"adaptive+range", &cmp.adaptive}};
    json arm_json;
    for (const auto& [name, est] : arms) {
      csv += fmt_real(ber) + "," + name + "," + fmt_real(est->accuracy) + "," +
             fmt_real(est->half_width) + "," + fmt_real(est->meter.overhead_fraction()) + "\n";
      std::printf("  %-18s %10s %10s %10s\n", name, fmt_real(est->accuracy).c_str(),
                  fmt_real(est->half_width).c_str(),
                  fmt_real(est->meter.overhead_fraction()).c_str());
      arm_json[name] = estimate_json(*est);
    }
    std::printf("  plan: %zu sites, %s, estimated overhead %s\n", cmp.plan.splits.size(),
                std::string(to_string(cmp.plan.mode)).c_str(),
                fmt_real(cmp.plan.estimated_overhead).c_str());
    runs.push_back({{"ber", ber},
                    {"clean_acc", campaign.clean_accuracy()},
                    {"layer_vf", cmp.table.vf},
                    {"plan", json::parse(cmp.plan.to_json())},
                    {"arms", arm_json}});
  }
  write_file(out_path(e, "protect.csv"), csv);
  json j = provenance(e, hash);
  j["runs"] = runs;
  write_file(out_path(e, "protect.json"), j.dump(2) + "\n");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"vitrel: reliability lab for quantized vision transformers"};
  app.set_version_flag("--version", tool_version());
  app.require_subcommand(1);
  Experiment e;
  bool list_presets = false;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", e.config_path, "Experiment config (JSON)");
    sub->add_option("--preset", e.preset_name, "Model preset");
    sub->add_option("--model-config", e.model_config, "ModelConfig JSON file");
    sub->add_option("--archive", e.archive, "Trained weight archive stem");
    sub->add_option("--data", e.data_dir, "Image directory with train/ and eval/");
    sub->add_option("--eval-per-class", e.synthetic.per_class_eval, "Synthetic eval images per class");
    sub->add_option("--ber", e.bers, "Bit error rate(s)")->delimiter(',');
    sub->add_option("--trials", e.trials, "Monte-Carlo trials");
    sub->add_option("--seed", e.seed, "Master seed");
    sub->add_option("-o,--out", e.out, "Output directory");
  };
  auto* build = app.add_subcommand("build-model", "Build a model, fit its head, save weights");
  common(build);
  build->add_flag("--list-presets", list_presets, "Print the preset table and exit");
  auto* sweep = app.add_subcommand("sweep", "Accuracy versus BER");
  common(sweep);
  auto* vf = app.add_subcommand("vf", "Vulnerability factors");
  common(vf);
  vf->add_option("-g,--granularity", e.granularity, "model | layer | module | patch");
  vf->add_option("--patch-mode", e.patch_mode, "pixels | embedding");
  auto* prof = app.add_subcommand("profile-range", "Profile NLF output ranges");
  common(prof);
  prof->add_option("--alpha", e.alpha, "Range margin");
  prof->add_option("--samples", e.profile_samples, "Profiling samples");
  auto* protect = app.add_subcommand("protect", "Plan ABFT, profile ranges, validate");
  common(protect);
  protect->add_option("--alpha", e.alpha, "Range margin");
  protect->add_option("--target", e.target, "Target accuracy loss");
  protect->add_option("--limit", e.limit, "Overhead limit");
  protect->add_option("--samples", e.profile_samples, "Profiling samples");
  protect->add_flag("--empirical-update", e.empirical_update,
                    "Re-measure layer VFs by injection instead of the analytic update");
  protect->add_option("--plan", e.plan_path, "Validate this plan instead of planning");
  protect->add_option("--ranges", e.ranges_path, "Use this range profile instead of profiling");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int rc = app.exit(err);
    return rc == 0 ? 0 : kExitConfig;
  }

  try {
    CLI::App* sub = app.get_subcommands().front();
    apply_config_file(e, *sub);
    resolve_model(e);
    if (sub == build) return cmd_build_model(e, list_presets);
    if (sub == sweep) return cmd_sweep(e);
    if (sub == vf) return cmd_vf(e);
    if (sub == prof) return cmd_profile(e);
    if (sub == protect) return cmd_protect(e);
  } catch (const std::invalid_argument& ex) {  // ConfigError, ShapeError
    std::cerr << "vitrel: " << ex.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& ex) {
    std::cerr << "vitrel: " << ex.what() << "\n";
    return kExitRuntime;
  }
  return 0;
}
