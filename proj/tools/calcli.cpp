// calcli: simulate, calibrate, analyze and evaluate kinematic self-calibration
// experiments on datasets of chain-closure measurements.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>

#include <CLI11.hpp>
#include <json.hpp>

#include "selfcal/estimator.hpp"
#include "selfcal/measurements.hpp"
#include "selfcal/observability.hpp"
#include "selfcal/robot_io.hpp"
#include "selfcal/simlab.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace selfcal;

namespace {

int verbosity() {
  const char* v = std::getenv("CALCLI_VERBOSE");
  return v ? std::atoi(v) : 0;
}

void log_info(const std::string& msg) {
  if (verbosity() > 0) std::cerr << "[calcli] " << msg << "\n";
}

std::vector<MeasurementKind> parse_kinds(const std::string& codes) {
  static const std::map<std::string, MeasurementKind> lookup = {
      {"sc", MeasurementKind::SelfContact},
      {"pl", MeasurementKind::PlaneContact},
      {"so", MeasurementKind::SelfObservation},
      {"ext", MeasurementKind::External}};
  std::vector<MeasurementKind> kinds;
  std::stringstream ss(codes);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    auto it = lookup.find(tok);
    if (it == lookup.end()) throw CLI::ValidationError("--kinds", "unknown kind code '" + tok + "'");
    kinds.push_back(it->second);
  }
  if (kinds.empty()) throw CLI::ValidationError("--kinds", "kind filter must be non-empty");
  return kinds;
}

std::string kind_code(MeasurementKind k) {
  switch (k) {
    case MeasurementKind::SelfContact: return "sc";
    case MeasurementKind::PlaneContact: return "pl";
    case MeasurementKind::SelfObservation: return "so";
    case MeasurementKind::External: return "ext";
  }
  return "?";
}

void apply_robust(const std::string& arg, SolveOptions& opts) {
  if (arg.empty() || arg == "none") return;
  if (arg.rfind("huber:", 0) == 0) {
    opts.robust_loss = RobustLoss::Huber;
    opts.huber_delta = std::stod(arg.substr(6));
    if (!(opts.huber_delta > 0.0))
      throw CLI::ValidationError("--robust", "huber delta must be positive");
    return;
  }
  throw CLI::ValidationError("--robust", "expected 'none' or 'huber:DELTA'");
}

void write_text(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path().empty() ? "." : path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
}

// RMS difference of the masked parameters of two models, per field class.
json parameter_error(const RobotModel& estimate, const RobotModel& truth) {
  ParameterVector pe = pack(estimate), pt = pack(truth);
  auto layout = parameter_layout(estimate);
  double sum_len = 0, sum_ang = 0, sum_all = 0;
  int n_len = 0, n_ang = 0;
  for (int i = 0; i < pe.size(); ++i) {
    double d = pe.values(i) * pe.scales(i) - pt.values(i) * pt.scales(i);
    sum_all += d * d;
    if (layout[pe.layout_indices[i]].field_class == FieldClass::Length) {
      sum_len += d * d;
      ++n_len;
    } else {
      sum_ang += d * d;
      ++n_ang;
    }
  }
  json j;
  j["rms"] = pe.size() ? std::sqrt(sum_all / pe.size()) : 0.0;
  if (n_len) j["rms_length_m"] = std::sqrt(sum_len / n_len);
  if (n_ang) j["rms_angle_rad"] = std::sqrt(sum_ang / n_ang);
  return j;
}

json rms_to_json(const std::map<MeasurementKind, double>& rms) {
  json j = json::object();
  for (const auto& [k, v] : rms) j[kind_name(k)] = v;
  return j;
}

json observability_to_json(const ObservabilityReport& rep,
                           const std::vector<std::string>& names) {
  json j;
  j["singular_values"] = std::vector<double>(
      rep.singular_values.data(), rep.singular_values.data() + rep.singular_values.size());
  j["O1"] = rep.O1;
  j["O2"] = rep.O2;
  j["O3"] = rep.O3;
  j["O4"] = rep.O4;
  j["measurement_rows"] = rep.measurement_rows;
  j["rank_tol"] = rep.rank_tol;
  j["degenerate"] = rep.degenerate;
  j["unidentifiable"] = json::array();
  for (const auto& dir : rep.unidentifiable) {
    json jd;
    jd["singular_value"] = dir.singular_value;
    jd["parameters"] = json::array();
    for (int idx : dir.parameter_indices)
      jd["parameters"].push_back(idx < static_cast<int>(names.size()) ? names[idx]
                                                                      : std::to_string(idx));
    j["unidentifiable"].push_back(jd);
  }
  return j;
}

struct CalibrateArgs {
  std::string robot_path, dataset_path, out_dir = ".";
  std::string kinds = "sc,pl,so,ext";
  std::vector<std::string> mask_patterns;
  double split_fraction = 1.0;  // 1.0 = no split, train on everything
  std::uint64_t seed = 0;
  std::string split_mode = "random";
  std::string jacobian = "forward";
  std::string robust = "none";
  int max_iterations = 200;
};

SolveOptions solve_options_from(const CalibrateArgs& a) {
  SolveOptions opts;
  opts.max_iterations = a.max_iterations;
  opts.jacobian_mode =
      a.jacobian == "central" ? JacobianMode::CentralDiff : JacobianMode::ForwardDiff;
  apply_robust(a.robust, opts);
  return opts;
}

std::pair<Dataset, Dataset> make_split(const Dataset& ds, const RobotModel& model,
                                       const CalibrateArgs& a) {
  if (a.split_fraction >= 1.0) return {ds, Dataset{{}, ds.sigmas, ds.provenance}};
  if (a.split_mode == "workspace") return split_workspace(ds, model, 0);
  return split(ds, a.split_fraction, a.seed);
}

int run_simulate(const std::string& config_path, const std::string& out_dir) {
  ScenarioSpec spec = load_scenario(config_path);
  fs::path base = fs::path(config_path).parent_path();
  SynthesisResult result = synthesize(spec, base);

  fs::create_directories(out_dir);
  save_robot(result.nominal, fs::path(out_dir) / "robot_nominal.json");
  save_robot(result.ground_truth, fs::path(out_dir) / "robot_true.json");
  save_dataset(result.dataset, fs::path(out_dir) / "dataset.jsonl");

  json prov;
  prov["scenario_hash"] = scenario_hash(spec);
  prov["seed"] = spec.seed;
  prov["shortfall"] = json::object();
  for (const auto& [k, missing] : result.shortfall)
    prov["shortfall"][kind_name(k)] = missing;
  write_text(fs::path(out_dir) / "provenance.json", prov.dump(2) + "\n");

  if (!result.shortfall.empty()) {
    std::cerr << "warning: dataset incomplete (contact solving exhausted)\n";
    return 2;
  }
  log_info("simulate: wrote " + out_dir);
  return 0;
}

int run_calibrate(const CalibrateArgs& a) {
  RobotModel robot = load_robot(a.robot_path);
  for (const auto& p : a.mask_patterns) set_mask(robot, p);
  validate_model(robot);

  Dataset ds = load_dataset(a.dataset_path);
  auto errors = validate_dataset(ds, robot);
  if (!errors.empty()) {
    std::cerr << "dataset failed validation:\n";
    for (const auto& e : errors) std::cerr << "  - " << e << "\n";
    return 1;
  }
  ds = filter_kinds(ds, parse_kinds(a.kinds));
  if (ds.measurements.empty()) {
    std::cerr << "error: no measurements left after kind filter '" << a.kinds << "'\n";
    return 1;
  }
  auto [train, test] = make_split(ds, robot, a);
  if (train.measurements.empty()) {
    std::cerr << "error: empty training split\n";
    return 1;
  }

  SolveOptions opts = solve_options_from(a);
  ParameterVector x0 = pack(robot);
  if (x0.size() == 0) {
    std::cerr << "error: calibration mask selects no parameters\n";
    return 1;
  }
  CalibrationResult result = lm_solve(robot, train, x0, opts);
  RobotModel calibrated = unpack(robot, result.params_opt);

  // attach observability of the converged estimate
  ResidualSystem sys = build_system(robot, result.params_opt, train, opts.jacobian_mode);
  ObservabilityReport rep =
      observability_indices(sys.J, static_cast<int>(train.measurements.size()));

  json report = json::parse(result_to_json(result, robot, x0));
  report["observability"] = observability_to_json(rep, result.params_opt.names);
  report["train_size"] = train.size();
  report["test_size"] = test.size();

  fs::create_directories(a.out_dir);
  write_text(fs::path(a.out_dir) / "report.json", report.dump(2) + "\n");
  save_robot(calibrated, fs::path(a.out_dir) / "robot_calibrated.json");
  log_info("calibrate: final cost " + std::to_string(result.final_cost));
  return 0;
}

int run_observability(const CalibrateArgs& a) {
  RobotModel robot = load_robot(a.robot_path);
  for (const auto& p : a.mask_patterns) set_mask(robot, p);
  validate_model(robot);
  Dataset ds = filter_kinds(load_dataset(a.dataset_path), parse_kinds(a.kinds));
  if (ds.measurements.empty()) {
    std::cerr << "error: no measurements left after kind filter\n";
    return 1;
  }
  auto errors = validate_dataset(ds, robot);
  if (!errors.empty()) {
    for (const auto& e : errors) std::cerr << "  - " << e << "\n";
    return 1;
  }
  ParameterVector x = pack(robot);
  if (x.size() == 0) {
    std::cerr << "error: calibration mask selects no parameters\n";
    return 1;
  }
  ResidualSystem sys = build_system(robot, x, ds, solve_options_from(a).jacobian_mode);
  ObservabilityReport rep =
      observability_indices(sys.J, static_cast<int>(ds.measurements.size()));
  fs::create_directories(a.out_dir);
  write_text(fs::path(a.out_dir) / "observability.json",
             observability_to_json(rep, x.names).dump(2) + "\n");
  return 0;
}

int run_evaluate(const CalibrateArgs& a, const std::string& calibrated_path,
                 const std::string& truth_path) {
  RobotModel nominal = load_robot(a.robot_path);
  RobotModel calibrated = load_robot(calibrated_path);
  Dataset ds = filter_kinds(load_dataset(a.dataset_path), parse_kinds(a.kinds));
  auto errors = validate_dataset(ds, nominal);
  if (!errors.empty()) {
    for (const auto& e : errors) std::cerr << "  - " << e << "\n";
    return 1;
  }
  auto [train, test] = make_split(ds, nominal, a);
  if (test.measurements.empty()) {
    std::cerr << "error: held-out split is empty (use --split < 1)\n";
    return 1;
  }

  json j;
  j["split_mode"] = a.split_mode;
  j["split_fraction"] = a.split_fraction;
  j["train"] = {{"nominal_rms", rms_to_json(residual_rms(nominal, train))},
                {"calibrated_rms", rms_to_json(residual_rms(calibrated, train))},
                {"size", train.size()}};
  j["test"] = {{"nominal_rms", rms_to_json(residual_rms(nominal, test))},
               {"calibrated_rms", rms_to_json(residual_rms(calibrated, test))},
               {"size", test.size()}};
  if (!truth_path.empty()) {
    RobotModel truth = load_robot(truth_path);
    j["parameter_error"] = {{"nominal", parameter_error(nominal, truth)},
                            {"calibrated", parameter_error(calibrated, truth)}};
  } else {
    j["parameter_error"] = nullptr;  // unknown ground truth, not zero
  }
  fs::create_directories(a.out_dir);
  write_text(fs::path(a.out_dir) / "evaluation.json", j.dump(2) + "\n");
  return 0;
}

std::vector<std::vector<MeasurementKind>> kind_sets(
    const std::vector<MeasurementKind>& kinds) {
  std::vector<std::vector<MeasurementKind>> sets;
  for (auto k : kinds) sets.push_back({k});
  for (size_t i = 0; i < kinds.size(); ++i)
    for (size_t j = i + 1; j < kinds.size(); ++j) sets.push_back({kinds[i], kinds[j]});
  if (kinds.size() > 2) sets.push_back(kinds);
  return sets;
}

int run_campaign(const std::string& config_path, const std::string& out_dir,
                 double split_fraction, const std::string& jacobian) {
  ScenarioSpec spec = load_scenario(config_path);
  fs::path base = fs::path(config_path).parent_path();
  SynthesisResult sim = synthesize(spec, base);

  std::vector<MeasurementKind> kinds;
  for (const auto& [k, c] : spec.counts)
    if (c > 0) kinds.push_back(k);
  if (kinds.size() < 2) {
    std::cerr << "error: campaign needs at least two measurement kinds in the scenario\n";
    return 1;
  }
  int total = std::numeric_limits<int>::max();
  for (auto k : kinds) {
    int have = 0;
    for (const auto& m : sim.dataset.measurements)
      if (m.kind == k) ++have;
    total = std::min(total, have);
  }

  fs::create_directories(out_dir);
  std::vector<CampaignRow> rows;
  json per_set = json::array();
  for (const auto& set : kind_sets(kinds)) {
    std::map<MeasurementKind, int> counts;
    int per = total / static_cast<int>(set.size());
    int rem = total % static_cast<int>(set.size());
    for (size_t i = 0; i < set.size(); ++i)
      counts[set[i]] = per + (static_cast<int>(i) < rem ? 1 : 0);
    Dataset ds = subsample(sim.dataset, counts);

    std::string label;
    for (auto k : set) label += (label.empty() ? "" : "+") + kind_code(k);

    CalibrateArgs a;
    a.split_fraction = split_fraction;
    a.seed = spec.seed;
    a.jacobian = jacobian;
    SolveOptions opts = solve_options_from(a);
    auto [train, test] = split_fraction < 1.0
                             ? split(ds, split_fraction, spec.seed)
                             : std::pair<Dataset, Dataset>{ds, Dataset{{}, ds.sigmas, {}}};

    ParameterVector x0 = pack(sim.nominal);
    CalibrationResult result = lm_solve(sim.nominal, train, x0, opts);
    RobotModel calibrated = unpack(sim.nominal, result.params_opt);

    ResidualSystem sys = build_system(sim.nominal, result.params_opt, train, opts.jacobian_mode);
    ObservabilityReport rep =
        observability_indices(sys.J, static_cast<int>(train.measurements.size()));
    rows.push_back({label, set.size() > 1, rep});

    json js;
    js["kinds"] = label;
    js["multi_kind"] = set.size() > 1;
    js["train_size"] = train.size();
    js["final_cost"] = result.final_cost;
    js["O1"] = rep.O1;
    js["O3"] = rep.O3;
    js["parameter_error"] = parameter_error(calibrated, sim.ground_truth);
    if (!test.measurements.empty())
      js["test_rms"] = rms_to_json(residual_rms(calibrated, test));
    per_set.push_back(js);
    log_info("campaign set " + label + " done");
  }

  CampaignRanking ranking = compare_campaigns(rows);
  write_text(fs::path(out_dir) / "campaign.csv", ranking_to_csv(ranking));
  json j;
  j["multi_dominates_single"] = ranking.multi_dominates_single;
  j["sets"] = per_set;
  j["matched_count_per_set"] = total;
  write_text(fs::path(out_dir) / "campaign.json", j.dump(2) + "\n");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Kinematic self-calibration toolbox (self-contact, plane contact, "
               "self-observation, external metrology)"};
  app.require_subcommand(1);

  std::string config_path, out_dir = ".";
  CalibrateArgs cal;
  std::string calibrated_path, truth_path;

  auto* sim = app.add_subcommand("simulate", "Synthesize a ground-truth experiment");
  sim->add_option("--config", config_path, "Scenario JSON")->required();
  sim->add_option("--out", out_dir, "Output directory");

  auto add_common = [&](CLI::App* cmd, bool need_dataset = true) {
    cmd->add_option("--robot", cal.robot_path, "Robot description JSON")->required();
    if (need_dataset)
      cmd->add_option("--dataset", cal.dataset_path, "Dataset .jsonl")->required();
    cmd->add_option("--kinds", cal.kinds, "Closure kinds, e.g. sc,so");
    cmd->add_option("--mask", cal.mask_patterns, "Extra mask patterns");
    cmd->add_option("--split", cal.split_fraction, "Train fraction in (0,1], 1 = no split");
    cmd->add_option("--seed", cal.seed, "Split seed");
    cmd->add_option("--split-mode", cal.split_mode, "random|workspace");
    cmd->add_option("--jacobian", cal.jacobian, "forward|central");
    cmd->add_option("--robust", cal.robust, "none|huber:DELTA");
    cmd->add_option("--max-iterations", cal.max_iterations, "LM iteration cap");
    cmd->add_option("--out", cal.out_dir, "Output directory");
  };

  auto* calib = app.add_subcommand("calibrate", "Fit masked parameters to a dataset");
  add_common(calib);
  auto* obs = app.add_subcommand("observability", "Analyze the identification Jacobian");
  add_common(obs);
  auto* eval = app.add_subcommand("evaluate", "Train/test evaluation of a calibration");
  add_common(eval);
  eval->add_option("--calibrated", calibrated_path, "Calibrated robot JSON")->required();
  eval->add_option("--truth", truth_path, "Ground-truth robot JSON (optional)");

  double campaign_split = 0.8;
  std::string campaign_jacobian = "forward";
  auto* camp = app.add_subcommand("campaign", "Compare closure-kind combinations");
  camp->add_option("--config", config_path, "Scenario JSON")->required();
  camp->add_option("--out", out_dir, "Output directory");
  camp->add_option("--split", campaign_split, "Train fraction per set");
  camp->add_option("--jacobian", campaign_jacobian, "forward|central");

  CLI11_PARSE(app, argc, argv);

  try {
    if (sim->parsed()) return run_simulate(config_path, out_dir);
    if (calib->parsed()) return run_calibrate(cal);
    if (obs->parsed()) return run_observability(cal);
    if (eval->parsed()) return run_evaluate(cal, calibrated_path, truth_path);
    if (camp->parsed())
      return run_campaign(config_path, out_dir, campaign_split, campaign_jacobian);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
