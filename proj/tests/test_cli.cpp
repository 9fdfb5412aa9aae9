#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include <json.hpp>

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("calcli_test_" + std::to_string(std::random_device{}()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

int run(const std::string& args) {
  std::string cmd = std::string(CALCLI_PATH) + " " + args + " >/dev/null 2>&1";
  int status = std::system(cmd.c_str());
#ifdef _WIN32
  return status;
#else
  return WEXITSTATUS(status);
#endif
}

std::string slurp(const fs::path& p) {
  std::ostringstream ss;
  ss << std::ifstream(p).rdbuf();
  return ss.str();
}

json load_json(const fs::path& p) { return json::parse(slurp(p)); }

// Scenario small enough for quick CLI runs: camera + tracker closures only.
void write_scenario(const fs::path& file, std::uint64_t seed) {
  json s;
  s["robot"] = "desk_rig";
  s["mask"] = {"l2.a", "l2.d", "l4.d", "head.*"};
  s["perturbation"] = {{"length", 0.004}, {"angle", 0.01}};
  s["counts"] = {{"self_observation", 60}, {"external", 60}};
  s["sigmas"] = {{"self_observation", 0.5}, {"external", 0.001}};
  s["seed"] = seed;
  s["self_observation"] = {{"cameras", {"head_cam"}},
                           {"markers", {"tip_l", "marker_r"}}};
  s["external"] = {{"point", "tip_l"}, {"devices", {"tracker"}}};
  std::ofstream(file) << s.dump(2);
}

}  // namespace

TEST_CASE("calcli exits nonzero without a subcommand or with bad flags") {
  CHECK(run("") != 0);
  CHECK(run("frobnicate") != 0);
  CHECK(run("simulate") != 0);                         // missing --config
  CHECK(run("simulate --config /no/such.json") != 0);  // unreadable scenario
}

TEST_CASE("simulate is deterministic and the full pipeline round-trips") {
  TempDir tmp;
  fs::path scen = tmp.path / "scenario.json";
  write_scenario(scen, 5);

  REQUIRE(run("simulate --config " + scen.string() + " --out " +
              (tmp.path / "a").string()) == 0);
  REQUIRE(run("simulate --config " + scen.string() + " --out " +
              (tmp.path / "b").string()) == 0);

  for (const char* f :
       {"robot_nominal.json", "robot_true.json", "dataset.jsonl", "provenance.json"}) {
    CAPTURE(f);
    REQUIRE(fs::exists(tmp.path / "a" / f));
    CHECK(slurp(tmp.path / "a" / f) == slurp(tmp.path / "b" / f));
  }
  json prov = load_json(tmp.path / "a" / "provenance.json");
  CHECK(prov["shortfall"].empty());

  // calibrate on the training part, evaluate on the held-out part
  std::string nominal = (tmp.path / "a" / "robot_nominal.json").string();
  std::string truth = (tmp.path / "a" / "robot_true.json").string();
  std::string dataset = (tmp.path / "a" / "dataset.jsonl").string();
  std::string fit_dir = (tmp.path / "fit").string();
  REQUIRE(run("calibrate --robot " + nominal + " --dataset " + dataset +
              " --split 0.8 --seed 2 --out " + fit_dir) == 0);
  REQUIRE(fs::exists(fs::path(fit_dir) / "report.json"));
  REQUIRE(fs::exists(fs::path(fit_dir) / "robot_calibrated.json"));

  json report = load_json(fs::path(fit_dir) / "report.json");
  CHECK(report["final_cost"].get<double>() < report["initial_cost"].get<double>());
  CHECK(report["observability"]["O1"].get<double>() > 0.0);
  CHECK(report["parameters"].size() > 0);

  std::string eval_dir = (tmp.path / "eval").string();
  REQUIRE(run("evaluate --robot " + nominal + " --dataset " + dataset +
              " --calibrated " + (fs::path(fit_dir) / "robot_calibrated.json").string() +
              " --truth " + truth + " --split 0.8 --seed 2 --out " + eval_dir) == 0);
  json eval = load_json(fs::path(eval_dir) / "evaluation.json");

  // calibration must generalize: held-out residuals shrink for every kind
  for (auto& [kind, nominal_rms] : eval["test"]["nominal_rms"].items()) {
    double cal = eval["test"]["calibrated_rms"][kind].get<double>();
    CHECK(cal < nominal_rms.get<double>());
  }
  double err_nom = eval["parameter_error"]["nominal"]["rms"].get<double>();
  double err_cal = eval["parameter_error"]["calibrated"]["rms"].get<double>();
  CHECK(err_cal < err_nom);
}

TEST_CASE("observability subcommand writes the index report") {
  TempDir tmp;
  fs::path scen = tmp.path / "scenario.json";
  write_scenario(scen, 9);
  REQUIRE(run("simulate --config " + scen.string() + " --out " +
              (tmp.path / "sim").string()) == 0);

  std::string robot = (tmp.path / "sim" / "robot_nominal.json").string();
  std::string dataset = (tmp.path / "sim" / "dataset.jsonl").string();
  REQUIRE(run("observability --robot " + robot + " --dataset " + dataset + " --out " +
              (tmp.path / "obs").string()) == 0);
  json rep = load_json(tmp.path / "obs" / "observability.json");
  CHECK(rep["O1"].get<double>() > 0.0);
  CHECK(rep["O3"].get<double>() > 0.0);
  CHECK(rep["singular_values"].size() > 0);
  CHECK_FALSE(rep["degenerate"].get<bool>());

  // restricting to a single kind can only shrink the weakest direction
  REQUIRE(run("observability --robot " + robot + " --dataset " + dataset +
              " --kinds so --out " + (tmp.path / "obs_so").string()) == 0);
  json rep_so = load_json(tmp.path / "obs_so" / "observability.json");
  CHECK(rep_so["O3"].get<double>() < rep["O3"].get<double>());
}

TEST_CASE("calibrate rejects broken inputs with exit code 1") {
  TempDir tmp;
  fs::path scen = tmp.path / "scenario.json";
  write_scenario(scen, 13);
  REQUIRE(run("simulate --config " + scen.string() + " --out " +
              (tmp.path / "sim").string()) == 0);
  std::string robot = (tmp.path / "sim" / "robot_nominal.json").string();
  std::string dataset = (tmp.path / "sim" / "dataset.jsonl").string();

  CHECK(run("calibrate --robot /no/robot.json --dataset " + dataset) == 1);
  CHECK(run("calibrate --robot " + robot + " --dataset /no/data.jsonl") == 1);
  CHECK(run("calibrate --robot " + robot + " --dataset " + dataset + " --kinds xx") == 1);
  // filtering away every record present in the dataset
  CHECK(run("calibrate --robot " + robot + " --dataset " + dataset + " --kinds pl") == 1);
  // mask pattern that matches nothing
  CHECK(run("calibrate --robot " + robot + " --dataset " + dataset +
            " --mask nothing.such") == 1);
}

TEST_CASE("simulate exits 2 when targets are unreachable") {
  TempDir tmp;
  // one-link robot whose plane sits far outside the workspace
  json robot;
  robot["frames"] = {{{"id", "link1"},
                      {"parent", "root"},
                      {"type", "dh"},
                      {"a", 1.0},
                      {"limits", {-3.0, 3.0}}}};
  robot["markers"] = {
      {{"id", "tip"}, {"parent", "link1"}, {"position", {0.0, 0.0, 0.0}}}};
  robot["planes"] = {{{"id", "ceiling"},
                      {"azimuth", 0.0},
                      {"elevation", M_PI_2},
                      {"offset", 7.0}}};
  std::ofstream(tmp.path / "robot.json") << robot.dump(2);

  json s;
  s["robot"] = "robot.json";
  s["counts"] = {{"plane_contact", 3}};
  s["plane_contact"] = {{"point", "tip"}, {"planes", {"ceiling"}}};
  std::ofstream(tmp.path / "scen.json") << s.dump(2);

  CHECK(run("simulate --config " + (tmp.path / "scen.json").string() + " --out " +
            (tmp.path / "out").string()) == 2);
  json prov = load_json(tmp.path / "out" / "provenance.json");
  CHECK(prov["shortfall"]["plane_contact"].get<int>() == 3);
}

TEST_CASE("campaign ranks kind combinations and writes CSV plus JSON") {
  TempDir tmp;
  fs::path scen = tmp.path / "scenario.json";
  write_scenario(scen, 17);
  std::string out = (tmp.path / "camp").string();
  REQUIRE(run("campaign --config " + scen.string() + " --out " + out) == 0);

  REQUIRE(fs::exists(fs::path(out) / "campaign.csv"));
  json camp = load_json(fs::path(out) / "campaign.json");
  // two kinds: the sets are {so}, {ext}, {so,ext}
  CHECK(camp["sets"].size() == 3);
  CHECK(camp["matched_count_per_set"].get<int>() == 60);
  bool has_multi = false;
  for (const auto& row : camp["sets"]) {
    CHECK(row["O1"].get<double>() >= 0.0);
    // the camera mount is masked, so any set containing observations sees it
    if (row["multi_kind"].get<bool>()) {
      has_multi = true;
      CHECK(row["O1"].get<double>() > 0.0);
    }
  }
  CHECK(has_multi);
  std::string csv = slurp(fs::path(out) / "campaign.csv");
  CHECK(csv.find("so+ext") != std::string::npos);
}
