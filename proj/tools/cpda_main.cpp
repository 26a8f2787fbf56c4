// cpda: constraint-preserving ensemble data assimilation twin experiments.
//
// Subcommands:
//   run      execute an experiment from a config file, write CSV + JSON records
//   truth    generate and cache the truth trajectory and observations
//   compare  tabulate final RMSE/CRMSE across result JSON files
//   validate run model self-checks (Jacobians, invariant drift, conservation)

#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <string>
#include <vector>

#include "cpda/harness.hpp"

namespace fs = std::filesystem;
using namespace cpda;

namespace {

Json load_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path, "cannot open file");
  Json j;
  try {
    in >> j;
  } catch (const Json::exception& e) {
    throw ConfigError(path, e.what());
  }
  return j;
}

void write_file(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path().empty() ? "." : path.parent_path());
  std::ofstream out(path);
  if (!out) throw ConfigError(path.string(), "cannot open for writing");
  out << text;
}

struct CliOverrides {
  std::int64_t seed_override = -1;
  int cycles = 0;
  double grid_scale = 1.0;
};

ExperimentConfig load_config(const std::string& path, const CliOverrides& ov) {
  ExperimentConfig cfg = parse_config(load_json(path));
  if (ov.seed_override >= 0) {
    const auto base = static_cast<std::uint64_t>(ov.seed_override);
    cfg.seeds.truth = base + 1;
    cfg.seeds.obs_noise = base + 2;
    cfg.seeds.ensemble_init = base + 3;
    cfg.seeds.flow = base + 4;
  }
  if (ov.cycles > 0) {
    cfg.cycles = ov.cycles;
    if (cfg.spinup >= cfg.cycles) cfg.spinup = std::max(0, cfg.cycles / 4);
  }
  if (ov.grid_scale != 1.0) {
    if (cfg.model.id != "ns2d") throw ConfigError("--grid-scale", "only meaningful for ns2d");
    const int nx = detail::get_or(cfg.model.params, "nx", 64, "model.");
    const int ny = detail::get_or(cfg.model.params, "ny", 129, "model.");
    cfg.model.params["nx"] = std::max(8, static_cast<int>(std::lround(nx / ov.grid_scale)));
    cfg.model.params["ny"] =
        std::max(9, static_cast<int>(std::lround((ny - 1) / ov.grid_scale)) + 1);
  }
  return cfg;
}

int cmd_run(const std::string& config_path, const std::string& out_dir, const CliOverrides& ov) {
  ExperimentConfig cfg = load_config(config_path, ov);
  if (!out_dir.empty()) cfg.output_dir = out_dir;
  std::cout << "running " << cfg.tag << " (" << cfg.model.id << ", "
            << to_string(cfg.filter.variant) << ", " << cfg.cycles << " cycles)\n";
  const RunRecord rec = run_twin_experiment(cfg);
  const fs::path base = fs::path(cfg.output_dir) / cfg.tag;
  write_file(base.string() + ".csv", record_csv(rec));
  write_file(base.string() + ".json", record_json(cfg, rec).dump(2) + "\n");
  if (rec.truncated) {
    std::cerr << "analysis failed: " << rec.failure << "\n";
    Json err{{"error", "analysis-failure"}, {"detail", rec.failure}};
    std::cerr << err.dump() << "\n";
    return 2;
  }
  if (!rec.cycles.empty()) {
    std::cout << std::setprecision(6) << "final RMSE " << rec.cycles.back().rmse_cum
              << "  CRMSE " << rec.cycles.back().crmse_cum << "\n";
  }
  std::cout << "wrote " << base.string() << ".{csv,json}\n";
  return 0;
}

int cmd_truth(const std::string& config_path, const std::string& out_dir,
              const CliOverrides& ov) {
  ExperimentConfig cfg = load_config(config_path, ov);
  if (!out_dir.empty()) cfg.output_dir = out_dir;
  const ModelInterface mi = build_model_interface(cfg);
  const TruthObs data = generate_truth_and_obs(mi, cfg);
  std::ostringstream truth_csv, obs_csv;
  truth_csv.precision(17);
  obs_csv.precision(17);
  for (int k = 0; k < data.truth.cols(); ++k) {
    for (int i = 0; i < data.truth.rows(); ++i)
      truth_csv << (i ? "," : "") << data.truth(i, k);
    truth_csv << '\n';
  }
  for (int k = 0; k < data.observations.cols(); ++k) {
    for (int i = 0; i < data.observations.rows(); ++i)
      obs_csv << (i ? "," : "") << data.observations(i, k);
    obs_csv << '\n';
  }
  const fs::path base = fs::path(cfg.output_dir) / cfg.tag;
  write_file(base.string() + "_truth.csv", truth_csv.str());
  write_file(base.string() + "_obs.csv", obs_csv.str());
  std::cout << "wrote " << base.string() << "_{truth,obs}.csv\n";
  return 0;
}

int cmd_compare(const std::vector<std::string>& files) {
  std::cout << std::left << std::setw(28) << "tag" << std::setw(10) << "variant" << std::setw(8)
            << "cycles" << std::setw(14) << "rmse" << std::setw(14) << "crmse"
            << "status\n";
  for (const std::string& f : files) {
    const Json j = load_json(f);
    const std::string tag = j.at("config").at("output").value("tag", f);
    const std::string variant = j.at("config").at("filter").value("variant", "?");
    const auto& cycles = j.at("cycles");
    std::ostringstream row;
    row << std::left << std::setw(28) << tag << std::setw(10) << variant << std::setw(8)
        << cycles.size();
    if (j.contains("final")) {
      row << std::setw(14) << std::setprecision(5) << j.at("final").at("rmse").get<double>()
          << std::setw(14) << std::setprecision(5) << j.at("final").at("crmse").get<double>();
    } else {
      row << std::setw(14) << "-" << std::setw(14) << "-";
    }
    row << (j.value("truncated", false) ? "truncated" : "ok");
    std::cout << row.str() << "\n";
  }
  return 0;
}

struct Check {
  std::string name;
  double value;
  double bound;
  bool pass() const { return value < bound; }
};

void report(std::vector<Check>& checks, bool& ok) {
  for (const Check& c : checks) {
    std::cout << (c.pass() ? "[ ok ] " : "[FAIL] ") << std::left << std::setw(52) << c.name
              << std::scientific << std::setprecision(3) << c.value << " (< " << c.bound << ")\n";
    ok = ok && c.pass();
  }
  checks.clear();
}

int cmd_validate(const std::string& model, double grid_scale) {
  bool ok = true;
  std::vector<Check> checks;
  if (model == "pendulum" || model == "all") {
    const Eigen::VectorXd ref = pendulum::reference_state();
    const double e0 = pendulum::total_energy(ref);
    const ConstraintSystem cs = pendulum::constraints(e0);
    Eigen::VectorXd s = ref;
    for (int i = 0; i < 200; ++i) s = pendulum::pherk2_step(s, 0.01);
    checks.push_back({"pendulum constraint Jacobian FD error", jacobian_check(cs, s, 1e-6), 1e-5});
    double drift = 0.0;
    Eigen::VectorXd t = ref;
    for (int i = 0; i < 2000; ++i) {
      t = pendulum::pherk2_step(t, 0.01);
      drift = std::max(drift, cs.eval(t).lpNorm<Eigen::Infinity>());
    }
    checks.push_back({"pendulum PHERK |g| over 2000 steps", drift, 1e-6});
    report(checks, ok);
  }
  if (model == "kdv" || model == "all") {
    const kdv::Grid grid;
    const Eigen::VectorXd x0 = kdv::two_soliton(grid);
    const ConstraintSystem cs = kdv::constraints(kdv::invariants(x0, grid), grid);
    checks.push_back({"kdv constraint Jacobian FD error", jacobian_check(cs, x0, 1e-6), 1e-5});
    Eigen::VectorXd x = x0;
    const Eigen::Vector3d p0 = kdv::invariants(x0, grid);
    double drift = 0.0;
    for (int i = 0; i < 500; ++i) {
      x = kdv::implicit_midpoint_step(x, 0.01, grid);
      const Eigen::Vector3d p = kdv::invariants(x, grid);
      drift = std::max({drift, std::abs(p[0] - p0[0]) / std::abs(p0[0]),
                        std::abs(p[1] - p0[1]) / std::abs(p0[1])});
    }
    checks.push_back({"kdv midpoint mass/momentum drift (500 steps)", drift, 1e-8});
    report(checks, ok);
  }
  if (model == "ns" || model == "ns2d" || model == "all") {
    ns2d::Grid grid;
    grid.nx = std::max(8, static_cast<int>(std::lround(64 / grid_scale)));
    grid.ny = std::max(9, static_cast<int>(std::lround(128 / grid_scale)) + 1);
    const auto model_ptr = std::make_shared<const ns2d::Model>(grid);
    const Eigen::VectorXd psi = model_ptr->smooth_random_field(7, 1.0, 4);
    const Eigen::VectorXd omega = model_ptr->smooth_random_field(11, 1.0, 4);
    const Eigen::VectorXd jac = model_ptr->arakawa(psi, omega);
    checks.push_back({"ns Arakawa enstrophy sum |sum w J|", std::abs(omega.dot(jac)), 1e-9});
    checks.push_back({"ns Arakawa energy sum |sum psi J|", std::abs(psi.dot(jac)), 1e-9});
    const Eigen::VectorXd uv = model_ptr->velocities_from_psi(psi);
    checks.push_back({"ns derived-velocity divergence",
                      (model_ptr->divergence() * uv).lpNorm<Eigen::Infinity>(), 1e-10});
    const ConstraintSystem cs = ns2d::member_constraints(model_ptr, uv);
    checks.push_back({"ns constraint Jacobian FD error", jacobian_check(cs, uv, 1e-6), 1e-5});
    report(checks, ok);
  }
  std::cout << (ok ? "all checks passed\n" : "some checks FAILED\n");
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"constraint-preserving ensemble data assimilation twin experiments"};
  app.require_subcommand(1);

  std::string config_path, out_dir;
  CliOverrides ov;
  std::vector<std::string> compare_files;
  std::string validate_model = "all";
  double validate_scale = 2.0;

  auto* run = app.add_subcommand("run", "run a twin experiment from a config file");
  run->add_option("--config", config_path, "experiment config (JSON)")->required();
  run->add_option("--out", out_dir, "output directory (overrides config)");
  run->add_option("--seed-override", ov.seed_override, "replace all seeds with base+1..4");
  run->add_option("--cycles", ov.cycles, "truncate the cycle count (desk-scale runs)");
  run->add_option("--grid-scale", ov.grid_scale, "ns2d grid downscale factor");

  auto* truth = app.add_subcommand("truth", "generate and cache truth/observations");
  truth->add_option("--config", config_path, "experiment config (JSON)")->required();
  truth->add_option("--out", out_dir, "output directory (overrides config)");
  truth->add_option("--seed-override", ov.seed_override, "replace all seeds with base+1..4");
  truth->add_option("--cycles", ov.cycles, "truncate the cycle count");
  truth->add_option("--grid-scale", ov.grid_scale, "ns2d grid downscale factor");

  auto* compare = app.add_subcommand("compare", "tabulate final metrics across result files");
  compare->add_option("files", compare_files, "result JSON files")->required();

  auto* validate = app.add_subcommand("validate", "run model self-checks");
  validate->add_option("--model", validate_model, "pendulum | kdv | ns | all");
  validate->add_option("--grid-scale", validate_scale, "ns2d grid downscale factor");

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) return cmd_run(config_path, out_dir, ov);
    if (truth->parsed()) return cmd_truth(config_path, out_dir, ov);
    if (compare->parsed()) return cmd_compare(compare_files);
    if (validate->parsed()) return cmd_validate(validate_model, validate_scale);
  } catch (const ConfigError& e) {
    Json err{{"error", "config"}, {"key", e.key}, {"detail", e.what()}};
    std::cerr << err.dump() << "\n";
    return 64;
  } catch (const std::exception& e) {
    Json err{{"error", "runtime"}, {"detail", e.what()}};
    std::cerr << err.dump() << "\n";
    return 1;
  }
  return 0;
}
