#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "psl/config.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitInfeasible = 3;

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw psl::PslError("cannot write " + path.string());
  out << text;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw psl::ConfigError("cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct CommonOpts {
  std::string config_path;
  std::string out_dir = ".";
  std::uint64_t seed = 0;
  bool seed_set = false;
};

psl::RunConfig load_with_overrides(const CommonOpts& opts) {
  psl::RunConfig cfg = psl::load_config(opts.config_path);
  if (opts.seed_set) {
    cfg.seed = opts.seed;
    // the scenario's placements, channels and caps are seed-derived
    nlohmann::json j = nlohmann::json::parse(read_file(opts.config_path));
    j["seed"] = opts.seed;
    cfg = psl::parse_config(j.dump());
  }
  if (!opts.out_dir.empty()) cfg.out_dir = opts.out_dir;
  return cfg;
}

int run_optimize(const CommonOpts& opts) {
  psl::RunConfig cfg = load_with_overrides(opts);
  auto [plan, report] = psl::plan(cfg.scenario);
  std::filesystem::create_directories(cfg.out_dir);
  write_file(std::filesystem::path(cfg.out_dir) / "plan.json",
             psl::plan_to_json(plan));
  write_file(std::filesystem::path(cfg.out_dir) / "report.json",
             psl::report_to_json(report));
  std::cout << "K*=" << report.chosen_k
            << " objective=" << report.per_k_objective.back().second
            << " kkt=" << report.kkt_residual << "\n";
  for (const auto& [k, obj] : report.per_k_objective)
    std::cout << "  K=" << k << " objective=" << obj << "\n";
  return kExitOk;
}

int run_simulate(const CommonOpts& opts, const std::string& plan_path) {
  psl::RunConfig cfg = load_with_overrides(opts);
  psl::RoundPlan plan = psl::plan_from_json(read_file(plan_path));
  psl::SimResult res = psl::run(cfg.scenario, plan, cfg.sim, cfg.seed);
  std::filesystem::create_directories(cfg.out_dir);
  write_file(std::filesystem::path(cfg.out_dir) / "trace.csv",
             psl::trace_csv(res.rounds));
  nlohmann::json summary;
  summary["final_loss"] = res.final_loss;
  summary["rounds"] = res.rounds.size();
  double energy = 0.0;
  for (const auto& r : res.rounds) energy += r.energy_j;
  summary["total_energy_j"] = energy;
  write_file(std::filesystem::path(cfg.out_dir) / "summary.json",
             summary.dump(2));
  std::cout << "final_loss=" << res.final_loss << " rounds=" << res.rounds.size()
            << "\n";
  return kExitOk;
}

int run_bound(const CommonOpts& opts, const std::string& mode) {
  psl::RunConfig cfg = load_with_overrides(opts);
  if (!cfg.bound_rounds_given)
    throw psl::ConfigError("bound subcommand needs bound.rounds in the config");
  psl::BoundBreakdown b =
      psl::evaluate_bound(cfg.bound, psl::parse_bound_mode(mode));
  std::cout << psl::breakdown_to_json(b) << "\n";
  return kExitOk;
}

int run_gp_solve(const std::string& input, double tol, int max_iter) {
  psl::GpInstance inst = psl::gp_from_json(read_file(input));
  psl::gp::ConvexProgram cp = psl::gp::to_convex(inst.program);
  psl::gp::SolveOptions so;
  so.tol = tol;
  so.max_iter = max_iter;
  psl::gp::SolveResult res = psl::gp::solve_convex(cp, so);
  std::cout << psl::gp_solution_to_json(inst, res) << "\n";
  return kExitOk;
}

int run_sweep(const CommonOpts& opts, const std::string& param,
              const std::string& values_csv) {
  std::vector<double> values;
  std::stringstream ss(values_csv);
  std::string item;
  while (std::getline(ss, item, ',')) values.push_back(std::stod(item));
  if (values.empty()) throw psl::ConfigError("sweep needs at least one value");

  nlohmann::json base = nlohmann::json::parse(read_file(opts.config_path));
  std::ostringstream csv;
  csv << "param,value,chosen_K,objective,kkt_residual,outer_iterations\n";
  for (double v : values) {
    nlohmann::json j = base;
    if (opts.seed_set) j["seed"] = opts.seed;
    if (param == "c1" || param == "c2" || param == "c3" || param == "t_ml" ||
        param == "k_cap" || param == "e_cap") {
      if (!j.contains("planner")) j["planner"] = nlohmann::json::object();
      j["planner"][param] = v;
    } else if (param == "zeta2" || param == "theta" || param == "beta" ||
               param == "alpha" || param == "lambda") {
      if (!j.contains("bound")) j["bound"] = nlohmann::json::object();
      j["bound"][param] = v;
    } else if (param == "delta") {
      if (!j.contains("planner")) j["planner"] = nlohmann::json::object();
      j["planner"]["delta_forecast"] = v;
    } else {
      throw psl::ConfigError("sweep does not know parameter " + param);
    }
    psl::RunConfig cfg = psl::parse_config(j.dump());
    auto [plan, report] = psl::plan(cfg.scenario);
    (void)plan;
    double best = std::numeric_limits<double>::infinity();
    for (const auto& [k, obj] : report.per_k_objective)
      if (k == report.chosen_k) best = obj;
    csv << param << ',' << v << ',' << report.chosen_k << ',' << best << ','
        << report.kkt_residual << ',' << report.outer_iterations << "\n";
  }
  std::filesystem::create_directories(opts.out_dir);
  write_file(std::filesystem::path(opts.out_dir) / "sweep.csv", csv.str());
  std::cout << csv.str();
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Stratified federated training planner and simulator"};
  app.require_subcommand(1);

  CommonOpts common;
  auto add_common = [&common](CLI::App* cmd, bool needs_config = true) {
    auto* opt = cmd->add_option("--config", common.config_path,
                                "run configuration (JSON, SI units)");
    if (needs_config) opt->required();
    cmd->add_option("--out", common.out_dir, "output directory");
    cmd->add_option("--seed", common.seed, "override the config seed (u64)")
        ->each([&common](const std::string&) { common.seed_set = true; });
  };

  auto* optimize = app.add_subcommand(
      "optimize", "solve the network-aware training plan and emit plan.json");
  add_common(optimize);

  auto* simulate = app.add_subcommand(
      "simulate", "execute a plan on the synthetic task and emit trace.csv");
  add_common(simulate);
  std::string plan_path;
  simulate->add_option("--plan", plan_path, "plan JSON from `optimize`")
      ->required();

  auto* bound = app.add_subcommand(
      "bound", "evaluate a convergence bound, JSON term breakdown to stdout");
  add_common(bound);
  std::string mode = "neyman";
  bound->add_option(
      "--mode", mode,
      "general | cor1 | cor2 | neyman | neyman_capped | neyman_noise");

  auto* gp_cmd = app.add_subcommand("gp", "geometric-program utilities");
  gp_cmd->require_subcommand(1);
  auto* gp_solve = gp_cmd->add_subcommand(
      "solve", "solve a standard-form GP given as JSON");
  std::string gp_input;
  double gp_tol = 1e-8;
  int gp_max_iter = 200;
  gp_solve->add_option("--input", gp_input, "GP description JSON")->required();
  gp_solve->add_option("--tol", gp_tol, "solver tolerance");
  gp_solve->add_option("--max-iter", gp_max_iter, "barrier iteration cap");

  auto* sweep = app.add_subcommand(
      "sweep", "re-plan over a grid of one parameter, one CSV row per value");
  add_common(sweep);
  std::string sweep_param, sweep_values;
  sweep->add_option("--param", sweep_param,
                    "c1|c2|c3|t_ml|k_cap|e_cap|zeta2|theta|beta|alpha|lambda|delta")
      ->required();
  sweep->add_option("--values", sweep_values, "comma-separated values")
      ->required();

  try {
    app.parse(argc, argv);
    if (optimize->parsed()) return run_optimize(common);
    if (simulate->parsed()) return run_simulate(common, plan_path);
    if (bound->parsed()) return run_bound(common, mode);
    if (gp_cmd->parsed()) return run_gp_solve(gp_input, gp_tol, gp_max_iter);
    if (sweep->parsed()) return run_sweep(common, sweep_param, sweep_values);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const psl::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const psl::Infeasible& e) {
    std::cerr << "infeasible: " << e.what() << "\n";
    return kExitInfeasible;
  } catch (const psl::InfeasibleSeed& e) {
    std::cerr << "infeasible: " << e.what() << "\n";
    return kExitInfeasible;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return kExitOk;
}
