#include "psl/config.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include "json.hpp"

namespace psl {

using nlohmann::json;

namespace {

void reject_unknown(const json& j, const std::string& where,
                    const std::set<std::string>& allowed) {
  if (!j.is_object()) throw ConfigError(where + " must be an object");
  for (const auto& [key, value] : j.items()) {
    (void)value;
    if (!allowed.count(key))
      throw ConfigError("unknown key '" + key + "' in " + where);
  }
}

template <typename T>
T get_or(const json& j, const std::string& key, T fallback) {
  if (!j.contains(key)) return fallback;
  return j.at(key).get<T>();
}

std::vector<double> per_device(const json& j, const std::string& key,
                               int n, double fallback) {
  std::vector<double> out(static_cast<std::size_t>(n), fallback);
  if (!j.contains(key)) return out;
  const auto& v = j.at(key);
  if (v.is_number()) {
    std::fill(out.begin(), out.end(), v.get<double>());
    return out;
  }
  auto vals = v.get<std::vector<double>>();
  if (vals.empty()) throw ConfigError(key + " must not be empty");
  for (int i = 0; i < n; ++i)
    out[static_cast<std::size_t>(i)] = vals[static_cast<std::size_t>(i) % vals.size()];
  return out;
}

NetworkProfile parse_network(const json& j, std::uint64_t seed) {
  reject_unknown(j, "network",
                 {"devices", "radius_m", "beta0_db", "d0_m", "pathloss_uplink",
                  "pathloss_d2d", "noise_dbm_per_hz", "bw_uplink_hz",
                  "bw_d2d_hz", "p_uplink_w", "p_d2d_w", "bits_per_datum",
                  "bits_per_grad_elem", "model_dim", "cycles_per_datum",
                  "chipset_capacitance", "f_min_hz", "f_max_hz", "coherence_s",
                  "tdma_data_reception", "average_rate_model"});
  int devices = j.at("devices").get<int>();
  if (devices < 1) throw ConfigError("network.devices must be positive");
  double radius = get_or(j, "radius_m", 25.0);
  Rng rng = Rng(seed).fork(0x706f73ull);
  NetworkProfile p = NetworkProfile::sample_disk(devices, radius, rng);
  p.beta0_db = get_or(j, "beta0_db", -30.0);
  p.d0_m = get_or(j, "d0_m", 1.0);
  p.pathloss_uplink = get_or(j, "pathloss_uplink", 3.0);
  p.pathloss_d2d = get_or(j, "pathloss_d2d", 3.2);
  double noise_dbm = get_or(j, "noise_dbm_per_hz", -174.0);
  p.noise_psd_w = std::pow(10.0, (noise_dbm - 30.0) / 10.0);
  p.bw_uplink_hz = get_or(j, "bw_uplink_hz", 1e6);
  p.bw_d2d_hz = get_or(j, "bw_d2d_hz", 1e5);
  p.p_uplink_w = per_device(j, "p_uplink_w", devices, 0.25);
  p.p_d2d_w = per_device(j, "p_d2d_w", devices, 0.10);
  p.bits_per_datum = get_or(j, "bits_per_datum", 4096.0);
  p.bits_per_grad_elem = get_or(j, "bits_per_grad_elem", 32.0);
  p.model_dim = get_or(j, "model_dim", 2250);
  if (j.contains("cycles_per_datum"))
    p.cycles_per_datum = per_device(j, "cycles_per_datum", devices, 100.0);
  p.chipset_capacitance = per_device(j, "chipset_capacitance", devices, 2e-13);
  p.f_min_hz = per_device(j, "f_min_hz", devices, 1e5);
  p.f_max_hz = per_device(j, "f_max_hz", devices, 2.3e9);
  p.coherence_s = get_or(j, "coherence_s", 0.05);
  p.tdma_data_reception = get_or(j, "tdma_data_reception", false);
  p.average_rate_model = get_or(j, "average_rate_model", false);
  for (int i = 0; i < devices; ++i)
    if (p.f_min_hz[static_cast<std::size_t>(i)] >
        p.f_max_hz[static_cast<std::size_t>(i)])
      throw ConfigError("network.f_min_hz exceeds f_max_hz");
  return p;
}

DatasetSpec parse_dataset(const json& j) {
  reject_unknown(j, "dataset",
                 {"classes", "feat_dim", "labels_per_device", "points_mean",
                  "points_std", "cluster_radius", "cluster_spread", "s_max",
                  "s_min"});
  DatasetSpec d;
  d.classes = get_or(j, "classes", 10);
  d.feat_dim = get_or(j, "feat_dim", 5);
  d.labels_per_device = get_or(j, "labels_per_device", 3);
  d.points_mean = get_or(j, "points_mean", 60.0);
  d.points_std = get_or(j, "points_std", 8.0);
  d.cluster_radius = get_or(j, "cluster_radius", 3.0);
  d.cluster_spread = get_or(j, "cluster_spread", 1.0);
  d.s_max = get_or<std::size_t>(j, "s_max", 16);
  d.s_min = get_or<std::size_t>(j, "s_min", 2);
  if (d.s_max % 2 != 0) throw ConfigError("dataset.s_max must be even");
  return d;
}

}  // namespace

RunConfig parse_config(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const std::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  reject_unknown(j, "config",
                 {"seed", "out_dir", "network", "dataset", "drift", "planner",
                  "bound", "sim"});
  RunConfig cfg;
  cfg.seed = get_or<std::uint64_t>(j, "seed", 1);
  cfg.out_dir = get_or<std::string>(j, "out_dir", ".");

  if (!j.contains("network")) throw ConfigError("config needs a network block");
  cfg.scenario.profile = parse_network(j.at("network"), cfg.seed);
  cfg.scenario.seed = cfg.seed;

  cfg.dataset = parse_dataset(j.contains("dataset") ? j.at("dataset") : json::object());
  cfg.sim.dataset = cfg.dataset;

  if (j.contains("drift")) {
    const auto& d = j.at("drift");
    reject_unknown(d, "drift",
                   {"arrivals_per_sec", "departures_per_sec",
                    "mean_shift_per_sec", "round_scale"});
    cfg.sim.drift.arrivals_per_sec = get_or(d, "arrivals_per_sec", 0.0);
    cfg.sim.drift.departures_per_sec = get_or(d, "departures_per_sec", 0.0);
    cfg.sim.drift.mean_shift_per_sec = get_or(d, "mean_shift_per_sec", 0.0);
    if (d.contains("round_scale"))
      cfg.sim.drift.round_scale =
          d.at("round_scale").get<std::vector<double>>();
  }

  if (j.contains("sim")) {
    const auto& s = j.at("sim");
    reject_unknown(s, "sim",
                   {"sampling", "l2", "alpha", "overrun_is_error",
                    "use_quadratic"});
    std::string pol = get_or<std::string>(s, "sampling", "neyman");
    if (pol == "neyman") cfg.sim.sampling = SamplingPolicy::Neyman;
    else if (pol == "uniform") cfg.sim.sampling = SamplingPolicy::Uniform;
    else if (pol == "full") cfg.sim.sampling = SamplingPolicy::FullBatch;
    else throw ConfigError("sim.sampling must be neyman|uniform|full");
    cfg.sim.l2 = get_or(s, "l2", 1e-3);
    cfg.sim.alpha = get_or(s, "alpha", 0.1);
    cfg.sim.overrun_is_error = get_or(s, "overrun_is_error", false);
    cfg.sim.use_quadratic = get_or(s, "use_quadratic", false);
  }

  Scenario& sc = cfg.scenario;
  if (j.contains("planner")) {
    const auto& p = j.at("planner");
    reject_unknown(p, "planner",
                   {"c1", "c2", "c3", "t_ml", "k_cap", "penalties",
                    "delta_forecast", "e_min", "e_cap", "inner_tol",
                    "convergence_rel", "max_outer"});
    sc.c1 = get_or(p, "c1", 1.0);
    sc.c2 = get_or(p, "c2", 1.0);
    sc.c3 = get_or(p, "c3", 1.0);
    sc.t_ml = get_or(p, "t_ml", 1000.0);
    sc.k_cap = get_or(p, "k_cap", 8);
    if (p.contains("penalties")) {
      auto pv = p.at("penalties").get<std::vector<double>>();
      if (pv.size() != 8) throw ConfigError("planner.penalties needs 8 values");
      for (std::size_t i = 0; i < 8; ++i) sc.penalties[i] = pv[i];
    }
    if (p.contains("delta_forecast")) {
      if (p.at("delta_forecast").is_number())
        sc.delta_forecast = {p.at("delta_forecast").get<double>()};
      else
        sc.delta_forecast = p.at("delta_forecast").get<std::vector<double>>();
    }
    sc.e_min = get_or(p, "e_min", 1.0);
    sc.e_cap = get_or(p, "e_cap", 25.0);
    sc.inner_tol = get_or(p, "inner_tol", 1e-7);
    sc.convergence_rel = get_or(p, "convergence_rel", 1e-5);
    sc.max_outer = get_or(p, "max_outer", 60);
  }

  double warm_cap_margin = 1.2;
  bool estimate = false;
  if (j.contains("bound")) {
    const auto& b = j.at("bound");
    reject_unknown(b, "bound",
                   {"beta", "theta", "zeta1", "zeta2", "lambda", "alpha",
                    "f_initial", "f_star", "gamma", "sigma_max", "e_hat_max",
                    "e_hat_min", "e_bar_min", "e_bar_max", "e_max_cap",
                    "estimate", "warm_cap_margin", "rounds", "k"});
    sc.constants.beta = get_or(b, "beta", 1.0);
    sc.constants.theta = get_or(b, "theta", 3.0);
    sc.constants.zeta1 = get_or(b, "zeta1", 1.0);
    sc.constants.zeta2 = get_or(b, "zeta2", 1e-5);
    sc.lambda = get_or(b, "lambda", 0.9);
    sc.alpha = get_or(b, "alpha", 0.1);
    sc.f_initial = get_or(b, "f_initial", 1.0);
    estimate = get_or(b, "estimate", false);
    warm_cap_margin = get_or(b, "warm_cap_margin", 1.2);

    cfg.bound.constants = sc.constants;
    cfg.bound.num_devices = sc.profile.num_devices;
    cfg.bound.alpha = sc.alpha;
    cfg.bound.f_initial = sc.f_initial;
    cfg.bound.f_star = get_or(b, "f_star", 0.0);
    cfg.bound.lambda_max = sc.lambda;
    cfg.bound.gamma = get_or(b, "gamma", -1.0);
    cfg.bound.sigma_max = get_or(b, "sigma_max", 0.0);
    cfg.bound.e_hat_max = get_or(b, "e_hat_max", 0.0);
    cfg.bound.e_hat_min = get_or(b, "e_hat_min", 0.0);
    cfg.bound.e_bar_min = get_or(b, "e_bar_min", 0.0);
    cfg.bound.e_bar_max = get_or(b, "e_bar_max", 0.0);
    cfg.bound.e_max_cap = get_or(b, "e_max_cap", 0.0);
    cfg.bound.rounds = get_or<std::size_t>(b, "k", 1);
    if (b.contains("rounds")) {
      cfg.bound_rounds_given = true;
      for (const auto& r : b.at("rounds")) {
        reject_unknown(r, "bound.rounds[]",
                       {"omega", "delta", "lambda", "epochs", "d_hat",
                        "total_data", "strata_sizes", "strata_stds",
                        "batch_per_stratum", "batch", "loss_gain", "eta"});
        RoundParams rp;
        rp.omega = get_or(r, "omega", 0.0);
        rp.delta = get_or(r, "delta", 0.0);
        rp.lambda = get_or(r, "lambda", sc.lambda);
        rp.epochs = r.at("epochs").get<std::vector<double>>();
        rp.d_hat = r.at("d_hat").get<std::vector<double>>();
        rp.total_data = get_or(r, "total_data", 0.0);
        if (rp.total_data <= 0.0)
          for (double v : rp.d_hat) rp.total_data += v;
        if (r.contains("strata_sizes"))
          rp.strata_sizes =
              r.at("strata_sizes").get<std::vector<std::vector<double>>>();
        if (r.contains("strata_stds"))
          rp.strata_stds =
              r.at("strata_stds").get<std::vector<std::vector<double>>>();
        if (r.contains("batch_per_stratum"))
          rp.batch_per_stratum =
              r.at("batch_per_stratum").get<std::vector<std::vector<double>>>();
        if (r.contains("batch"))
          rp.batch = r.at("batch").get<std::vector<double>>();
        if (r.contains("loss_gain")) rp.loss_gain = r.at("loss_gain").get<double>();
        rp.eta = get_or(r, "eta", 0.0);
        cfg.bound.per_round.push_back(std::move(rp));
      }
      cfg.bound.rounds = cfg.bound.per_round.size();
    }
  } else {
    cfg.bound.constants = sc.constants;
    cfg.bound.num_devices = sc.profile.num_devices;
  }

  // warm-up pass: data census plus stratum caps for the planner's surrogate
  std::vector<DeviceDataset> warm = generate_datasets(sc, cfg.dataset, cfg.seed);
  sc.data_counts.clear();
  sc.strata_rel_caps.clear();
  sc.strata_std_caps.clear();
  for (const auto& ds : warm) {
    sc.data_counts.push_back(static_cast<double>(ds.total()));
    std::vector<double> rel, stds;
    double total = static_cast<double>(ds.total());
    for (const auto& s : ds.strata()) {
      rel.push_back(std::min(1.0, warm_cap_margin *
                                      static_cast<double>(s.size()) / total));
      stds.push_back(warm_cap_margin * s.sample_std());
    }
    sc.strata_rel_caps.push_back(std::move(rel));
    sc.strata_std_caps.push_back(std::move(stds));
  }
  if (estimate) {
    LossModel loss = cfg.sim.use_quadratic
                         ? LossModel::quadratic(cfg.dataset.feat_dim)
                         : LossModel::softmax(cfg.dataset.classes,
                                              cfg.dataset.feat_dim, cfg.sim.l2);
    Rng pr = Rng(cfg.seed).fork(0x70726f6265ull);
    std::vector<Eigen::VectorXd> probes;
    for (int i = 0; i < 4; ++i) {
      Eigen::VectorXd w(loss.dim());
      for (int d = 0; d < loss.dim(); ++d) w(d) = 0.5 * pr.normal();
      probes.push_back(std::move(w));
    }
    AnalysisConstants est = estimate_constants(warm, loss, probes);
    sc.constants.beta = est.beta;
    sc.constants.theta = est.theta;
    sc.constants.zeta1 = est.zeta1;
    sc.constants.zeta2 = std::max(est.zeta2, sc.constants.zeta2);
    cfg.bound.constants = sc.constants;
    // anchor loss from the warm datasets at w = 0
    Eigen::VectorXd w0 = Eigen::VectorXd::Zero(loss.dim());
    double total = 0.0, lsum = 0.0;
    for (const auto& ds : warm) {
      double dn = static_cast<double>(ds.total());
      total += dn;
      lsum += dn * loss.dataset_loss(w0, ds);
    }
    sc.f_initial = lsum / total;
    cfg.bound.f_initial = sc.f_initial;
  }
  return cfg;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

// ---------------------------------------------------------------------------

namespace {
json matrix_to_json(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}
Eigen::MatrixXd matrix_from_json(const json& j) {
  auto rows = j.get<std::vector<std::vector<double>>>();
  Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size()),
                    rows.empty() ? 0 : static_cast<Eigen::Index>(rows[0].size()));
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t c = 0; c < rows[r].size(); ++c)
      m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
  return m;
}
json vector_to_json(const Eigen::VectorXd& v) {
  json arr = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) arr.push_back(v(i));
  return arr;
}
Eigen::VectorXd vector_from_json(const json& j) {
  auto vals = j.get<std::vector<double>>();
  return Eigen::Map<Eigen::VectorXd>(vals.data(),
                                     static_cast<Eigen::Index>(vals.size()));
}
}  // namespace

std::string plan_to_json(const RoundPlan& plan) {
  json j;
  j["K"] = plan.rounds;
  j["rounds"] = json::array();
  for (const auto& r : plan.per_round) {
    json jr;
    jr["e"] = vector_to_json(r.epochs);
    jr["f"] = vector_to_json(r.freq_hz);
    jr["B"] = vector_to_json(r.batch);
    jr["rho"] = matrix_to_json(r.rho);
    jr["phi"] = matrix_to_json(r.phi);
    jr["T"] = {{"D", r.t_data}, {"L", r.t_compute}, {"M", r.t_gradient},
               {"U", r.t_uplink}};
    jr["omega"] = r.omega;
    j["rounds"].push_back(std::move(jr));
  }
  return j.dump(2);
}

RoundPlan plan_from_json(const std::string& text) {
  json j = json::parse(text);
  RoundPlan plan;
  plan.rounds = j.at("K").get<int>();
  for (const auto& jr : j.at("rounds")) {
    PlanRound r;
    r.epochs = vector_from_json(jr.at("e"));
    r.freq_hz = vector_from_json(jr.at("f"));
    r.batch = vector_from_json(jr.at("B"));
    r.rho = matrix_from_json(jr.at("rho"));
    r.phi = matrix_from_json(jr.at("phi"));
    r.t_data = jr.at("T").at("D").get<double>();
    r.t_compute = jr.at("T").at("L").get<double>();
    r.t_gradient = jr.at("T").at("M").get<double>();
    r.t_uplink = jr.at("T").at("U").get<double>();
    r.omega = jr.at("omega").get<double>();
    const int n = static_cast<int>(r.epochs.size());
    r.d_hat.resize(n);
    r.d_hat.setZero();
    r.e_sum = r.epochs.sum();
    r.e_max = r.epochs.maxCoeff();
    plan.per_round.push_back(std::move(r));
  }
  return plan;
}

std::string report_to_json(const SolverReport& report) {
  json j;
  j["objective_trace"] = report.objective_trace;
  json per_k = json::array();
  for (const auto& [k, obj] : report.per_k_objective)
    per_k.push_back({{"K", k}, {"objective", obj}});
  j["per_k_objective"] = std::move(per_k);
  j["chosen_K"] = report.chosen_k;
  j["kkt_residual"] = report.kkt_residual;
  j["max_penalty_gap"] = report.max_penalty_gap;
  j["outer_iterations"] = report.outer_iterations;
  j["penalty_escalations"] = report.penalty_escalations;
  return j.dump(2);
}

std::string breakdown_to_json(const BoundBreakdown& b) {
  json j;
  j["term_a"] = b.term_a;
  j["term_b"] = b.term_b;
  j["term_c"] = b.term_c;
  j["term_d"] = b.term_d;
  j["term_e"] = b.term_e;
  j["total"] = b.total;
  return j.dump(2);
}

// ---------------------------------------------------------------------------

namespace {
gp::Monomial monomial_from_json(const json& j, gp::VarTable& table) {
  gp::Monomial m(j.at("c").get<double>());
  if (j.contains("exp"))
    for (const auto& [name, power] : j.at("exp").items())
      m.mul(table.intern(name), power.get<double>());
  return m;
}
gp::Posynomial posynomial_from_json(const json& j, gp::VarTable& table) {
  gp::Posynomial p;
  for (const auto& t : j) p += monomial_from_json(t, table);
  if (p.empty()) throw ConfigError("empty posynomial in GP input");
  return p;
}
}  // namespace

GpInstance gp_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const std::exception& e) {
    throw ConfigError(std::string("GP input is not valid JSON: ") + e.what());
  }
  reject_unknown(j, "gp", {"vars", "objective", "ineq", "eq", "lower", "upper"});
  GpInstance inst;
  if (j.contains("vars"))
    for (const auto& v : j.at("vars")) inst.table.intern(v.get<std::string>());
  inst.program.objective = posynomial_from_json(j.at("objective"), inst.table);
  if (j.contains("ineq"))
    for (const auto& g : j.at("ineq"))
      inst.program.ineq.push_back(posynomial_from_json(g, inst.table));
  if (j.contains("eq"))
    for (const auto& h : j.at("eq"))
      inst.program.eq.push_back(monomial_from_json(h, inst.table));
  inst.program.num_vars = inst.table.size();
  inst.program.lower.assign(static_cast<std::size_t>(inst.table.size()), 0.0);
  inst.program.upper.assign(static_cast<std::size_t>(inst.table.size()),
                            std::numeric_limits<double>::infinity());
  auto fill_bounds = [&](const char* key, std::vector<double>& dst) {
    if (!j.contains(key)) return;
    for (const auto& [name, value] : j.at(key).items()) {
      gp::VarId id = inst.table.lookup(name);
      if (id < 0) throw ConfigError(std::string("bound on unknown var ") + name);
      dst[static_cast<std::size_t>(id)] = value.get<double>();
    }
  };
  fill_bounds("lower", inst.program.lower);
  fill_bounds("upper", inst.program.upper);
  return inst;
}

std::string gp_solution_to_json(const GpInstance& inst,
                                const gp::SolveResult& result) {
  json j;
  j["objective"] = std::exp(result.objective);
  j["kkt_residual"] = result.kkt_residual;
  j["newton_steps"] = result.newton_steps;
  json vars;
  for (int v = 0; v < inst.table.size(); ++v)
    vars[inst.table.name(v)] = std::exp(result.z(v));
  j["vars"] = std::move(vars);
  return j.dump(2);
}

}  // namespace psl
