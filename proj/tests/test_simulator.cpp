#include "doctest.h"
#include "psl/simulator.hpp"
#include "scenario_helpers.hpp"

using namespace psl;

namespace {

// hand-built plan: identity dispersion, fixed epochs/batches
RoundPlan identity_plan(const Scenario& sc, int rounds, double omega,
                        double epochs, double batch) {
  const int n = sc.profile.num_devices;
  RoundPlan plan;
  plan.rounds = rounds;
  for (int k = 0; k < rounds; ++k) {
    PlanRound r;
    r.epochs = Eigen::VectorXd::Constant(n, epochs);
    r.freq_hz = Eigen::VectorXd::Constant(n, 1e8);
    r.batch = Eigen::VectorXd::Constant(n, batch);
    r.rho = Eigen::MatrixXd::Identity(n, n);
    r.phi = Eigen::MatrixXd::Identity(n, n);
    r.t_data = 1.0;
    r.t_compute = 1.0;
    r.t_gradient = 1.0;
    r.t_uplink = 1.0;
    r.omega = omega;
    r.d_hat.setZero(n);
    r.e_sum = epochs * n;
    r.e_max = epochs;
    plan.per_round.push_back(std::move(r));
  }
  return plan;
}

}  // namespace

TEST_CASE("single device, full batch, one epoch: loss decreases") {
  Scenario sc = testing::make_scenario(1, 100.0, 23, 1);
  RoundPlan plan = identity_plan(sc, 3, 0.0, 1.0, 1e6 /* clamps to D */);
  SimConfig cfg = testing::make_sim_config();
  cfg.sampling = SamplingPolicy::FullBatch;
  SimResult res = run(sc, plan, cfg, 23);
  REQUIRE(res.rounds.size() == 3);
  CHECK(res.rounds.back().loss < res.rounds.front().loss);
  for (const auto& r : res.rounds) CHECK(r.drift == 0.0);
}

TEST_CASE("zero idle time measures zero drift even with drift configured") {
  Scenario sc = testing::make_scenario(2, 100.0, 29, 1);
  RoundPlan plan = identity_plan(sc, 2, 0.0, 1.0, 8.0);
  SimConfig cfg = testing::make_sim_config();
  cfg.drift.arrivals_per_sec = 2.0;
  cfg.drift.mean_shift_per_sec = 0.5;
  SimResult res = run(sc, plan, cfg, 29);
  for (const auto& r : res.rounds) CHECK(r.drift == 0.0);
}

TEST_CASE("dispersing devices reach the server through keepers") {
  Scenario sc = testing::make_scenario(3, 100.0, 31, 1);
  RoundPlan plan = identity_plan(sc, 2, 0.0, 2.0, 6.0);
  for (auto& r : plan.per_round) {
    // device 2 disperses onto keepers 0 and 1
    r.phi.setZero();
    r.phi(0, 0) = 1.0;
    r.phi(1, 1) = 1.0;
    r.phi(2, 0) = 0.6;
    r.phi(2, 1) = 0.4;
  }
  // the run itself verifies the condensation identity every round
  SimConfig cfg = testing::make_sim_config();
  SimResult res = run(sc, plan, cfg, 31);
  CHECK(res.rounds.size() == 2);
  CHECK(std::isfinite(res.final_loss));
}

TEST_CASE("random keeper patterns keep the reconstruction exact") {
  Rng pattern_rng(37);
  for (int trial = 0; trial < 5; ++trial) {
    Scenario sc = testing::make_scenario(4, 100.0, 41 + trial, 1);
    RoundPlan plan = identity_plan(sc, 1, 0.0, 1.0, 5.0);
    auto& r = plan.per_round[0];
    r.phi.setZero();
    std::vector<int> keepers;
    for (int i = 0; i < 4; ++i)
      if (pattern_rng.uniform() < 0.5) keepers.push_back(i);
    if (keepers.empty()) keepers.push_back(0);
    for (int i : keepers) r.phi(i, i) = 1.0;
    for (int i = 0; i < 4; ++i) {
      if (r.phi(i, i) == 1.0) continue;
      double left = 1.0;
      for (std::size_t j = 0; j < keepers.size(); ++j) {
        double share = (j + 1 == keepers.size())
                           ? left
                           : left * pattern_rng.uniform(0.3, 0.7);
        r.phi(i, keepers[j]) = share;
        left -= share;
      }
    }
    SimConfig cfg = testing::make_sim_config();
    CHECK_NOTHROW(run(sc, plan, cfg, 100 + trial));
  }
}

TEST_CASE("traces are deterministic in (scenario, plan, seed)") {
  Scenario sc = testing::make_scenario(2, 100.0, 43, 1);
  RoundPlan plan = identity_plan(sc, 2, 3.0, 2.0, 6.0);
  SimConfig cfg = testing::make_sim_config();
  cfg.drift.arrivals_per_sec = 1.0;
  cfg.drift.departures_per_sec = 0.5;
  cfg.drift.mean_shift_per_sec = 0.1;
  SimResult a = run(sc, plan, cfg, 7);
  SimResult b = run(sc, plan, cfg, 7);
  REQUIRE(a.rounds.size() == b.rounds.size());
  for (std::size_t i = 0; i < a.rounds.size(); ++i) {
    CHECK(a.rounds[i].loss == b.rounds[i].loss);
    CHECK(a.rounds[i].drift == b.rounds[i].drift);
    CHECK(a.rounds[i].energy_j == b.rounds[i].energy_j);
  }
  CHECK((a.w_final - b.w_final).norm() == 0.0);
}

TEST_CASE("wall clock advances by omega plus the active span") {
  Scenario sc = testing::make_scenario(2, 100.0, 47, 1);
  RoundPlan plan = identity_plan(sc, 3, 2.0, 1.0, 4.0);
  SimConfig cfg = testing::make_sim_config();
  SimResult res = run(sc, plan, cfg, 47);
  for (std::size_t i = 1; i < res.rounds.size(); ++i) {
    const auto& prev = res.rounds[i - 1];
    double expected = prev.t_start + prev.omega + prev.t_data +
                      prev.t_compute + prev.t_gradient + prev.t_uplink;
    CHECK(res.rounds[i].t_start == doctest::Approx(expected).epsilon(1e-12));
  }
}

TEST_CASE("energy accounting matches an offline recomputation") {
  Scenario sc = testing::make_scenario(2, 100.0, 53, 1);
  RoundPlan plan = identity_plan(sc, 2, 0.0, 2.0, 5.0);
  SimConfig cfg = testing::make_sim_config();
  SimResult res = run(sc, plan, cfg, 53);
  for (const auto& r : res.rounds) {
    CHECK(r.energy_j > 0.0);
    CHECK(std::isfinite(r.energy_j));
  }
}

TEST_CASE("drift telescopes: per-tick sums equal the endpoint difference") {
  // direct check of the telescoping construction on a scripted mutation
  Rng rng(59);
  std::vector<DataPoint> pts;
  for (int i = 0; i < 12; ++i) {
    DataPoint p;
    p.features = Eigen::VectorXd(2);
    p.features << rng.normal(), rng.normal();
    p.label = i % 2;
    pts.push_back(std::move(p));
  }
  DeviceDataset ds = DeviceDataset::build(0, pts, 16, 1);
  LossModel loss = LossModel::softmax(2, 2, 0.0);
  Eigen::VectorXd w = Eigen::VectorXd::Zero(loss.dim());

  double d_other = 10.0;  // a second, static device in the weighted loss
  double total = 0.0;
  double dn_prev = static_cast<double>(ds.total());
  double loss_prev = loss.dataset_loss(w, ds);
  double d_prev = dn_prev + d_other;
  double first_term = (dn_prev / d_prev) * loss_prev;
  for (int t = 0; t < 5; ++t) {
    DataPoint p;
    p.features = Eigen::VectorXd(2);
    p.features << rng.normal() + 2.0, rng.normal();
    p.label = t % 2;
    ds.assign_arrival(std::move(p));
    double dn_cur = static_cast<double>(ds.total());
    double loss_cur = loss.dataset_loss(w, ds);
    double d_cur = dn_cur + d_other;
    total += measure_drift(dn_prev, loss_prev, d_prev, dn_cur, loss_cur, d_cur);
    dn_prev = dn_cur;
    loss_prev = loss_cur;
    d_prev = d_cur;
  }
  double last_term = (dn_prev / d_prev) * loss_prev;
  CHECK(total == doctest::Approx(last_term - first_term).epsilon(1e-12));
}

TEST_CASE("compare_policies: identical policies give identical curves") {
  Scenario sc = testing::make_scenario(2, 100.0, 61, 1);
  RoundPlan plan = identity_plan(sc, 2, 0.0, 1.0, 6.0);
  SimConfig cfg = testing::make_sim_config();
  auto rows = compare_policies(sc, plan, cfg,
                               {SamplingPolicy::Neyman, SamplingPolicy::Neyman},
                               {5, 6});
  REQUIRE(rows.size() == 4);
  CHECK(rows[0].final_loss == rows[2].final_loss);
  CHECK(rows[1].final_loss == rows[3].final_loss);
}

TEST_CASE("full-batch policy reproduces plain gradient descent") {
  Scenario sc = testing::make_scenario(1, 100.0, 67, 1);
  RoundPlan plan = identity_plan(sc, 2, 0.0, 1.0, 1e6);
  SimConfig cfg = testing::make_sim_config();
  cfg.sampling = SamplingPolicy::FullBatch;
  cfg.use_quadratic = true;
  SimResult sim = run(sc, plan, cfg, 67);

  // offline: the same task stepped by hand
  std::vector<DeviceDataset> ds = generate_datasets(sc, cfg.dataset, 67);
  LossModel loss = LossModel::quadratic(cfg.dataset.feat_dim);
  Eigen::VectorXd w = Eigen::VectorXd::Zero(loss.dim());
  double n_dev = 1.0, e_sum = 1.0;
  double eta = cfg.alpha / std::sqrt(2.0 * e_sum / n_dev);
  for (int k = 0; k < 2; ++k) w -= eta * loss.dataset_grad(w, ds[0]);
  CHECK((sim.w_final - w).norm() <= 1e-9 * std::max(1.0, w.norm()));
}

TEST_CASE("csv trace has the documented header and row count") {
  Scenario sc = testing::make_scenario(1, 50.0, 71, 1);
  RoundPlan plan = identity_plan(sc, 2, 1.0, 1.0, 4.0);
  SimConfig cfg = testing::make_sim_config();
  SimResult res = run(sc, plan, cfg, 71);
  std::string csv = trace_csv(res.rounds);
  CHECK(csv.rfind("k,t_start,omega,T_D,T_L,T_M,T_U,energy_J,loss,"
                  "grad_norm_sq,drift\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);
}
