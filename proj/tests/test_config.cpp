#include <algorithm>

#include "doctest.h"
#include "psl/config.hpp"

using namespace psl;

namespace {

const char* kMinimalConfig = R"({
  "seed": 9,
  "network": {"devices": 3},
  "dataset": {"points_mean": 30, "points_std": 3},
  "planner": {"c1": 1e-9, "c2": 1e-3, "c3": 1.0, "t_ml": 200.0, "k_cap": 2},
  "bound": {"beta": 1.0, "theta": 3.0, "zeta2": 1e-5, "alpha": 0.05,
            "f_initial": 2.4}
})";

}  // namespace

TEST_CASE("config parses, fills the scenario, and rejects unknown keys") {
  RunConfig cfg = parse_config(kMinimalConfig);
  CHECK(cfg.seed == 9);
  CHECK(cfg.scenario.profile.num_devices == 3);
  CHECK(cfg.scenario.data_counts.size() == 3);
  CHECK(cfg.scenario.strata_rel_caps.size() == 3);
  CHECK(cfg.scenario.t_ml == 200.0);

  CHECK_THROWS_AS(parse_config(R"({"network": {"devices": 2}, "oops": 1})"),
                  ConfigError);
  CHECK_THROWS_AS(parse_config(R"({"network": {"devices": 2, "bogus": 3}})"),
                  ConfigError);
  CHECK_THROWS_AS(parse_config("not json"), ConfigError);
}

TEST_CASE("config parsing is a fixed point of parse -> rebuild -> parse") {
  RunConfig a = parse_config(kMinimalConfig);
  RunConfig b = parse_config(kMinimalConfig);
  CHECK(a.scenario.data_counts == b.scenario.data_counts);
  REQUIRE(a.scenario.profile.positions.size() ==
          b.scenario.profile.positions.size());
  for (std::size_t i = 0; i < a.scenario.profile.positions.size(); ++i)
    CHECK((a.scenario.profile.positions[i] - b.scenario.profile.positions[i])
              .norm() == 0.0);
}

TEST_CASE("plan json round-trips byte-identically") {
  RoundPlan plan;
  plan.rounds = 2;
  for (int k = 0; k < 2; ++k) {
    PlanRound r;
    r.epochs = Eigen::VectorXd::Constant(2, 2.0 + k);
    r.freq_hz = Eigen::VectorXd::Constant(2, 1.23456789e8);
    r.batch = Eigen::VectorXd::Constant(2, 5.0);
    r.rho = Eigen::MatrixXd::Identity(2, 2);
    r.phi = Eigen::MatrixXd::Identity(2, 2);
    r.t_data = 0.125;
    r.t_compute = 0.25;
    r.t_gradient = 0.0625;
    r.t_uplink = 0.03125;
    r.omega = 17.75 + 0.1 * k;
    r.d_hat = Eigen::VectorXd::Constant(2, 30.0);
    plan.per_round.push_back(std::move(r));
  }
  std::string once = plan_to_json(plan);
  RoundPlan back = plan_from_json(once);
  std::string twice = plan_to_json(back);
  CHECK(once == twice);
  CHECK(back.rounds == 2);
  CHECK(back.per_round[1].omega == plan.per_round[1].omega);
}

TEST_CASE("bound rounds parse into evaluator input") {
  const char* text = R"({
    "seed": 1,
    "network": {"devices": 2},
    "bound": {
      "beta": 1.5, "theta": 2.0, "zeta2": 0.01, "alpha": 0.05,
      "f_initial": 3.0,
      "rounds": [
        {"omega": 2.0, "delta": 0.05, "epochs": [2, 3], "d_hat": [12, 8],
         "strata_sizes": [[6, 6], [4, 4]], "strata_stds": [[1, 2], [0.5, 1.5]],
         "batch": [5, 3]}
      ]
    }
  })";
  RunConfig cfg = parse_config(text);
  REQUIRE(cfg.bound_rounds_given);
  REQUIRE(cfg.bound.per_round.size() == 1);
  BoundBreakdown b = evaluate_bound(cfg.bound, BoundMode::Neyman);
  CHECK(b.total > 0.0);
  CHECK(b.term_b > 0.0);
}

TEST_CASE("gp instances parse from json and solve") {
  const char* text = R"({
    "vars": ["x", "y"],
    "objective": [{"c": 1, "exp": {"x": 1}}, {"c": 1, "exp": {"y": 1}}],
    "ineq": [[{"c": 1, "exp": {"x": -1, "y": -1}}]]
  })";
  GpInstance inst = gp_from_json(text);
  gp::SolveResult res =
      gp::solve_convex(gp::to_convex(inst.program), gp::SolveOptions{});
  CHECK(std::exp(res.objective) == doctest::Approx(2.0).epsilon(1e-6));
  std::string out = gp_solution_to_json(inst, res);
  CHECK(out.find("\"objective\"") != std::string::npos);
}
