#include "doctest.h"
#include "psl/planner.hpp"
#include "scenario_helpers.hpp"

using namespace psl;

TEST_CASE("single-device program pins the dispersion pattern") {
  Scenario sc = testing::make_scenario(1, 200.0, 3, 1);
  PprimeBuilder builder(sc, 1);
  Eigen::VectorXd seed = builder.seed_point();
  gp::GpProgram prog = builder.build(seed);
  // every constraint admits the seed strictly
  for (const auto& c : prog.ineq) CHECK(c.eval(seed) < 1.0 + 1e-9);
  InnerResult res = solve_inner(sc, 1);
  // with one device, rho and phi rows collapse to the diagonal
  CHECK(res.x(builder.v_rho(0, 0, 0)) == doctest::Approx(1.0).epsilon(2e-3));
  CHECK(res.x(builder.v_phi(0, 0, 0)) == doctest::Approx(1.0).epsilon(2e-3));
}

TEST_CASE("condensed constraints are tangent at the expansion point") {
  Scenario sc = testing::make_scenario(3, 400.0, 5, 1);
  PprimeBuilder builder(sc, 1);
  Eigen::VectorXd seed = builder.seed_point();
  // the budget posynomial vs its condensation
  gp::Posynomial budget;
  for (int k = 0; k < 1; ++k) {
    for (gp::VarId v : {builder.v_td(k), builder.v_tl(k), builder.v_tm(k),
                        builder.v_tu(k), builder.v_omega(k)})
      budget += gp::Monomial(1.0, {{v, 1.0}});
  }
  gp::Monomial hhat = gp::agm_condense(budget, seed);
  CHECK(hhat.eval(seed) == doctest::Approx(budget.eval(seed)).epsilon(1e-12));
  // residual of the window constraint matches the true residual at the seed
  CHECK(budget.eval(seed) / sc.t_ml ==
        doctest::Approx(hhat.eval(seed) / sc.t_ml).epsilon(1e-12));
}

TEST_CASE("inner loop: trace is monotone, penalties settle, rows normalize") {
  Scenario sc = testing::make_scenario(3, 400.0, 7, 1);
  InnerResult res = solve_inner(sc, 1);
  REQUIRE(res.objective_trace.size() >= 2);
  for (std::size_t i = 1; i < res.objective_trace.size(); ++i)
    CHECK(res.objective_trace[i] <=
          res.objective_trace[i - 1] * (1.0 + 1e-9) + 1e-9);
  CHECK(res.max_penalty_gap <= 1e-3);

  PprimeBuilder builder(sc, 1);
  RoundPlan plan = extract_plan(builder, res.x);
  for (const auto& r : plan.per_round) {
    for (int i = 0; i < sc.profile.num_devices; ++i) {
      CHECK(r.rho.row(i).sum() == doctest::Approx(1.0).epsilon(1e-6));
      CHECK(r.phi.row(i).sum() == doctest::Approx(1.0).epsilon(1e-6));
      // binarized keep-or-disperse
      CHECK((r.phi(i, i) == 0.0 || r.phi(i, i) == 1.0));
    }
    CHECK(r.omega >= 0.0);
    for (int i = 0; i < sc.profile.num_devices; ++i) {
      CHECK(r.freq_hz(i) >=
            sc.profile.f_min_hz[static_cast<std::size_t>(i)] * (1 - 1e-9));
      CHECK(r.freq_hz(i) <=
            sc.profile.f_max_hz[static_cast<std::size_t>(i)] * (1 + 1e-9));
      CHECK(r.batch(i) >= 1.0 - 1e-9);
      CHECK(r.batch(i) <= r.d_hat(i) * (1 + 1e-6));
    }
  }
  // budget identity after post-processing
  double spent = 0.0;
  for (const auto& r : plan.per_round)
    spent += r.t_data + r.t_compute + r.t_gradient + r.t_uplink + r.omega;
  CHECK(std::abs(spent - sc.t_ml) <= 1e-3 * sc.t_ml);
}

TEST_CASE("iterates of the inner approximation stay feasible for P") {
  Scenario sc = testing::make_scenario(3, 400.0, 11, 1);
  PprimeBuilder builder(sc, 1);
  Eigen::VectorXd x = builder.seed_point();
  for (int ell = 0; ell < 4; ++ell) {
    gp::GpProgram prog = builder.build(x);
    gp::SolveOptions so;
    so.tol = 1e-7;
    so.start = x.array().log().matrix();
    gp::SolveResult res = gp::solve_convex(gp::to_convex(prog), so);
    x = res.z.array().exp().matrix();
    // original posynomial behind every condensed constraint still holds:
    // the window cover and the row sums
    double budget = 0.0;
    budget += x(builder.v_td(0)) + x(builder.v_tl(0)) + x(builder.v_tm(0)) +
              x(builder.v_tu(0)) + x(builder.v_omega(0));
    CHECK(budget <= sc.t_ml * (1.0 + 1e-9));
    for (int n = 0; n < 3; ++n) {
      double row = 0.0;
      for (int m = 0; m < 3; ++m) row += x(builder.v_rho(0, n, m));
      CHECK(row <= 1.0 + 1e-9);
    }
  }
}

TEST_CASE("determinism of the full inner solve") {
  Scenario sc = testing::make_scenario(2, 300.0, 13, 1);
  InnerResult a = solve_inner(sc, 1);
  InnerResult b = solve_inner(sc, 1);
  CHECK(a.objective_trace == b.objective_trace);
  CHECK((a.x - b.x).norm() == 0.0);
}

TEST_CASE("kkt residual is small at the optimum and grows off it") {
  Scenario sc = testing::make_scenario(2, 300.0, 17, 1);
  PprimeBuilder builder(sc, 1);
  InnerResult res = solve_inner(sc, 1);
  double at_opt = builder.kkt_residual(res.x);
  CHECK(at_opt <= 1e-3);
  Eigen::VectorXd bumped = res.x;
  bumped(builder.v_f(0, 0)) *= 1.5;
  bumped(builder.v_batch(0, 0)) *= 0.6;
  double off_opt = builder.kkt_residual(bumped);
  CHECK(off_opt > at_opt);
}

TEST_CASE("an impossible window reports infeasible") {
  Scenario sc = testing::make_scenario(2, 1e-7, 19, 2);
  CHECK_THROWS_AS(plan(sc), Infeasible);
}
