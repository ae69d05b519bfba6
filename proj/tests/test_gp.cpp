#include <cmath>

#include "doctest.h"
#include "psl/gp.hpp"
#include "psl/rng.hpp"

using namespace psl;
using gp::Monomial;
using gp::Posynomial;

namespace {

Posynomial random_posynomial(gp::VarTable& table, int n_vars, int n_terms,
                             Rng& rng) {
  for (int v = 0; v < n_vars; ++v) table.intern("y" + std::to_string(v));
  Posynomial p;
  for (int t = 0; t < n_terms; ++t) {
    Monomial m(std::exp(rng.uniform(-1.0, 1.0)));
    for (int v = 0; v < n_vars; ++v)
      if (rng.uniform() < 0.7) m.mul(v, rng.uniform(-2.0, 2.0));
    p += m;
  }
  return p;
}

Eigen::VectorXd random_point(int n, Rng& rng, double lo = 0.2, double hi = 5.0) {
  Eigen::VectorXd y(n);
  for (int i = 0; i < n; ++i) y(i) = std::exp(rng.uniform(std::log(lo), std::log(hi)));
  return y;
}

}  // namespace

TEST_CASE("monomial and posynomial algebra") {
  gp::VarTable t;
  auto x = t.intern("x");
  auto y = t.intern("y");
  Monomial m(2.0, {{x, 1.0}, {y, -2.0}});
  Eigen::VectorXd pt(2);
  pt << 3.0, 2.0;
  CHECK(m.eval(pt) == doctest::Approx(2.0 * 3.0 / 4.0));
  Monomial sq = m.pow(2.0);
  CHECK(sq.eval(pt) == doctest::Approx(std::pow(m.eval(pt), 2.0)));
  Posynomial p;
  p += m;
  p += Monomial(1.0, {{x, 2.0}});
  p += Monomial(3.0, {{x, 2.0}});
  p.canonicalize();
  CHECK(p.terms.size() == 2);  // equal exponents merged
  CHECK(p.eval(pt) == doctest::Approx(1.5 + 4.0 * 9.0));
}

TEST_CASE("agm condensation of a single term is exact") {
  gp::VarTable t;
  auto x = t.intern("x");
  Posynomial g;
  g += Monomial(4.0, {{x, 1.5}});
  Eigen::VectorXd anchor(1);
  anchor << 2.0;
  Monomial ghat = gp::agm_condense(g, anchor);
  for (double v : {0.5, 1.0, 3.0, 7.0}) {
    Eigen::VectorXd pt(1);
    pt << v;
    CHECK(ghat.eval(pt) == doctest::Approx(g.eval(pt)).epsilon(1e-12));
  }
}

TEST_CASE("agm condensation of y + 1/y at 1 is the constant 2") {
  gp::VarTable t;
  auto x = t.intern("x");
  Posynomial g;
  g += Monomial(1.0, {{x, 1.0}});
  g += Monomial(1.0, {{x, -1.0}});
  Eigen::VectorXd anchor(1);
  anchor << 1.0;
  Monomial ghat = gp::agm_condense(g, anchor);
  CHECK(ghat.exps.empty());
  CHECK(ghat.coeff == doctest::Approx(2.0).epsilon(1e-12));
  for (double v : {0.3, 0.9, 1.7, 4.0}) {
    Eigen::VectorXd pt(1);
    pt << v;
    CHECK(ghat.eval(pt) <= g.eval(pt) + 1e-12 * g.eval(pt));
  }
}

TEST_CASE("agm condensation: tangency and global under-approximation") {
  Rng rng(2718);
  for (int trial = 0; trial < 30; ++trial) {
    gp::VarTable table;
    Posynomial g = random_posynomial(table, 3, 5, rng);
    Eigen::VectorXd anchor = random_point(3, rng);
    Monomial ghat = gp::agm_condense(g, anchor);
    // value tangency
    CHECK(ghat.eval(anchor) ==
          doctest::Approx(g.eval(anchor)).epsilon(1e-12));
    // gradient tangency vs finite differences of the condensate
    Eigen::VectorXd gg = g.grad(anchor, 3);
    for (int i = 0; i < 3; ++i) {
      double h = 1e-6 * anchor(i);
      Eigen::VectorXd up = anchor, dn = anchor;
      up(i) += h;
      dn(i) -= h;
      double fd = (ghat.eval(up) - ghat.eval(dn)) / (2.0 * h);
      CHECK(fd == doctest::Approx(gg(i)).epsilon(1e-5));
    }
    // under-approximation at random points
    for (int s = 0; s < 100; ++s) {
      Eigen::VectorXd pt = random_point(3, rng, 0.05, 20.0);
      double gv = g.eval(pt);
      CHECK(ghat.eval(pt) <= gv * (1.0 + 1e-12));
    }
  }
}

TEST_CASE("agm condensation rejects a vanishing anchor value") {
  gp::VarTable t;
  auto x = t.intern("x");
  Posynomial g;
  g += Monomial(0.0, {{x, 1.0}});
  Eigen::VectorXd anchor(1);
  anchor << 1.0;
  CHECK_THROWS_AS(gp::agm_condense(g, anchor), PslError);
}

TEST_CASE("log-space transform round-trips values") {
  Rng rng(31);
  gp::VarTable table;
  gp::GpProgram prog;
  prog.objective = random_posynomial(table, 3, 4, rng);
  prog.ineq.push_back(random_posynomial(table, 3, 3, rng));
  Monomial eq(2.0, {{0, 1.0}, {2, -1.0}});
  prog.eq.push_back(eq);
  prog.num_vars = table.size();
  gp::ConvexProgram cp = gp::to_convex(prog);

  for (int t = 0; t < 20; ++t) {
    Eigen::VectorXd y = random_point(3, rng);
    Eigen::VectorXd z = y.array().log();
    CHECK(cp.objective.eval(z) ==
          doctest::Approx(std::log(prog.objective.eval(y))).epsilon(1e-12));
    CHECK(cp.ineq[0].eval(z) ==
          doctest::Approx(std::log(prog.ineq[0].eval(y))).epsilon(1e-12));
    // monomial equality became affine
    double lhs = cp.eq_lhs.row(0).dot(z);
    CHECK(lhs - cp.eq_rhs(0) ==
          doctest::Approx(std::log(eq.eval(y))).epsilon(1e-12));
  }
}

TEST_CASE("transformed constraints are convex along random chords") {
  Rng rng(47);
  gp::VarTable table;
  Posynomial g = random_posynomial(table, 3, 5, rng);
  gp::GpProgram prog;
  prog.objective = g;
  prog.num_vars = 3;
  gp::ConvexProgram cp = gp::to_convex(prog);
  for (int t = 0; t < 1000; ++t) {
    Eigen::VectorXd a = random_point(3, rng).array().log();
    Eigen::VectorXd b = random_point(3, rng).array().log();
    double mid = cp.objective.eval(0.5 * (a + b));
    double chord = 0.5 * (cp.objective.eval(a) + cp.objective.eval(b));
    CHECK(mid <= chord + 1e-9);
  }
}

TEST_CASE("solver reaches the analytic optimum of min x+y with xy >= 1") {
  gp::VarTable table;
  auto x = table.intern("x");
  auto y = table.intern("y");
  gp::GpProgram prog;
  prog.num_vars = 2;
  prog.objective += Monomial(1.0, {{x, 1.0}});
  prog.objective += Monomial(1.0, {{y, 1.0}});
  Posynomial con;
  con += Monomial(1.0, {{x, -1.0}, {y, -1.0}});
  prog.ineq.push_back(con);
  gp::SolveOptions opts;
  opts.tol = 1e-9;
  gp::SolveResult res = gp::solve_convex(gp::to_convex(prog), opts);
  CHECK(std::exp(res.objective) == doctest::Approx(2.0).epsilon(1e-6));
  CHECK(std::exp(res.z(0)) == doctest::Approx(1.0).epsilon(1e-4));
  CHECK(std::exp(res.z(1)) == doctest::Approx(1.0).epsilon(1e-4));
}

TEST_CASE("solver pins a lower-bounded variable at its constraint") {
  for (double c : {0.5, 3.0, 42.0}) {
    gp::VarTable table;
    auto x = table.intern("x");
    gp::GpProgram prog;
    prog.num_vars = 1;
    prog.objective += Monomial(1.0, {{x, 1.0}});
    Posynomial con;
    con += Monomial(c, {{x, -1.0}});  // c/x <= 1  <=>  x >= c
    prog.ineq.push_back(con);
    gp::SolveOptions opts;
    gp::SolveResult res = gp::solve_convex(gp::to_convex(prog), opts);
    CHECK(std::exp(res.z(0)) == doctest::Approx(c).epsilon(1e-6));
  }
}

TEST_CASE("solver matches a zooming grid search on random boxed GPs") {
  Rng rng(1234);
  for (int trial = 0; trial < 5; ++trial) {
    gp::VarTable table;
    gp::GpProgram prog;
    prog.objective = random_posynomial(table, 2, 4, rng);
    prog.ineq.push_back(random_posynomial(table, 2, 3, rng) *
                        Monomial(0.05));  // scaled to keep the box feasible
    prog.num_vars = 2;
    prog.lower = {0.5, 0.5};
    prog.upper = {4.0, 4.0};

    gp::SolveOptions opts;
    opts.tol = 1e-9;
    Eigen::VectorXd start(2);
    start << 0.0, 0.0;  // log of (1,1)
    opts.start = start;
    gp::SolveResult res = gp::solve_convex(gp::to_convex(prog), opts);
    double solver_obj = std::exp(res.objective);

    // three-stage zooming grid in y-space over the feasible box
    double lo0 = 0.5, hi0 = 4.0;
    double bx = 1.0, by = 1.0, best = 1e300;
    double lox = lo0, hix = hi0, loy = lo0, hiy = hi0;
    for (int stage = 0; stage < 4; ++stage) {
      const int steps = 60;
      double cur_best = best;
      for (int i = 0; i <= steps; ++i) {
        for (int j = 0; j <= steps; ++j) {
          Eigen::VectorXd y(2);
          y << lox + (hix - lox) * i / steps, loy + (hiy - loy) * j / steps;
          if (prog.ineq[0].eval(y) > 1.0) continue;
          double v = prog.objective.eval(y);
          if (v < cur_best) {
            cur_best = v;
            bx = y(0);
            by = y(1);
          }
        }
      }
      best = cur_best;
      double wx = (hix - lox) / steps * 2.0, wy = (hiy - loy) / steps * 2.0;
      lox = std::max(lo0, bx - wx);
      hix = std::min(hi0, bx + wx);
      loy = std::max(lo0, by - wy);
      hiy = std::min(hi0, by + wy);
    }
    CAPTURE(trial);
    CHECK(std::abs(solver_obj - best) <= 1e-4 * std::abs(best));
  }
}

TEST_CASE("solver objective never beats a verified feasible point") {
  Rng rng(777);
  gp::VarTable table;
  gp::GpProgram prog;
  prog.objective = random_posynomial(table, 2, 3, rng);
  prog.ineq.push_back(random_posynomial(table, 2, 2, rng) * Monomial(0.05));
  prog.num_vars = 2;
  prog.lower = {0.5, 0.5};
  prog.upper = {4.0, 4.0};
  gp::SolveOptions opts;
  Eigen::VectorXd start = Eigen::VectorXd::Zero(2);
  opts.start = start;
  gp::SolveResult res = gp::solve_convex(gp::to_convex(prog), opts);
  double solver_obj = std::exp(res.objective);
  for (int t = 0; t < 200; ++t) {
    Eigen::VectorXd y = random_point(2, rng, 0.5, 4.0);
    if (prog.ineq[0].eval(y) > 1.0) continue;
    CHECK(solver_obj <= prog.objective.eval(y) + 1e-6 * prog.objective.eval(y));
  }
}

TEST_CASE("phase-1 finds interior points and flags infeasibility") {
  gp::VarTable table;
  auto x = table.intern("x");
  gp::GpProgram prog;
  prog.num_vars = 1;
  prog.objective += Monomial(1.0, {{x, 1.0}});
  Posynomial lo;
  lo += Monomial(5.0, {{x, -1.0}});  // x >= 5
  prog.ineq.push_back(lo);
  SUBCASE("seed far outside still solves") {
    gp::SolveOptions opts;
    Eigen::VectorXd start(1);
    start << std::log(0.01);
    opts.start = start;
    gp::SolveResult res = gp::solve_convex(gp::to_convex(prog), opts);
    CHECK(std::exp(res.z(0)) == doctest::Approx(5.0).epsilon(1e-5));
  }
  SUBCASE("contradictory bounds are infeasible") {
    Posynomial hi;
    hi += Monomial(0.5, {{x, 1.0}});  // x <= 2
    prog.ineq.push_back(hi);
    CHECK_THROWS_AS(gp::solve_convex(gp::to_convex(prog), gp::SolveOptions{}),
                    Infeasible);
  }
}

TEST_CASE("determinism: identical inputs give identical iterates") {
  Rng rng(55);
  gp::VarTable table;
  gp::GpProgram prog;
  prog.objective = random_posynomial(table, 3, 4, rng);
  prog.ineq.push_back(random_posynomial(table, 3, 3, rng) * Monomial(0.05));
  prog.num_vars = 3;
  prog.lower = {0.3, 0.3, 0.3};
  prog.upper = {5.0, 5.0, 5.0};
  gp::SolveOptions opts;
  Eigen::VectorXd start = Eigen::VectorXd::Zero(3);
  opts.start = start;
  gp::SolveResult a = gp::solve_convex(gp::to_convex(prog), opts);
  gp::SolveResult b = gp::solve_convex(gp::to_convex(prog), opts);
  CHECK(a.z == b.z);
  CHECK(a.objective == b.objective);
  CHECK(a.newton_steps == b.newton_steps);
}
