#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "psl/bounds.hpp"
#include "psl/gp.hpp"
#include "psl/netmodel.hpp"

namespace psl {

// Everything the planner needs about the deployment: radio/compute profile,
// data census, analysis constants, objective weights and solver knobs.
struct Scenario {
  NetworkProfile profile;
  std::vector<double> data_counts;  // D_n at planning time

  AnalysisConstants constants;  // beta, theta, zeta1, zeta2
  double alpha = 0.1;           // step-size constant
  double f_initial = 1.0;       // loss anchor F^(-1)(w^0)
  double lambda = 0.9;          // Lambda^{(k)}

  // per-device caps feeding the planner's bound surrogate: relative stratum
  // sizes s_{n,j} (<= 1) and stratum std caps, from a warm-up pass
  std::vector<std::vector<double>> strata_rel_caps;
  std::vector<std::vector<double>> strata_std_caps;

  double c1 = 1.0, c2 = 1.0, c3 = 1.0;  // energy / time / ML weights
  double t_ml = 1000.0;                 // training window (s)
  int k_cap = 8;                        // K searched over 1..k_cap
  std::array<double, 8> penalties{1e4, 1e4, 1e4, 1e4, 1e4, 1e4, 1e4, 1e4};
  std::vector<double> delta_forecast{0.1};  // per-round drift, last repeats
  double e_min = 1.0, e_cap = 25.0;

  double inner_tol = 1e-7;
  double convergence_rel = 1e-5;
  int max_outer = 60;
  std::uint64_t seed = 1;

  double total_data() const;
  double delta_for_round(int k) const;  // 1-indexed
  Rates rates_for_round(int k) const;
  double z_tilde(std::size_t n) const;  // (sum_j sigma_j s_j)^2
  double z_hat(std::size_t n) const;    // sum_j s_j sigma_j^2
};

struct PlanRound {
  Eigen::VectorXd epochs;
  Eigen::VectorXd freq_hz;
  Eigen::VectorXd batch;
  Eigen::MatrixXd rho;
  Eigen::MatrixXd phi;
  double t_data = 0.0, t_compute = 0.0, t_gradient = 0.0, t_uplink = 0.0;
  double omega = 0.0;
  Eigen::VectorXd d_hat;
  double e_sum = 0.0, e_avg = 0.0, e_max = 0.0, chi = 0.0;
};

struct RoundPlan {
  int rounds = 0;  // K
  std::vector<PlanRound> per_round;
  double a_ml = 1.0, a_do = 1.0;
  std::vector<double> a_mo, a_d, a_sum, a_avg, a_b1, a_b2;
};

struct SolverReport {
  std::vector<double> objective_trace;  // P' objective per outer iteration
  std::vector<std::pair<int, double>> per_k_objective;
  int chosen_k = 0;
  double kkt_residual = 0.0;
  double max_penalty_gap = 0.0;  // max |A - 1| at termination
  int outer_iterations = 0;
  int penalty_escalations = 0;
};

// The transformed problem for a fixed K. Owns the variable table and the
// iteration-independent posynomials; condensations are re-anchored per
// outer iteration.
class PprimeBuilder {
 public:
  PprimeBuilder(const Scenario& scenario, int k_rounds);

  int num_vars() const { return table_.size(); }
  const gp::VarTable& table() const { return table_; }

  // Strictly feasible identity-dominant seed.
  Eigen::VectorXd seed_point() const;

  // Condensed GP anchored at x_prev (positive, strictly feasible for the
  // monomial-approximated constraints). Throws InfeasibleSeed.
  gp::GpProgram build(const Eigen::VectorXd& x_prev) const;
  gp::GpProgram build_scaled(const Eigen::VectorXd& x_prev,
                             double penalty_scale) const;

  // Objective of P at x: averaged energy/time cost plus the ML surrogate
  // (positive minus negative bound parts), no penalties.
  double true_objective(const Eigen::VectorXd& x) const;

  // Stationarity + feasibility + complementarity residual of P at x, with
  // multipliers recovered by nonnegative least squares on the active set.
  double kkt_residual(const Eigen::VectorXd& x) const;

  // variable lookups (k is 0-based round index here)
  gp::VarId v_dhat(int k, int n) const;
  gp::VarId v_e(int k, int n) const;
  gp::VarId v_f(int k, int n) const;
  gp::VarId v_batch(int k, int n) const;
  gp::VarId v_rho(int k, int n, int m) const;
  gp::VarId v_phi(int k, int n, int m) const;
  gp::VarId v_td(int k) const;
  gp::VarId v_tl(int k) const;
  gp::VarId v_tm(int k) const;
  gp::VarId v_tu(int k) const;
  gp::VarId v_omega(int k) const;
  gp::VarId v_esum(int k) const;
  gp::VarId v_eavg(int k) const;
  gp::VarId v_emax(int k) const;
  gp::VarId v_chi(int k) const;
  gp::VarId v_a(const std::string& which, int k = -1) const;

  const std::vector<Rates>& round_rates() const { return rates_; }
  int k_rounds() const { return k_; }
  const Scenario& scenario() const { return sc_; }

 private:
  void intern_variables();
  void build_static_posynomials();
  gp::Posynomial energy_posy(int k) const;
  gp::Posynomial sigma_plus(int k) const;
  gp::Posynomial sigma_minus(int k) const;  // sigma_6 + sigma_7

  const Scenario& sc_;
  int k_;
  int n_;
  double d_total_;
  gp::VarTable table_;
  std::vector<Rates> rates_;

  // fixed posynomials, condensed fresh each iteration
  gp::Posynomial obj_;                       // P' objective
  std::vector<gp::Posynomial> sp_;           // sigma_+ per round
  std::vector<gp::Posynomial> w_;            // chi + sigma_- per round
  gp::Posynomial budget_;                    // sum of phase times and idles
  std::vector<std::vector<gp::Posynomial>> row_rho_;   // per k,n
  std::vector<std::vector<gp::Posynomial>> row_phi_;   // per k,n
  std::vector<std::vector<gp::Posynomial>> inflow_;    // I: per k,n
  std::vector<gp::Posynomial> esum_def_;               // R per k
  std::vector<gp::Posynomial> eavg_def_;    // sum Dhat_n e_n / D, per k
  std::vector<gp::Posynomial> eavg_expand_; // V: rho-expanded form, per k
  std::vector<std::vector<gp::Posynomial>> excl_b1_;   // per k,n
  std::vector<std::vector<gp::Posynomial>> excl_l_;    // L per k,n
  std::vector<std::vector<gp::Posynomial>> recv_;      // per k,n numerators
  std::vector<gp::Posynomial> energy_;                 // per k
};

struct InnerResult {
  Eigen::VectorXd x;  // converged interior point (y-space)
  std::vector<double> objective_trace;
  int outer_iterations = 0;
  int penalty_escalations = 0;
  double max_penalty_gap = 0.0;
  bool converged = false;  // criterion met before the outer-iteration cap
};

// Algorithm loop for fixed K: condense at the incumbent, solve the convex
// program, repeat until the relative objective change stays under the
// criterion for two iterations. Escalates penalties once (x10) when any
// auxiliary variable remains above 1.01.
InnerResult solve_inner(const Scenario& scenario, int k_rounds);

// Full planner: searches K in 1..k_cap, keeps the K minimizing the true
// objective, binarizes the gradient-dispersion pattern, repairs, and
// recomputes phase times to restore the budget identity.
std::pair<RoundPlan, SolverReport> plan(const Scenario& scenario);

// Post-processing used by plan(); exposed for tests.
RoundPlan extract_plan(const PprimeBuilder& builder, const Eigen::VectorXd& x);
double plan_true_objective(const Scenario& scenario, const RoundPlan& plan);

}  // namespace psl
