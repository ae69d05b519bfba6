#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "psl/errors.hpp"

namespace psl::gp {

using VarId = int;

// Interned variable names so planner-built programs stay readable.
class VarTable {
 public:
  VarId intern(const std::string& name);
  VarId lookup(const std::string& name) const;  // -1 when absent
  const std::string& name(VarId id) const { return names_.at(static_cast<std::size_t>(id)); }
  int size() const { return static_cast<int>(names_.size()); }

 private:
  std::vector<std::string> names_;
  std::unordered_map<std::string, VarId> ids_;
};

// c * prod_i y_i^{a_i}, c >= 0, sparse exponents.
struct Monomial {
  double coeff = 1.0;
  std::map<VarId, double> exps;

  Monomial() = default;
  explicit Monomial(double c) : coeff(c) {}
  Monomial(double c, std::initializer_list<std::pair<VarId, double>> e);

  Monomial& mul(VarId v, double exponent);
  Monomial operator*(const Monomial& o) const;
  Monomial operator/(const Monomial& o) const;
  Monomial pow(double p) const;
  double eval(const Eigen::VectorXd& y) const;
  double eval_log(const Eigen::VectorXd& z) const;  // log value at z = log y
};

struct Posynomial {
  std::vector<Monomial> terms;

  Posynomial() = default;
  Posynomial(const Monomial& m) { terms.push_back(m); }  // NOLINT(google-explicit-constructor)

  Posynomial& operator+=(const Monomial& m);
  Posynomial& operator+=(const Posynomial& p);
  Posynomial operator*(const Monomial& m) const;
  double eval(const Eigen::VectorXd& y) const;
  Eigen::VectorXd grad(const Eigen::VectorXd& y, int num_vars) const;
  void canonicalize();  // merge equal-exponent terms, drop zero coefficients
  bool empty() const { return terms.empty(); }
};

// Tangent monomial under-approximation at anchor z > 0 (componentwise):
// ghat(y) = prod_i (u_i(y)/w_i)^{w_i}, w_i = u_i(z)/g(z). Guarantees
// ghat <= g everywhere, with value and gradient matching g at z.
// Throws DegeneratePoint when g(z) = 0.
Monomial agm_condense(const Posynomial& g, const Eigen::VectorXd& anchor);

struct GpProgram {
  int num_vars = 0;
  Posynomial objective;
  std::vector<Posynomial> ineq;  // g(y) <= 1
  std::vector<Monomial> eq;      // h(y) = 1
  // optional positive box bounds in y-space; 0 / +inf mean unbounded
  std::vector<double> lower;
  std::vector<double> upper;
};

// One term per row: value(z) = log sum_r exp(a_r . z + b_r).
struct LseFunction {
  std::vector<std::vector<std::pair<VarId, double>>> rows;
  std::vector<double> offsets;
  std::vector<VarId> support;  // sorted unique variables, set by finalize()

  void finalize();
  double eval(const Eigen::VectorXd& z) const;
  // softmax weights of the rows at z (sums to 1)
  Eigen::VectorXd weights(const Eigen::VectorXd& z) const;
  void add_gradient(const Eigen::VectorXd& z, double scale,
                    Eigen::VectorXd& grad) const;
  // accumulates scale * (sum_r p_r a_r a_r^T - q q^T) + extra * q q^T over
  // the support only (q = weighted mean exponent vector)
  void add_hessian(const Eigen::VectorXd& z, double scale, double extra_qq,
                   Eigen::MatrixXd& hess) const;
  void add_hessian_triplets(const Eigen::VectorXd& z, double scale,
                            double extra_qq,
                            std::vector<Eigen::Triplet<double>>& out) const;
  Eigen::VectorXd mean_exponent(const Eigen::VectorXd& z) const;
};

struct ConvexProgram {
  int num_vars = 0;
  LseFunction objective;
  std::vector<LseFunction> ineq;                      // <= 0
  Eigen::MatrixXd eq_lhs;                             // A z = rhs
  Eigen::VectorXd eq_rhs;
};

// Log change of variables z = log y; posynomials become log-sum-exp of
// affine forms, monomial equalities become affine equalities.
ConvexProgram to_convex(const GpProgram& gp);

struct SolveOptions {
  double tol = 1e-8;
  int max_iter = 200;
  std::optional<Eigen::VectorXd> start;  // log-space seed
  double t0 = 1.0;
  double mu = 20.0;
};


enum class SolveStatus { Ok, Infeasible, IterLimit };

struct SolveResult {
  SolveStatus status = SolveStatus::Ok;
  Eigen::VectorXd z;          // log-space solution
  double objective = 0.0;     // log of the GP objective value
  double kkt_residual = 0.0;  // stationarity residual at the returned point
  Eigen::VectorXd ineq_multipliers;
  Eigen::VectorXd eq_multipliers;
  int newton_steps = 0;
  double t_final = 1.0;  // terminal barrier weight, reusable for warm starts
};

// Log-barrier interior point over the log-space program. Needs a strictly
// feasible point; runs a phase-1 slack minimization when the seed is not
// interior. Deterministic given inputs. Throws Infeasible / IterLimit.
SolveResult solve_convex(const ConvexProgram& prog, const SolveOptions& opts);

}  // namespace psl::gp
