#include "psl/gp.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <functional>
#include <iostream>
#include <limits>

namespace psl::gp {

VarId VarTable::intern(const std::string& name) {
  auto it = ids_.find(name);
  if (it != ids_.end()) return it->second;
  VarId id = static_cast<VarId>(names_.size());
  names_.push_back(name);
  ids_.emplace(name, id);
  return id;
}

VarId VarTable::lookup(const std::string& name) const {
  auto it = ids_.find(name);
  return it == ids_.end() ? -1 : it->second;
}

Monomial::Monomial(double c,
                   std::initializer_list<std::pair<VarId, double>> e)
    : coeff(c) {
  for (const auto& [v, p] : e) mul(v, p);
}

Monomial& Monomial::mul(VarId v, double exponent) {
  if (exponent == 0.0) return *this;
  double& slot = exps[v];
  slot += exponent;
  if (slot == 0.0) exps.erase(v);
  return *this;
}

Monomial Monomial::operator*(const Monomial& o) const {
  Monomial out = *this;
  out.coeff *= o.coeff;
  for (const auto& [v, p] : o.exps) out.mul(v, p);
  return out;
}

Monomial Monomial::operator/(const Monomial& o) const {
  Monomial out = *this;
  out.coeff /= o.coeff;
  for (const auto& [v, p] : o.exps) out.mul(v, -p);
  return out;
}

Monomial Monomial::pow(double p) const {
  Monomial out;
  out.coeff = std::pow(coeff, p);
  for (const auto& [v, e] : exps) out.exps[v] = e * p;
  return out;
}

double Monomial::eval(const Eigen::VectorXd& y) const {
  double v = coeff;
  for (const auto& [var, p] : exps) v *= std::pow(y(var), p);
  return v;
}

double Monomial::eval_log(const Eigen::VectorXd& z) const {
  double v = std::log(coeff);
  for (const auto& [var, p] : exps) v += p * z(var);
  return v;
}

Posynomial& Posynomial::operator+=(const Monomial& m) {
  if (m.coeff != 0.0) terms.push_back(m);
  return *this;
}

Posynomial& Posynomial::operator+=(const Posynomial& p) {
  for (const auto& m : p.terms) *this += m;
  return *this;
}

Posynomial Posynomial::operator*(const Monomial& m) const {
  Posynomial out;
  for (const auto& t : terms) out += t * m;
  return out;
}

double Posynomial::eval(const Eigen::VectorXd& y) const {
  double v = 0.0;
  for (const auto& t : terms) v += t.eval(y);
  return v;
}

Eigen::VectorXd Posynomial::grad(const Eigen::VectorXd& y,
                                 int num_vars) const {
  Eigen::VectorXd g = Eigen::VectorXd::Zero(num_vars);
  for (const auto& t : terms) {
    double v = t.eval(y);
    for (const auto& [var, p] : t.exps) g(var) += v * p / y(var);
  }
  return g;
}

void Posynomial::canonicalize() {
  std::map<std::map<VarId, double>, double> merged;
  for (const auto& t : terms) {
    if (t.coeff == 0.0) continue;
    merged[t.exps] += t.coeff;
  }
  terms.clear();
  for (auto& [e, c] : merged) {
    if (c == 0.0) continue;
    Monomial m(c);
    m.exps = e;
    terms.push_back(std::move(m));
  }
}

Monomial agm_condense(const Posynomial& g, const Eigen::VectorXd& anchor) {
  if (g.terms.empty()) throw PslError("agm_condense: empty posynomial");
  std::vector<double> values(g.terms.size());
  double total = 0.0;
  for (std::size_t i = 0; i < g.terms.size(); ++i) {
    values[i] = g.terms[i].eval(anchor);
    total += values[i];
  }
  if (total <= 0.0) throw DegeneratePoint("agm_condense: g(anchor) = 0");
  Monomial out(1.0);
  double log_coeff = 0.0;
  for (std::size_t i = 0; i < g.terms.size(); ++i) {
    const double w = values[i] / total;
    if (w <= 0.0) continue;
    // (u_i / w)^w accumulated in log space for the coefficient part
    log_coeff += w * (std::log(g.terms[i].coeff) - std::log(w));
    for (const auto& [var, p] : g.terms[i].exps) out.mul(var, w * p);
  }
  out.coeff = std::exp(log_coeff);
  return out;
}

void LseFunction::finalize() {
  support.clear();
  for (const auto& row : rows)
    for (const auto& [var, p] : row) {
      (void)p;
      support.push_back(var);
    }
  std::sort(support.begin(), support.end());
  support.erase(std::unique(support.begin(), support.end()), support.end());
}

double LseFunction::eval(const Eigen::VectorXd& z) const {
  double mx = -std::numeric_limits<double>::infinity();
  std::vector<double> vals(rows.size());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    double v = offsets[r];
    for (const auto& [var, p] : rows[r]) v += p * z(var);
    vals[r] = v;
    mx = std::max(mx, v);
  }
  double s = 0.0;
  for (double v : vals) s += std::exp(v - mx);
  return mx + std::log(s);
}

Eigen::VectorXd LseFunction::weights(const Eigen::VectorXd& z) const {
  Eigen::VectorXd w(static_cast<Eigen::Index>(rows.size()));
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t r = 0; r < rows.size(); ++r) {
    double v = offsets[r];
    for (const auto& [var, p] : rows[r]) v += p * z(var);
    w(static_cast<Eigen::Index>(r)) = v;
    mx = std::max(mx, v);
  }
  w = (w.array() - mx).exp();
  w /= w.sum();
  return w;
}

void LseFunction::add_gradient(const Eigen::VectorXd& z, double scale,
                               Eigen::VectorXd& grad) const {
  Eigen::VectorXd w = weights(z);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const double pw = scale * w(static_cast<Eigen::Index>(r));
    if (pw == 0.0) continue;
    for (const auto& [var, p] : rows[r]) grad(var) += pw * p;
  }
}

Eigen::VectorXd LseFunction::mean_exponent(const Eigen::VectorXd& z) const {
  Eigen::VectorXd w = weights(z);
  Eigen::VectorXd q = Eigen::VectorXd::Zero(z.size());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const double pw = w(static_cast<Eigen::Index>(r));
    for (const auto& [var, p] : rows[r]) q(var) += pw * p;
  }
  return q;
}

void LseFunction::add_hessian(const Eigen::VectorXd& z, double scale,
                              double extra_qq, Eigen::MatrixXd& hess) const {
  Eigen::VectorXd w = weights(z);
  Eigen::VectorXd q = Eigen::VectorXd::Zero(z.size());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const double pw = w(static_cast<Eigen::Index>(r));
    for (const auto& [vi, pi] : rows[r]) {
      q(vi) += pw * pi;
      for (const auto& [vj, pj] : rows[r]) {
        hess(vi, vj) += scale * pw * pi * pj;
      }
    }
  }
  const double qq = extra_qq - scale;  // lse hessian carries -qq^T
  if (qq != 0.0) {
    // q lives on the support; rank-1 update restricted there
    for (VarId vi : support) {
      const double qi = q(vi);
      if (qi == 0.0) continue;
      for (VarId vj : support) hess(vi, vj) += qq * qi * q(vj);
    }
  }
}

void LseFunction::add_hessian_triplets(
    const Eigen::VectorXd& z, double scale, double extra_qq,
    std::vector<Eigen::Triplet<double>>& out) const {
  Eigen::VectorXd w = weights(z);
  std::map<VarId, double> q;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const double pw = w(static_cast<Eigen::Index>(r));
    for (const auto& [vi, pi] : rows[r]) {
      q[vi] += pw * pi;
      for (const auto& [vj, pj] : rows[r])
        out.emplace_back(vi, vj, scale * pw * pi * pj);
    }
  }
  const double qq = extra_qq - scale;
  if (qq != 0.0) {
    for (const auto& [vi, qi] : q)
      for (const auto& [vj, qj] : q) out.emplace_back(vi, vj, qq * qi * qj);
  }
}

namespace {

LseFunction lse_of(const Posynomial& p) {
  LseFunction f;
  f.rows.reserve(p.terms.size());
  f.offsets.reserve(p.terms.size());
  for (const auto& t : p.terms) {
    if (t.coeff <= 0.0)
      throw PslError("to_convex: nonpositive coefficient in posynomial");
    std::vector<std::pair<VarId, double>> row(t.exps.begin(), t.exps.end());
    f.rows.push_back(std::move(row));
    f.offsets.push_back(std::log(t.coeff));
  }
  f.finalize();
  return f;
}

}  // namespace

ConvexProgram to_convex(const GpProgram& gp) {
  ConvexProgram cp;
  cp.num_vars = gp.num_vars;
  cp.objective = lse_of(gp.objective);
  cp.ineq.reserve(gp.ineq.size());
  for (const auto& g : gp.ineq) cp.ineq.push_back(lse_of(g));
  // box bounds become one-term constraints
  auto add_single = [&cp](VarId v, double exponent, double offset) {
    LseFunction f;
    f.rows.push_back({{v, exponent}});
    f.offsets.push_back(offset);
    f.finalize();
    cp.ineq.push_back(std::move(f));
  };
  for (std::size_t v = 0; v < gp.lower.size(); ++v) {
    if (gp.lower[v] > 0.0)
      add_single(static_cast<VarId>(v), -1.0, std::log(gp.lower[v]));
  }
  for (std::size_t v = 0; v < gp.upper.size(); ++v) {
    if (std::isfinite(gp.upper[v]) && gp.upper[v] > 0.0)
      add_single(static_cast<VarId>(v), 1.0, -std::log(gp.upper[v]));
  }
  cp.eq_lhs.setZero(static_cast<Eigen::Index>(gp.eq.size()), gp.num_vars);
  cp.eq_rhs.setZero(static_cast<Eigen::Index>(gp.eq.size()));
  for (std::size_t l = 0; l < gp.eq.size(); ++l) {
    const auto& m = gp.eq[l];
    if (m.coeff <= 0.0) throw PslError("to_convex: nonpositive equality coeff");
    for (const auto& [var, p] : m.exps)
      cp.eq_lhs(static_cast<Eigen::Index>(l), var) = p;
    cp.eq_rhs(static_cast<Eigen::Index>(l)) = -std::log(m.coeff);
  }
  return cp;
}

namespace {

struct BarrierState {
  Eigen::VectorXd z;
  Eigen::VectorXd eq_mult;
  int newton_steps = 0;
};

// One centering solve: minimize t*f0(z) - sum log(-g_i(z)) s.t. A z = b.
// Assumes z strictly feasible. Returns false on iteration budget exhaustion.
bool center(const ConvexProgram& prog, double t, BarrierState& st,
            int max_newton, double newton_tol, double gap_tol,
            const std::function<bool(const Eigen::VectorXd&)>& early_stop) {
  const int n = prog.num_vars;
  const Eigen::Index m_eq = prog.eq_lhs.rows();
  Eigen::VectorXd grad(n);
  Eigen::MatrixXd hess(n, n);

  auto phi = [&](const Eigen::VectorXd& zz) {
    double v = t * prog.objective.eval(zz);
    for (const auto& g : prog.ineq) {
      double gv = g.eval(zz);
      if (gv >= 0.0) return std::numeric_limits<double>::infinity();
      v -= std::log(-gv);
    }
    return v;
  };

  // Large equality-free systems go through a sparse factorization: every
  // constraint touches few variables, so the Hessian is sparse except for
  // the objective's rank-one -t q q^T, handled by one Woodbury correction.
  const bool use_sparse = (m_eq == 0 && n >= 256);
  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> sparse_ldlt;
  bool pattern_ready = false;

  for (int it = 0; it < max_newton; ++it) {
    if (early_stop && early_stop(st.z)) return true;
    grad.setZero();
    prog.objective.add_gradient(st.z, t, grad);
    bool domain_ok = true;
    std::vector<double> inv_vals(prog.ineq.size());
    for (std::size_t i = 0; i < prog.ineq.size(); ++i) {
      double v = prog.ineq[i].eval(st.z);
      if (v >= 0.0) {
        domain_ok = false;
        break;
      }
      inv_vals[i] = 1.0 / (-v);
      prog.ineq[i].add_gradient(st.z, inv_vals[i], grad);
    }
    if (!domain_ok) throw PslError("barrier: iterate left the domain");

    Eigen::VectorXd step(n);
    Eigen::VectorXd w = Eigen::VectorXd::Zero(m_eq);
    bool solved = false;
    double ridge = 0.0;  // fallback only; preemptive damping stalls Newton

    if (use_sparse) {
      std::vector<Eigen::Triplet<double>> trips;
      for (int i = 0; i < n; ++i) trips.emplace_back(i, i, 0.0);  // fix pattern
      // objective: positive part into the sparse matrix, its -t q q^T kept
      // aside as the Woodbury correction
      prog.objective.add_hessian_triplets(st.z, t, t, trips);
      Eigen::VectorXd q_obj = prog.objective.mean_exponent(st.z);
      for (std::size_t i = 0; i < prog.ineq.size(); ++i)
        prog.ineq[i].add_hessian_triplets(st.z, inv_vals[i],
                                          inv_vals[i] * inv_vals[i], trips);
      Eigen::SparseMatrix<double> s_mat(n, n);
      s_mat.setFromTriplets(trips.begin(), trips.end());
      for (int attempt = 0; attempt < 8 && !solved; ++attempt) {
        Eigen::SparseMatrix<double> s_try = s_mat;
        if (ridge > 0.0) {
          Eigen::SparseMatrix<double> ident(n, n);
          ident.setIdentity();
          s_try += ridge * ident;
        }
        if (!pattern_ready) {
          sparse_ldlt.analyzePattern(s_try);
          pattern_ready = true;
        }
        sparse_ldlt.factorize(s_try);
        if (sparse_ldlt.info() == Eigen::Success) {
          Eigen::VectorXd u = sparse_ldlt.solve(q_obj);
          double denom = 1.0 - t * q_obj.dot(u);
          if (denom > 1e-300) {
            auto woodbury = [&](const Eigen::VectorXd& rhs) {
              Eigen::VectorXd v = sparse_ldlt.solve(rhs);
              return (v + u * (t * q_obj.dot(v) / denom)).eval();
            };
            auto apply_h = [&](const Eigen::VectorXd& d) {
              return (s_try * d - (t * q_obj.dot(d)) * q_obj).eval();
            };
            step = woodbury(-grad);
            // two refinement passes recover the exact direction when the
            // factorization is stressed
            for (int ref = 0; ref < 2; ++ref) {
              Eigen::VectorXd resid = -grad - apply_h(step);
              if (!resid.allFinite()) break;
              step += woodbury(resid);
            }
            solved = step.allFinite() && -grad.dot(step) >= 0.0;
          }
        }
        if (!solved)
          ridge = (ridge == 0.0)
                      ? 1e-12 * (1.0 + std::abs(s_mat.coeffs().maxCoeff()))
                      : ridge * 100.0;
      }
    } else {
      hess.setZero();
      prog.objective.add_hessian(st.z, t, 0.0, hess);
      for (std::size_t i = 0; i < prog.ineq.size(); ++i)
        prog.ineq[i].add_hessian(st.z, inv_vals[i], inv_vals[i] * inv_vals[i],
                                 hess);
      const double ridge_base =
          1e-14 * (1.0 + hess.diagonal().cwiseAbs().maxCoeff());
      for (int attempt = 0; attempt < 8 && !solved; ++attempt) {
        Eigen::MatrixXd h = hess;
        if (ridge > 0.0) h.diagonal().array() += ridge;
        if (m_eq == 0) {
          Eigen::LDLT<Eigen::MatrixXd> ldlt(h);
          if (ldlt.info() == Eigen::Success) {
            step = ldlt.solve(-grad);
            solved = step.allFinite() && -grad.dot(step) >= 0.0;
          }
        } else {
          Eigen::MatrixXd kkt(n + m_eq, n + m_eq);
          kkt.setZero();
          kkt.topLeftCorner(n, n) = h;
          kkt.topRightCorner(n, m_eq) = prog.eq_lhs.transpose();
          kkt.bottomLeftCorner(m_eq, n) = prog.eq_lhs;
          Eigen::VectorXd rhs(n + m_eq);
          rhs.head(n) = -grad;
          rhs.tail(m_eq) = prog.eq_rhs - prog.eq_lhs * st.z;
          Eigen::PartialPivLU<Eigen::MatrixXd> lu(kkt);
          Eigen::VectorXd sol = lu.solve(rhs);
          step = sol.head(n);
          w = sol.tail(m_eq);
          solved = sol.allFinite();
        }
        ridge = (ridge == 0.0) ? ridge_base : ridge * 100.0;
      }
    }
    if (!solved) throw PslError("barrier: newton system unsolvable");
    st.eq_mult = w;

    const double decrement = -grad.dot(step);
    ++st.newton_steps;
    const double phi0 = phi(st.z);
    // absolute target, a floating-point floor tied to the phi scale, and a
    // duality-gap-proportional cut: decrement/(2t) is the suboptimality the
    // centering can still remove in objective units
    const double scale = 1.0 + std::abs(phi0);
    const double cut = std::max({newton_tol, 1e-13 * scale, 0.01 * gap_tol * t});
    if (decrement / 2.0 <= cut) return true;

    // backtracking with domain guard
    double alpha = 1.0;
    const double slope = grad.dot(step);
    bool moved = false;
    double phi_new = phi0;
    for (int ls = 0; ls < 60; ++ls) {
      Eigen::VectorXd cand = st.z + alpha * step;
      double pv = phi(cand);
      if (pv <= phi0 + 1e-4 * alpha * slope) {
        st.z = std::move(cand);
        phi_new = pv;
        moved = true;
        break;
      }
      alpha *= 0.5;
    }
    if (!moved) {
      // flat to numerical precision: accept convergence
      return true;
    }
    if (phi0 - phi_new <= 1e-14 * scale) return true;  // progress stall
    if (std::getenv("PSL_GP_TRACE") != nullptr && it > max_newton - 6) {
      Eigen::Index imax = 0;
      step.cwiseAbs().maxCoeff(&imax);
      std::cerr << "center t=" << t << " it=" << it << " dec=" << decrement
                << " phi=" << phi0 << " alpha=" << alpha << " top-step var "
                << imax << " = " << step(imax) << " z=" << st.z(imax) << "\n";
    }
  }
  return false;
}

double max_constraint(const ConvexProgram& prog, const Eigen::VectorXd& z) {
  double mx = -std::numeric_limits<double>::infinity();
  for (const auto& g : prog.ineq) mx = std::max(mx, g.eval(z));
  return mx;
}

// Projects z onto the affine set A z = b (minimum-norm correction).
void project_equalities(const ConvexProgram& prog, Eigen::VectorXd& z) {
  const Eigen::Index m_eq = prog.eq_lhs.rows();
  if (m_eq == 0) return;
  Eigen::VectorXd r = prog.eq_lhs * z - prog.eq_rhs;
  if (r.cwiseAbs().maxCoeff() < 1e-14) return;
  Eigen::MatrixXd aat = prog.eq_lhs * prog.eq_lhs.transpose();
  z -= prog.eq_lhs.transpose() * aat.ldlt().solve(r);
}

// Phase-1: minimize s subject to g_i(z) <= s; strictly feasible by
// construction. Succeeds when s can be driven below -margin.
Eigen::VectorXd phase_one(const ConvexProgram& prog, Eigen::VectorXd z0,
                          int max_iter, int& newton_budget) {
  ConvexProgram aux;
  aux.num_vars = prog.num_vars + 1;
  const VarId s_var = prog.num_vars;
  LseFunction obj;
  obj.rows.push_back({{s_var, 1.0}});
  obj.offsets.push_back(0.0);
  obj.finalize();
  aux.objective = obj;
  for (const auto& g : prog.ineq) {
    LseFunction shifted = g;
    for (auto& row : shifted.rows) row.emplace_back(s_var, -1.0);
    shifted.finalize();
    aux.ineq.push_back(std::move(shifted));
  }
  aux.eq_lhs.setZero(prog.eq_lhs.rows(), aux.num_vars);
  aux.eq_lhs.leftCols(prog.num_vars) = prog.eq_lhs;
  aux.eq_rhs = prog.eq_rhs;

  const double margin = 1e-9;
  Eigen::VectorXd z(aux.num_vars);
  z.head(prog.num_vars) = z0;
  z(s_var) = max_constraint(prog, z0) + 1.0;

  BarrierState st{z, Eigen::VectorXd(), 0};
  auto early = [&](const Eigen::VectorXd& zz) {
    Eigen::VectorXd base = zz.head(prog.num_vars);
    return max_constraint(prog, base) < -margin;
  };
  double t = 1.0;
  for (int outer = 0; outer < max_iter; ++outer) {
    if (!center(aux, t, st, 200, 1e-10, 1e-9, early)) break;
    Eigen::VectorXd base = st.z.head(prog.num_vars);
    if (max_constraint(prog, base) < -margin) {
      newton_budget = st.newton_steps;
      return base;
    }
    if (static_cast<double>(aux.ineq.size()) / t < 1e-10) break;
    t *= 20.0;
  }
  newton_budget = st.newton_steps;
  Eigen::VectorXd base = st.z.head(prog.num_vars);
  if (max_constraint(prog, base) < 0.0) return base;
  throw Infeasible("phase-1 could not find a strictly feasible point");
}

}  // namespace

SolveResult solve_convex(const ConvexProgram& prog, const SolveOptions& opts) {
  const int n = prog.num_vars;
  if (n == 0) throw PslError("solve_convex: empty program");
  Eigen::VectorXd z =
      opts.start.has_value() ? *opts.start : Eigen::VectorXd::Zero(n);
  if (z.size() != n) throw PslError("solve_convex: bad start size");
  project_equalities(prog, z);

  SolveResult res;
  int phase1_steps = 0;
  if (max_constraint(prog, z) >= 0.0)
    z = phase_one(prog, z, opts.max_iter, phase1_steps);

  BarrierState st{z, Eigen::VectorXd(), 0};
  const double m_count = std::max<std::size_t>(prog.ineq.size(), 1);
  double t = opts.t0;
  bool finished = false;
  for (int outer = 0; outer < opts.max_iter; ++outer) {
    if (!center(prog, t, st, 1500, 1e-10, opts.tol, nullptr))
      throw IterLimit("newton budget exhausted during centering");
    if (m_count / t < opts.tol) {
      finished = true;
      break;
    }
    t *= opts.mu;
  }
  if (!finished) throw IterLimit("barrier outer loop exhausted");

  res.t_final = t;
  res.z = st.z;
  res.objective = prog.objective.eval(st.z);
  res.newton_steps = st.newton_steps + phase1_steps;
  res.ineq_multipliers.resize(static_cast<Eigen::Index>(prog.ineq.size()));
  Eigen::VectorXd grad = Eigen::VectorXd::Zero(n);
  prog.objective.add_gradient(st.z, 1.0, grad);
  for (std::size_t i = 0; i < prog.ineq.size(); ++i) {
    double v = prog.ineq[i].eval(st.z);
    double lam = 1.0 / (t * std::max(-v, 1e-300));
    res.ineq_multipliers(static_cast<Eigen::Index>(i)) = lam;
    prog.ineq[i].add_gradient(st.z, lam, grad);
  }
  if (prog.eq_lhs.rows() > 0) {
    res.eq_multipliers = st.eq_mult / t;
    grad.noalias() += prog.eq_lhs.transpose() * res.eq_multipliers;
  }
  res.kkt_residual = grad.cwiseAbs().maxCoeff();
  res.status = SolveStatus::Ok;
  return res;
}

}  // namespace psl::gp
