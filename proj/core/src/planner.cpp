#include "psl/planner.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <iostream>
#include <limits>
#include <memory>

namespace psl {

using gp::Monomial;
using gp::Posynomial;
using gp::VarId;

double Scenario::total_data() const {
  double d = 0.0;
  for (double v : data_counts) d += v;
  return d;
}

double Scenario::delta_for_round(int k) const {
  if (delta_forecast.empty()) return 0.0;
  std::size_t idx = std::min<std::size_t>(static_cast<std::size_t>(k - 1),
                                          delta_forecast.size() - 1);
  return delta_forecast[idx];
}

Rates Scenario::rates_for_round(int k) const {
  Rng base(seed);
  return rates(profile, realize_channel(profile, k, base));
}

double Scenario::z_tilde(std::size_t n) const {
  double lin = 0.0;
  for (std::size_t j = 0; j < strata_rel_caps[n].size(); ++j)
    lin += strata_std_caps[n][j] * strata_rel_caps[n][j];
  return lin * lin;
}

double Scenario::z_hat(std::size_t n) const {
  double q = 0.0;
  for (std::size_t j = 0; j < strata_rel_caps[n].size(); ++j)
    q += strata_rel_caps[n][j] * strata_std_caps[n][j] * strata_std_caps[n][j];
  return q;
}

// ---------------------------------------------------------------------------
// variable table layout

namespace {

// positivity floors; zero shares sit at infinite log-space distance
constexpr double kShareFloor = 1e-6;
constexpr double kIdleFloorRel = 1e-6;

std::string idx2(const char* base, int k, int n) {
  return std::string(base) + "[" + std::to_string(k) + "][" +
         std::to_string(n) + "]";
}
std::string idx3(const char* base, int k, int n, int m) {
  return std::string(base) + "[" + std::to_string(k) + "][" +
         std::to_string(n) + "][" + std::to_string(m) + "]";
}
std::string idx1(const char* base, int k) {
  return std::string(base) + "[" + std::to_string(k) + "]";
}
}  // namespace

PprimeBuilder::PprimeBuilder(const Scenario& scenario, int k_rounds)
    : sc_(scenario), k_(k_rounds), n_(scenario.profile.num_devices),
      d_total_(scenario.total_data()) {
  if (k_ < 1) throw PslError("PprimeBuilder: K < 1");
  rates_.reserve(static_cast<std::size_t>(k_));
  for (int k = 1; k <= k_; ++k) rates_.push_back(sc_.rates_for_round(k));
  intern_variables();
  build_static_posynomials();
}

void PprimeBuilder::intern_variables() {
  for (int k = 0; k < k_; ++k) {
    for (int n = 0; n < n_; ++n) {
      table_.intern(idx2("Dhat", k, n));
      table_.intern(idx2("e", k, n));
      table_.intern(idx2("f", k, n));
      table_.intern(idx2("B", k, n));
    }
    for (int n = 0; n < n_; ++n)
      for (int m = 0; m < n_; ++m) table_.intern(idx3("rho", k, n, m));
    for (int n = 0; n < n_; ++n)
      for (int m = 0; m < n_; ++m) table_.intern(idx3("phi", k, n, m));
    table_.intern(idx1("TD", k));
    table_.intern(idx1("TL", k));
    table_.intern(idx1("TM", k));
    table_.intern(idx1("TU", k));
    table_.intern(idx1("Omega", k));
    table_.intern(idx1("esum", k));
    table_.intern(idx1("eavg", k));
    table_.intern(idx1("emax", k));
    table_.intern(idx1("chi", k));
    table_.intern(idx1("A_MO", k));
    table_.intern(idx1("A_D", k));
    table_.intern(idx1("A_Sum", k));
    table_.intern(idx1("A_Avg", k));
    table_.intern(idx1("A_B1", k));
    table_.intern(idx1("A_B2", k));
  }
  table_.intern("A_ML");
  table_.intern("A_DO");
  table_.intern("ebarmin");
  table_.intern("ehatmax");
}

VarId PprimeBuilder::v_dhat(int k, int n) const { return table_.lookup(idx2("Dhat", k, n)); }
VarId PprimeBuilder::v_e(int k, int n) const { return table_.lookup(idx2("e", k, n)); }
VarId PprimeBuilder::v_f(int k, int n) const { return table_.lookup(idx2("f", k, n)); }
VarId PprimeBuilder::v_batch(int k, int n) const { return table_.lookup(idx2("B", k, n)); }
VarId PprimeBuilder::v_rho(int k, int n, int m) const { return table_.lookup(idx3("rho", k, n, m)); }
VarId PprimeBuilder::v_phi(int k, int n, int m) const { return table_.lookup(idx3("phi", k, n, m)); }
VarId PprimeBuilder::v_td(int k) const { return table_.lookup(idx1("TD", k)); }
VarId PprimeBuilder::v_tl(int k) const { return table_.lookup(idx1("TL", k)); }
VarId PprimeBuilder::v_tm(int k) const { return table_.lookup(idx1("TM", k)); }
VarId PprimeBuilder::v_tu(int k) const { return table_.lookup(idx1("TU", k)); }
VarId PprimeBuilder::v_omega(int k) const { return table_.lookup(idx1("Omega", k)); }
VarId PprimeBuilder::v_esum(int k) const { return table_.lookup(idx1("esum", k)); }
VarId PprimeBuilder::v_eavg(int k) const { return table_.lookup(idx1("eavg", k)); }
VarId PprimeBuilder::v_emax(int k) const { return table_.lookup(idx1("emax", k)); }
VarId PprimeBuilder::v_chi(int k) const { return table_.lookup(idx1("chi", k)); }

VarId PprimeBuilder::v_a(const std::string& which, int k) const {
  if (k < 0) return table_.lookup(which);
  return table_.lookup(which + "[" + std::to_string(k) + "]");
}

// ---------------------------------------------------------------------------
// fixed posynomials

Posynomial PprimeBuilder::energy_posy(int k) const {
  Posynomial e;
  const auto& r = rates_[static_cast<std::size_t>(k)];
  const auto& pr = sc_.profile;
  const double mbg = static_cast<double>(pr.model_dim) * pr.bits_per_grad_elem;
  for (int n = 0; n < n_; ++n) {
    const double pd = pr.p_d2d_w[static_cast<std::size_t>(n)];
    for (int m = 0; m < n_; ++m) {
      if (m == n) continue;
      double c_data = pd * sc_.data_counts[static_cast<std::size_t>(n)] *
                      pr.bits_per_datum / r.d2d(n, m);
      e += Monomial(c_data, {{v_rho(k, n, m), 1.0}});
      double c_grad = pd * mbg / r.d2d(n, m);
      e += Monomial(c_grad, {{v_phi(k, n, m), 1.0}});
    }
    double c_comp = 0.5 * pr.chipset_capacitance[static_cast<std::size_t>(n)] *
                    pr.cycles_per_datum[static_cast<std::size_t>(n)];
    e += Monomial(c_comp, {{v_e(k, n), 1.0}, {v_batch(k, n), 1.0}, {v_f(k, n), 2.0}});
    double c_up = pr.p_uplink_w[static_cast<std::size_t>(n)] * mbg / r.uplink(n);
    e += Monomial(c_up, {{v_phi(k, n, n), 1.0}});
  }
  return e;
}

Posynomial PprimeBuilder::sigma_plus(int k) const {
  const double n_dev = static_cast<double>(n_);
  const double k_rounds = static_cast<double>(k_);
  const double oml = 1.0 - sc_.lambda;
  const double beta = sc_.constants.beta;
  const double theta = sc_.constants.theta;
  const double sqrt_nk = std::sqrt(n_dev * k_rounds);
  Posynomial sp;
  // per-round share of the loss-anchor term
  double c_a = 2.0 * sc_.f_initial / (sc_.alpha * sqrt_nk * oml * k_rounds);
  sp += Monomial(c_a, {{v_a("ehatmax"), 0.5}, {v_a("ebarmin"), -1.0}});
  // drift
  double c_b = 2.0 * sc_.delta_for_round(k + 1) / (sc_.alpha * sqrt_nk * oml);
  if (c_b > 0.0)
    sp += Monomial(c_b, {{v_esum(k), 0.5}, {v_eavg(k), -1.0}, {v_omega(k), 1.0}});
  // sampling-noise terms with the capped strata surrogates
  const double c_c = 8.0 * beta * beta * theta * theta * sc_.alpha * sc_.alpha *
                     n_dev / (k_rounds * k_rounds * oml);
  const double c_e = 4.0 * theta * theta * beta * sc_.alpha * std::sqrt(n_dev) /
                     (k_rounds * std::sqrt(k_rounds) * oml);
  for (int n = 0; n < n_; ++n) {
    const double zt = sc_.z_tilde(static_cast<std::size_t>(n));
    if (zt > 0.0) {
      sp += Monomial(c_c * zt / d_total_,
                     {{v_esum(k), -1.0}, {v_e(k, n), 1.0}, {v_dhat(k, n), 1.0},
                      {v_batch(k, n), -1.0}});
      sp += Monomial(c_e * zt / (d_total_ * d_total_),
                     {{v_eavg(k), 1.0}, {v_esum(k), -0.5}, {v_dhat(k, n), 2.0},
                      {v_e(k, n), -1.0}, {v_batch(k, n), -1.0}});
    }
  }
  const double c_d = 8.0 * sc_.constants.zeta2 * sc_.alpha * sc_.alpha * beta *
                     beta * n_dev / (k_rounds * k_rounds * oml);
  if (c_d > 0.0)
    sp += Monomial(c_d, {{v_esum(k), -1.0}, {v_emax(k), 2.0}});
  return sp;
}

Posynomial PprimeBuilder::sigma_minus(int k) const {
  const double n_dev = static_cast<double>(n_);
  const double k_rounds = static_cast<double>(k_);
  const double oml = 1.0 - sc_.lambda;
  const double beta = sc_.constants.beta;
  const double theta = sc_.constants.theta;
  const double c_c = 8.0 * beta * beta * theta * theta * sc_.alpha * sc_.alpha *
                     n_dev / (k_rounds * k_rounds * oml);
  const double c_e = 4.0 * theta * theta * beta * sc_.alpha * std::sqrt(n_dev) /
                     (k_rounds * std::sqrt(k_rounds) * oml);
  Posynomial sm;
  for (int n = 0; n < n_; ++n) {
    const double zh = sc_.z_hat(static_cast<std::size_t>(n));
    if (zh <= 0.0) continue;
    sm += Monomial(c_c * zh / d_total_, {{v_esum(k), -1.0}, {v_e(k, n), 1.0}});
    sm += Monomial(c_e * zh / (d_total_ * d_total_),
                   {{v_eavg(k), 1.0}, {v_esum(k), -0.5}, {v_dhat(k, n), 1.0},
                    {v_e(k, n), -1.0}});
  }
  return sm;
}

void PprimeBuilder::build_static_posynomials() {
  // objective pieces
  Posynomial obj;
  for (int k = 0; k < k_; ++k) {
    energy_.push_back(energy_posy(k));
    obj += energy_.back() * Monomial(sc_.c1 / static_cast<double>(k_));
    Posynomial times;
    times += Monomial(1.0, {{v_td(k), 1.0}});
    times += Monomial(1.0, {{v_tl(k), 1.0}});
    times += Monomial(1.0, {{v_tm(k), 1.0}});
    times += Monomial(1.0, {{v_tu(k), 1.0}});
    obj += times * Monomial(sc_.c2 / static_cast<double>(k_));
    obj += Monomial(sc_.c3 / static_cast<double>(k_), {{v_chi(k), 1.0}});
  }
  obj_ = obj;  // penalties are appended inside build() so escalation can scale

  for (int k = 0; k < k_; ++k) {
    sp_.push_back(sigma_plus(k));
    Posynomial w;
    w += Monomial(1.0, {{v_chi(k), 1.0}});
    w += sigma_minus(k);
    w_.push_back(w);
  }

  for (int k = 0; k < k_; ++k) {
    budget_ += Monomial(1.0, {{v_td(k), 1.0}});
    budget_ += Monomial(1.0, {{v_tl(k), 1.0}});
    budget_ += Monomial(1.0, {{v_tm(k), 1.0}});
    budget_ += Monomial(1.0, {{v_tu(k), 1.0}});
    budget_ += Monomial(1.0, {{v_omega(k), 1.0}});
  }

  row_rho_.resize(static_cast<std::size_t>(k_));
  row_phi_.resize(static_cast<std::size_t>(k_));
  inflow_.resize(static_cast<std::size_t>(k_));
  excl_b1_.resize(static_cast<std::size_t>(k_));
  excl_l_.resize(static_cast<std::size_t>(k_));
  recv_.resize(static_cast<std::size_t>(k_));
  for (int k = 0; k < k_; ++k) {
    auto& rr = row_rho_[static_cast<std::size_t>(k)];
    auto& rp = row_phi_[static_cast<std::size_t>(k)];
    auto& in = inflow_[static_cast<std::size_t>(k)];
    auto& b1 = excl_b1_[static_cast<std::size_t>(k)];
    auto& ll = excl_l_[static_cast<std::size_t>(k)];
    auto& rc = recv_[static_cast<std::size_t>(k)];
    rr.resize(static_cast<std::size_t>(n_));
    rp.resize(static_cast<std::size_t>(n_));
    in.resize(static_cast<std::size_t>(n_));
    b1.resize(static_cast<std::size_t>(n_));
    ll.resize(static_cast<std::size_t>(n_));
    rc.resize(static_cast<std::size_t>(n_));
    for (int n = 0; n < n_; ++n) {
      for (int m = 0; m < n_; ++m) {
        rr[static_cast<std::size_t>(n)] += Monomial(1.0, {{v_rho(k, n, m), 1.0}});
        rp[static_cast<std::size_t>(n)] += Monomial(1.0, {{v_phi(k, n, m), 1.0}});
        in[static_cast<std::size_t>(n)] +=
            Monomial(sc_.data_counts[static_cast<std::size_t>(m)],
                     {{v_rho(k, m, n), 1.0}});
      }
      Posynomial b1p;
      b1p += Monomial(1.0);
      Posynomial lp;
      lp += Monomial(1.0, {{v_a("A_B2", k), 1.0}});
      Posynomial rcp;
      rcp += Monomial(1.0);
      for (int m = 0; m < n_; ++m) {
        if (m == n) continue;
        b1p += Monomial(1.0, {{v_phi(k, n, n), 1.0}, {v_phi(k, n, m), 1.0}});
        lp += Monomial(1.0, {{v_phi(k, n, n), 1.0}, {v_phi(k, m, n), 1.0}});
        rcp += Monomial(1.0, {{v_phi(k, m, n), 1.0}});
      }
      b1[static_cast<std::size_t>(n)] = b1p;
      ll[static_cast<std::size_t>(n)] = lp;
      rc[static_cast<std::size_t>(n)] = rcp;
    }
    Posynomial rk;
    Posynomial vk;
    Posynomial av;
    for (int n = 0; n < n_; ++n) {
      rk += Monomial(1.0, {{v_e(k, n), 1.0}});
      av += Monomial(1.0 / d_total_, {{v_dhat(k, n), 1.0}, {v_e(k, n), 1.0}});
      for (int m = 0; m < n_; ++m)
        vk += Monomial(sc_.data_counts[static_cast<std::size_t>(m)],
                       {{v_rho(k, m, n), 1.0}, {v_e(k, n), 1.0}});
    }
    esum_def_.push_back(rk);
    eavg_def_.push_back(av);
    eavg_expand_.push_back(vk);
  }
}

// ---------------------------------------------------------------------------
// seed

Eigen::VectorXd PprimeBuilder::seed_point() const {
  const double eps = 1e-4;
  const double shrink = 1.0 - 1e-3;  // keeps row sums strictly under 1
  Eigen::VectorXd x = Eigen::VectorXd::Ones(table_.size());
  const auto& pr = sc_.profile;

  double planned_total = 0.0;
  std::vector<std::array<double, 4>> times(static_cast<std::size_t>(k_));
  for (int k = 0; k < k_; ++k) {
    RoundDecision dec;
    dec.epochs.setConstant(n_, 1.05);
    dec.freq_hz.resize(n_);
    dec.batch.setConstant(n_, 1.05);
    dec.rho.setConstant(n_, n_, eps * shrink);
    dec.phi.setConstant(n_, n_, eps * shrink);
    for (int n = 0; n < n_; ++n) {
      dec.freq_hz(n) = std::sqrt(pr.f_min_hz[static_cast<std::size_t>(n)] *
                                 pr.f_max_hz[static_cast<std::size_t>(n)]);
      double diag = (1.0 - (n_ - 1) * eps) * shrink;
      dec.rho(n, n) = diag;
      dec.phi(n, n) = diag;
    }
    dec.data_counts.resize(n_);
    for (int n = 0; n < n_; ++n)
      dec.data_counts(n) = sc_.data_counts[static_cast<std::size_t>(n)];
    RoundTimes rt = round_timing(pr, rates_[static_cast<std::size_t>(k)], dec);
    const double floor_t = 1e-9 * sc_.t_ml;  // keeps log-space seeds finite
    times[static_cast<std::size_t>(k)] = {
        std::max(1.2 * rt.data, floor_t), std::max(1.2 * rt.compute, floor_t),
        std::max(1.2 * rt.gradient, floor_t),
        std::max(1.2 * rt.uplink, floor_t)};
    for (double tv : times[static_cast<std::size_t>(k)]) planned_total += tv;

    for (int n = 0; n < n_; ++n) {
      x(v_e(k, n)) = dec.epochs(n);
      x(v_f(k, n)) = dec.freq_hz(n);
      x(v_batch(k, n)) = dec.batch(n);
      for (int m = 0; m < n_; ++m) {
        x(v_rho(k, n, m)) = dec.rho(n, m);
        x(v_phi(k, n, m)) = dec.phi(n, m);
      }
    }
  }

  const double usable = sc_.t_ml * (1.0 - 1e-3);
  if (planned_total >= usable)
    throw InfeasibleSeed("training window " + std::to_string(sc_.t_ml) +
                         "s cannot fit " + std::to_string(k_) +
                         " rounds (needs " + std::to_string(planned_total) +
                         "s active)");
  const double omega0 = (usable - planned_total) / static_cast<double>(k_);

  for (int k = 0; k < k_; ++k) {
    x(v_td(k)) = times[static_cast<std::size_t>(k)][0];
    x(v_tl(k)) = times[static_cast<std::size_t>(k)][1];
    x(v_tm(k)) = times[static_cast<std::size_t>(k)][2];
    x(v_tu(k)) = times[static_cast<std::size_t>(k)][3];
    x(v_omega(k)) = omega0;

    double inflow_val = 0.0;
    for (int n = 0; n < n_; ++n) {
      double in_n = 0.0;
      for (int m = 0; m < n_; ++m)
        in_n += sc_.data_counts[static_cast<std::size_t>(m)] * x(v_rho(k, m, n));
      x(v_dhat(k, n)) = in_n * 1.001;
      inflow_val += in_n;
    }
    (void)inflow_val;
    double esum = 0.0, eavg = 0.0, emax = 0.0;
    for (int n = 0; n < n_; ++n) {
      esum += x(v_e(k, n));
      eavg += x(v_dhat(k, n)) * x(v_e(k, n)) / d_total_;
      emax = std::max(emax, x(v_e(k, n)));
    }
    x(v_esum(k)) = esum * 1.001;
    x(v_eavg(k)) = eavg * 1.001;
    x(v_emax(k)) = emax * 1.001;
    x(v_a("A_Sum", k)) = 1.001 * 1.01;
    x(v_a("A_Avg", k)) = 1.001 * 1.001 * 1.01;
    x(v_a("A_D", k)) = 1.001 * 1.01;
    x(v_a("A_MO", k)) = 1.01 / shrink;
    double b1_max = 1.0;
    for (int n = 0; n < n_; ++n) {
      double diag = x(v_phi(k, n, n));
      double off = 0.0;
      for (int m = 0; m < n_; ++m)
        if (m != n) off += x(v_phi(k, n, m));
      b1_max = std::max(b1_max, 1.0 + diag * off);
    }
    x(v_a("A_B1", k)) = b1_max * 1.01;
    x(v_a("A_B2", k)) = 1.02 + (n_ - 1) * eps;
  }
  x(v_a("A_ML")) = (sc_.t_ml / (planned_total + omega0 * k_)) * 1.01;
  x(v_a("A_DO")) = 1.01 / shrink;

  double ehat = 0.0, ebar = std::numeric_limits<double>::infinity();
  for (int k = 0; k < k_; ++k) {
    ehat = std::max(ehat, x(v_esum(k)));
    ebar = std::min(ebar, x(v_eavg(k)));
  }
  x(v_a("ehatmax")) = ehat * 1.001;
  x(v_a("ebarmin")) = ebar / 1.001;

  // chi sits just above the positive-minus-negative bound share
  for (int k = 0; k < k_; ++k) {
    double sp = sp_[static_cast<std::size_t>(k)].eval(x);
    double sm = sigma_minus(k).eval(x);
    double floor_val = std::max(sp * 1e-6, 1e-12);
    x(v_chi(k)) = std::max((sp - sm) * 1.05, floor_val);
  }
  return x;
}

// ---------------------------------------------------------------------------
// condensed program

gp::GpProgram PprimeBuilder::build(const Eigen::VectorXd& x_prev) const {
  return build_scaled(x_prev, 1.0);
}

gp::GpProgram PprimeBuilder::build_scaled(const Eigen::VectorXd& x_prev,
                                          double penalty_scale) const {
  if (x_prev.size() != table_.size() || !(x_prev.array() > 0.0).all())
    throw InfeasibleSeed("expansion point must be strictly positive");
  gp::GpProgram g;
  g.num_vars = table_.size();
  g.objective = obj_;
  const auto& p = sc_.penalties;
  g.objective += Monomial(p[0] * penalty_scale, {{v_a("A_ML"), 1.0}});
  g.objective += Monomial(p[1] * penalty_scale, {{v_a("A_DO"), 1.0}});
  for (int k = 0; k < k_; ++k) {
    g.objective += Monomial(p[2] * penalty_scale, {{v_a("A_MO", k), 1.0}});
    g.objective += Monomial(p[3] * penalty_scale, {{v_a("A_D", k), 1.0}});
    g.objective += Monomial(p[4] * penalty_scale, {{v_a("A_Sum", k), 1.0}});
    g.objective += Monomial(p[5] * penalty_scale, {{v_a("A_Avg", k), 1.0}});
    g.objective += Monomial(p[6] * penalty_scale, {{v_a("A_B1", k), 1.0}});
    g.objective += Monomial(p[7] * penalty_scale, {{v_a("A_B2", k), 1.0}});
  }

  auto add_posy = [&g](Posynomial p_) { g.ineq.push_back(std::move(p_)); };
  auto add_mono = [&g](Monomial m) {
    Posynomial p_;
    p_ += m;
    g.ineq.push_back(std::move(p_));
  };
  auto inv = [](const Monomial& m) { return m.pow(-1.0); };

  const auto& pr = sc_.profile;
  const double mbg = static_cast<double>(pr.model_dim) * pr.bits_per_grad_elem;

  for (int k = 0; k < k_; ++k) {
    const std::size_t ks = static_cast<std::size_t>(k);
    // ML-bound epigraph with condensed denominator
    Monomial w_hat = gp::agm_condense(w_[ks], x_prev);
    add_posy(sp_[ks] * inv(w_hat));

    // e_sum definition pair
    add_posy(esum_def_[ks] * Monomial(1.0, {{v_esum(k), -1.0}}));
    Monomial r_hat = gp::agm_condense(esum_def_[ks], x_prev);
    add_mono(Monomial(1.0, {{v_a("A_Sum", k), -1.0}, {v_esum(k), 1.0}}) * inv(r_hat));

    // Dhat definition pairs (A_D shared across devices)
    for (int n = 0; n < n_; ++n) {
      add_posy(inflow_[ks][static_cast<std::size_t>(n)] *
               Monomial(1.0, {{v_dhat(k, n), -1.0}}));
      Monomial i_hat =
          gp::agm_condense(inflow_[ks][static_cast<std::size_t>(n)], x_prev);
      add_mono(Monomial(1.0, {{v_a("A_D", k), -1.0}, {v_dhat(k, n), 1.0}}) * inv(i_hat));
    }

    // e_avg definition pair
    add_posy(eavg_def_[ks] * Monomial(1.0, {{v_eavg(k), -1.0}}));
    Monomial v_hat = gp::agm_condense(eavg_expand_[ks], x_prev);
    add_mono(Monomial(d_total_, {{v_a("A_Avg", k), -1.0}, {v_eavg(k), 1.0}}) * inv(v_hat));

    // epoch order statistics
    for (int n = 0; n < n_; ++n)
      add_mono(Monomial(1.0, {{v_e(k, n), 1.0}, {v_emax(k), -1.0}}));
    add_mono(Monomial(1.0, {{v_esum(k), 1.0}, {v_a("ehatmax"), -1.0}}));
    add_mono(Monomial(1.0, {{v_a("ebarmin"), 1.0}, {v_eavg(k), -1.0}}));

    const auto& r = rates_[ks];
    // phase-time covers
    for (int m = 0; m < n_; ++m) {
      for (int n = 0; n < n_; ++n) {
        if (m == n) continue;
        add_mono(Monomial(sc_.data_counts[static_cast<std::size_t>(m)] *
                              pr.bits_per_datum / r.d2d(m, n),
                          {{v_rho(k, m, n), 1.0}, {v_td(k), -1.0}}));
        add_mono(Monomial(mbg / r.d2d(m, n),
                          {{v_phi(k, m, n), 1.0}, {v_tm(k), -1.0}}));
      }
    }
    for (int n = 0; n < n_; ++n) {
      add_mono(Monomial(pr.cycles_per_datum[static_cast<std::size_t>(n)],
                        {{v_e(k, n), 1.0}, {v_batch(k, n), 1.0},
                         {v_f(k, n), -1.0}, {v_tl(k), -1.0}}));
      add_mono(Monomial(mbg / r.uplink(n),
                        {{v_phi(k, n, n), 1.0}, {v_tu(k), -1.0}}));
    }

    // dispersion row sums
    for (int n = 0; n < n_; ++n) {
      const std::size_t ns = static_cast<std::size_t>(n);
      add_posy(row_rho_[ks][ns]);
      Monomial g_hat = gp::agm_condense(row_rho_[ks][ns], x_prev);
      add_mono(Monomial(1.0, {{v_a("A_DO"), -1.0}}) * inv(g_hat));
      add_posy(row_phi_[ks][ns]);
      Monomial j_hat = gp::agm_condense(row_phi_[ks][ns], x_prev);
      add_mono(Monomial(1.0, {{v_a("A_MO", k), -1.0}}) * inv(j_hat));
      // keep-or-disperse exclusivity
      add_posy(excl_b1_[ks][ns] * Monomial(1.0, {{v_a("A_B1", k), -1.0}}));
      Monomial l_hat = gp::agm_condense(excl_l_[ks][ns], x_prev);
      add_posy(recv_[ks][ns] * inv(l_hat));
    }

    // minibatch inside the received data
    for (int n = 0; n < n_; ++n)
      add_mono(Monomial(1.0, {{v_batch(k, n), 1.0}, {v_dhat(k, n), -1.0}}));
  }

  // training-window budget pair
  add_posy(budget_ * Monomial(1.0 / sc_.t_ml));
  Monomial h_hat = gp::agm_condense(budget_, x_prev);
  add_mono(Monomial(sc_.t_ml, {{v_a("A_ML"), -1.0}}) * inv(h_hat));

  // auxiliaries at least one
  std::vector<VarId> a_vars = {v_a("A_ML"), v_a("A_DO")};
  for (int k = 0; k < k_; ++k)
    for (const char* nm : {"A_MO", "A_D", "A_Sum", "A_Avg", "A_B1", "A_B2"})
      a_vars.push_back(v_a(nm, k));
  for (VarId a : a_vars) add_mono(Monomial(1.0, {{a, -1.0}}));

  // box bounds; dispersion entries and idle times carry a positivity floor,
  // else the barrier chases their log-space ray toward zero forever
  g.lower.assign(static_cast<std::size_t>(table_.size()), 0.0);
  g.upper.assign(static_cast<std::size_t>(table_.size()),
                 std::numeric_limits<double>::infinity());
  for (int k = 0; k < k_; ++k) {
    for (int n = 0; n < n_; ++n) {
      g.lower[static_cast<std::size_t>(v_f(k, n))] =
          pr.f_min_hz[static_cast<std::size_t>(n)];
      g.upper[static_cast<std::size_t>(v_f(k, n))] =
          pr.f_max_hz[static_cast<std::size_t>(n)];
      g.lower[static_cast<std::size_t>(v_e(k, n))] = sc_.e_min;
      g.upper[static_cast<std::size_t>(v_e(k, n))] = sc_.e_cap;
      g.lower[static_cast<std::size_t>(v_batch(k, n))] = 1.0;
      for (int m = 0; m < n_; ++m) {
        g.lower[static_cast<std::size_t>(v_rho(k, n, m))] = kShareFloor;
        g.lower[static_cast<std::size_t>(v_phi(k, n, m))] = kShareFloor;
      }
    }
    g.lower[static_cast<std::size_t>(v_omega(k))] = kIdleFloorRel * sc_.t_ml;
  }

  // sanity: the anchor itself must satisfy the condensed program
  for (const auto& c : g.ineq) {
    if (c.eval(x_prev) > 1.0 + 1e-6)
      throw InfeasibleSeed("expansion point violates a condensed constraint");
  }
  return g;
}

// ---------------------------------------------------------------------------
// objective of P and its KKT residual

namespace {

// gradient in z = log x of a posynomial's value (not of its log)
Eigen::VectorXd posy_zgrad(const Posynomial& p, const Eigen::VectorXd& x,
                           int num_vars) {
  Eigen::VectorXd g = Eigen::VectorXd::Zero(num_vars);
  for (const auto& t : p.terms) {
    double v = t.eval(x);
    for (const auto& [var, pw] : t.exps) g(var) += v * pw;
  }
  return g;
}

Eigen::VectorXd posy_log_zgrad(const Posynomial& p, const Eigen::VectorXd& x,
                               int num_vars) {
  double v = p.eval(x);
  return posy_zgrad(p, x, num_vars) / v;
}

struct LogConstraint {
  Posynomial num;
  Posynomial den;  // empty means constant 1
  bool equality = false;
  double value(const Eigen::VectorXd& x) const {
    double v = std::log(num.eval(x));
    if (!den.empty()) v -= std::log(den.eval(x));
    return v;
  }
  Eigen::VectorXd grad(const Eigen::VectorXd& x, int nv) const {
    Eigen::VectorXd g = posy_log_zgrad(num, x, nv);
    if (!den.empty()) g -= posy_log_zgrad(den, x, nv);
    return g;
  }
};

Posynomial single(const Monomial& m) {
  Posynomial p;
  p += m;
  return p;
}

// Lawson-Hanson nonnegative least squares: min ||a*x - b|| with x >= 0.
Eigen::VectorXd nnls(const Eigen::MatrixXd& a, const Eigen::VectorXd& b,
                     int max_iter = 200) {
  const Eigen::Index n = a.cols();
  Eigen::VectorXd x = Eigen::VectorXd::Zero(n);
  std::vector<bool> passive(static_cast<std::size_t>(n), false);
  for (int outer = 0; outer < max_iter; ++outer) {
    Eigen::VectorXd w = a.transpose() * (b - a * x);
    Eigen::Index best = -1;
    double best_w = 1e-10 * std::max(1.0, b.norm());
    for (Eigen::Index i = 0; i < n; ++i) {
      if (!passive[static_cast<std::size_t>(i)] && w(i) > best_w) {
        best_w = w(i);
        best = i;
      }
    }
    if (best < 0) break;
    passive[static_cast<std::size_t>(best)] = true;
    for (int inner = 0; inner < max_iter; ++inner) {
      std::vector<Eigen::Index> idx;
      for (Eigen::Index i = 0; i < n; ++i)
        if (passive[static_cast<std::size_t>(i)]) idx.push_back(i);
      Eigen::MatrixXd ap(a.rows(), static_cast<Eigen::Index>(idx.size()));
      for (std::size_t i = 0; i < idx.size(); ++i)
        ap.col(static_cast<Eigen::Index>(i)) = a.col(idx[i]);
      Eigen::VectorXd zp = ap.colPivHouseholderQr().solve(b);
      bool all_pos = true;
      for (Eigen::Index i = 0; i < zp.size(); ++i)
        if (zp(i) <= 0.0) all_pos = false;
      if (all_pos) {
        x.setZero();
        for (std::size_t i = 0; i < idx.size(); ++i)
          x(idx[i]) = zp(static_cast<Eigen::Index>(i));
        break;
      }
      double alpha = 1e300;
      for (std::size_t i = 0; i < idx.size(); ++i) {
        double zi = zp(static_cast<Eigen::Index>(i));
        if (zi <= 0.0) {
          double xi = x(idx[i]);
          alpha = std::min(alpha, xi / (xi - zi));
        }
      }
      for (std::size_t i = 0; i < idx.size(); ++i) {
        double zi = zp(static_cast<Eigen::Index>(i));
        x(idx[i]) += alpha * (zi - x(idx[i]));
        if (x(idx[i]) <= 1e-14) {
          x(idx[i]) = 0.0;
          passive[static_cast<std::size_t>(idx[i])] = false;
        }
      }
    }
  }
  return x;
}

}  // namespace

double PprimeBuilder::true_objective(const Eigen::VectorXd& x) const {
  double obj = 0.0;
  for (int k = 0; k < k_; ++k) {
    const std::size_t ks = static_cast<std::size_t>(k);
    obj += sc_.c1 / k_ * energy_[ks].eval(x);
    obj += sc_.c2 / k_ *
           (x(v_td(k)) + x(v_tl(k)) + x(v_tm(k)) + x(v_tu(k)));
    double sm = w_[ks].eval(x) - x(v_chi(k));  // sigma_6 + sigma_7
    obj += sc_.c3 / k_ * (sp_[ks].eval(x) - sm);
  }
  return obj;
}

double PprimeBuilder::kkt_residual(const Eigen::VectorXd& x) const {
  const int nv = table_.size();
  std::vector<LogConstraint> eqs;
  std::vector<LogConstraint> ineqs;

  // equalities of P in the extended variable space
  eqs.push_back({budget_, single(Monomial(sc_.t_ml)), true});
  for (int k = 0; k < k_; ++k) {
    const std::size_t ks = static_cast<std::size_t>(k);
    for (int n = 0; n < n_; ++n) {
      const std::size_t ns = static_cast<std::size_t>(n);
      eqs.push_back({row_rho_[ks][ns], {}, true});
      eqs.push_back({row_phi_[ks][ns], {}, true});
      eqs.push_back({inflow_[ks][ns],
                     single(Monomial(1.0, {{v_dhat(k, n), 1.0}})), true});
    }
    eqs.push_back({esum_def_[ks], single(Monomial(1.0, {{v_esum(k), 1.0}})),
                   true});
    eqs.push_back({eavg_def_[ks], single(Monomial(1.0, {{v_eavg(k), 1.0}})),
                   true});
  }

  const auto& pr = sc_.profile;
  const double mbg = static_cast<double>(pr.model_dim) * pr.bits_per_grad_elem;
  for (int k = 0; k < k_; ++k) {
    const std::size_t ks = static_cast<std::size_t>(k);
    const auto& r = rates_[ks];
    for (int m = 0; m < n_; ++m) {
      for (int n = 0; n < n_; ++n) {
        if (m == n) continue;
        ineqs.push_back(
            {single(Monomial(sc_.data_counts[static_cast<std::size_t>(m)] *
                                 pr.bits_per_datum / r.d2d(m, n),
                             {{v_rho(k, m, n), 1.0}, {v_td(k), -1.0}})),
             {},
             false});
        ineqs.push_back({single(Monomial(mbg / r.d2d(m, n),
                                         {{v_phi(k, m, n), 1.0},
                                          {v_tm(k), -1.0}})),
                         {},
                         false});
      }
    }
    for (int n = 0; n < n_; ++n) {
      ineqs.push_back(
          {single(Monomial(pr.cycles_per_datum[static_cast<std::size_t>(n)],
                           {{v_e(k, n), 1.0},
                            {v_batch(k, n), 1.0},
                            {v_f(k, n), -1.0},
                            {v_tl(k), -1.0}})),
           {},
           false});
      ineqs.push_back({single(Monomial(mbg / r.uplink(n),
                                       {{v_phi(k, n, n), 1.0},
                                        {v_tu(k), -1.0}})),
                       {},
                       false});
      // bounds
      ineqs.push_back(
          {single(Monomial(pr.f_min_hz[static_cast<std::size_t>(n)],
                           {{v_f(k, n), -1.0}})),
           {},
           false});
      ineqs.push_back(
          {single(Monomial(1.0 / pr.f_max_hz[static_cast<std::size_t>(n)],
                           {{v_f(k, n), 1.0}})),
           {},
           false});
      ineqs.push_back({single(Monomial(sc_.e_min, {{v_e(k, n), -1.0}})), {},
                       false});
      ineqs.push_back({single(Monomial(1.0 / sc_.e_cap, {{v_e(k, n), 1.0}})),
                       {},
                       false});
      ineqs.push_back({single(Monomial(1.0, {{v_batch(k, n), -1.0}})), {},
                       false});
      ineqs.push_back({single(Monomial(1.0, {{v_batch(k, n), 1.0},
                                             {v_dhat(k, n), -1.0}})),
                       {},
                       false});
      ineqs.push_back({single(Monomial(1.0, {{v_e(k, n), 1.0},
                                             {v_emax(k), -1.0}})),
                       {},
                       false});
      // exclusivity in the relaxed form, terminal A values as constants
      const std::size_t ns = static_cast<std::size_t>(n);
      ineqs.push_back({excl_b1_[ks][ns],
                       single(Monomial(x(v_a("A_B1", k)))), false});
      Posynomial l_relaxed = excl_l_[ks][ns];
      ineqs.push_back({recv_[ks][ns], l_relaxed, false});
      // positivity floors on the dispersion shares
      for (int m = 0; m < n_; ++m) {
        ineqs.push_back({single(Monomial(kShareFloor, {{v_rho(k, n, m), -1.0}})),
                         {},
                         false});
        ineqs.push_back({single(Monomial(kShareFloor, {{v_phi(k, n, m), -1.0}})),
                         {},
                         false});
      }
    }
    ineqs.push_back({single(Monomial(kIdleFloorRel * sc_.t_ml,
                                     {{v_omega(k), -1.0}})),
                     {},
                     false});
    ineqs.push_back({single(Monomial(1.0, {{v_esum(k), 1.0},
                                           {v_a("ehatmax"), -1.0}})),
                     {},
                     false});
    ineqs.push_back({single(Monomial(1.0, {{v_a("ebarmin"), 1.0},
                                           {v_eavg(k), -1.0}})),
                     {},
                     false});
  }

  // objective gradient of P (signomial; chi and A variables are artifacts)
  Eigen::VectorXd grad = Eigen::VectorXd::Zero(nv);
  double value_scale = 0.0;
  for (int k = 0; k < k_; ++k) {
    const std::size_t ks = static_cast<std::size_t>(k);
    grad += (sc_.c1 / k_) * posy_zgrad(energy_[ks], x, nv);
    for (VarId tv : {v_td(k), v_tl(k), v_tm(k), v_tu(k)})
      grad(tv) += (sc_.c2 / k_) * x(tv);
    grad += (sc_.c3 / k_) * posy_zgrad(sp_[ks], x, nv);
    Posynomial sm = sigma_minus(k);
    if (!sm.empty()) grad -= (sc_.c3 / k_) * posy_zgrad(sm, x, nv);
  }
  // stationarity is assessed over P's variables only
  std::vector<bool> masked(static_cast<std::size_t>(nv), false);
  for (int k = 0; k < k_; ++k) {
    masked[static_cast<std::size_t>(v_chi(k))] = true;
    for (const char* nm : {"A_MO", "A_D", "A_Sum", "A_Avg", "A_B1", "A_B2"})
      masked[static_cast<std::size_t>(v_a(nm, k))] = true;
  }
  masked[static_cast<std::size_t>(v_a("A_ML"))] = true;
  masked[static_cast<std::size_t>(v_a("A_DO"))] = true;
  auto apply_mask = [&](Eigen::VectorXd& v) {
    for (int i = 0; i < nv; ++i)
      if (masked[static_cast<std::size_t>(i)]) v(i) = 0.0;
  };
  apply_mask(grad);
  value_scale = std::max(1.0, grad.cwiseAbs().maxCoeff());

  // active set and multiplier recovery by clipped least squares; the barrier
  // leaves near-active constraints a small relative distance off the
  // boundary, so the window is wider than the complementarity target
  const double tau = 2e-3;
  std::vector<Eigen::VectorXd> cols;
  std::vector<bool> is_ineq;
  std::vector<double> col_gap;  // |g_i| for inequalities, 0 for equalities
  double primal = 0.0;
  for (const auto& c : eqs) {
    primal = std::max(primal, std::abs(c.value(x)));
    Eigen::VectorXd g = c.grad(x, nv);
    apply_mask(g);
    cols.push_back(std::move(g));
    is_ineq.push_back(false);
    col_gap.push_back(0.0);
  }
  for (const auto& c : ineqs) {
    double v = c.value(x);
    primal = std::max(primal, std::max(0.0, v));
    if (v > -tau) {
      Eigen::VectorXd g = c.grad(x, nv);
      apply_mask(g);
      cols.push_back(std::move(g));
      is_ineq.push_back(true);
      col_gap.push_back(std::abs(v));
    }
  }

  Eigen::VectorXd best_resid = grad;
  double complementarity = 0.0;
  if (!cols.empty()) {
    std::vector<std::size_t> eq_idx, in_idx;
    for (std::size_t i = 0; i < cols.size(); ++i)
      (is_ineq[i] ? in_idx : eq_idx).push_back(i);
    // project the free (equality) directions out, run sign-constrained least
    // squares on the rest, then recover the equality multipliers
    Eigen::MatrixXd e_cols(nv, static_cast<Eigen::Index>(eq_idx.size()));
    for (std::size_t i = 0; i < eq_idx.size(); ++i)
      e_cols.col(static_cast<Eigen::Index>(i)) = cols[eq_idx[i]];
    Eigen::MatrixXd i_cols(nv, static_cast<Eigen::Index>(in_idx.size()));
    for (std::size_t i = 0; i < in_idx.size(); ++i)
      i_cols.col(static_cast<Eigen::Index>(i)) = cols[in_idx[i]];

    Eigen::MatrixXd q;  // orthonormal basis of the equality span
    if (eq_idx.size() > 0) {
      Eigen::HouseholderQR<Eigen::MatrixXd> qr(e_cols);
      Eigen::MatrixXd thin = Eigen::MatrixXd::Identity(
          nv, static_cast<Eigen::Index>(eq_idx.size()));
      q = qr.householderQ() * thin;
    }
    auto project = [&](const Eigen::VectorXd& v) {
      if (eq_idx.empty()) return v;
      return (v - q * (q.transpose() * v)).eval();
    };
    Eigen::MatrixXd a_proj(nv, static_cast<Eigen::Index>(in_idx.size()));
    for (Eigen::Index i = 0; i < a_proj.cols(); ++i)
      a_proj.col(i) = project(i_cols.col(i));
    Eigen::VectorXd lambda =
        in_idx.empty() ? Eigen::VectorXd()
                       : nnls(a_proj, project(-grad));

    Eigen::VectorXd partial = grad;
    if (!in_idx.empty()) partial += i_cols * lambda;
    if (!eq_idx.empty()) {
      Eigen::VectorXd nu = e_cols.colPivHouseholderQr().solve(-partial);
      partial += e_cols * nu;
    }
    best_resid = partial;
    for (std::size_t i = 0; i < in_idx.size(); ++i)
      complementarity = std::max(
          complementarity,
          lambda(static_cast<Eigen::Index>(i)) * col_gap[in_idx[i]]);
  }
  if (std::getenv("PSL_KKT_TRACE") != nullptr) {
    for (int i = 0; i < nv; ++i)
      if (std::abs(best_resid(i)) > 0.01 * value_scale)
        std::cerr << "kkt resid " << table_.name(i) << " = " << best_resid(i)
                  << " (scale " << value_scale << ")\n";
    std::cerr << "kkt primal = " << primal << "\n";
  }
  double stat = best_resid.cwiseAbs().maxCoeff() / value_scale;
  return std::max({stat, primal, complementarity / value_scale});
}

// ---------------------------------------------------------------------------
// successive approximation loop

namespace {

// The barrier leaves weakly-pressured order-statistic variables floating
// above their definitional values; snapping them down is monotone for the
// objective and keeps every constraint strictly feasible.
void snap_order_stats(const PprimeBuilder& b, Eigen::VectorXd& x) {
  const double pad = 1.0 + 1e-9;
  double ehat = 0.0;
  double ebar = std::numeric_limits<double>::infinity();
  for (int k = 0; k < b.k_rounds(); ++k) {
    double emax = 0.0;
    for (int n = 0; n < b.scenario().profile.num_devices; ++n)
      emax = std::max(emax, x(b.v_e(k, n)));
    x(b.v_emax(k)) = std::min(x(b.v_emax(k)), emax * pad);
    ehat = std::max(ehat, x(b.v_esum(k)));
    ebar = std::min(ebar, x(b.v_eavg(k)));
  }
  x(b.v_a("ehatmax")) = std::min(x(b.v_a("ehatmax")), ehat * pad);
  x(b.v_a("ebarmin")) = std::max(x(b.v_a("ebarmin")), ebar / pad);
}

InnerResult solve_inner_impl(const PprimeBuilder& builder,
                             const Scenario& sc) {
  Eigen::VectorXd x = builder.seed_point();
  InnerResult out;
  double penalty_scale = 1.0;

  // the A-variable penalty block is a near-constant pedestal; convergence
  // and divergence are judged on the objective without it
  auto penalty_part = [&](const Eigen::VectorXd& xx, double scale) {
    const auto& p = sc.penalties;
    double v = p[0] * scale * xx(builder.v_a("A_ML")) +
               p[1] * scale * xx(builder.v_a("A_DO"));
    for (int k = 0; k < builder.k_rounds(); ++k) {
      v += p[2] * scale * xx(builder.v_a("A_MO", k));
      v += p[3] * scale * xx(builder.v_a("A_D", k));
      v += p[4] * scale * xx(builder.v_a("A_Sum", k));
      v += p[5] * scale * xx(builder.v_a("A_Avg", k));
      v += p[6] * scale * xx(builder.v_a("A_B1", k));
      v += p[7] * scale * xx(builder.v_a("A_B2", k));
    }
    return v;
  };

  // cold solves start with the barrier already objective-dominated; the
  // analytic-center detour at t ~ 1 otherwise drags phase variables far from
  // their final values and back
  double warm_t0 = 64.0;
  for (int escalation = 0; escalation <= 1; ++escalation) {
    std::vector<double> trace;
    std::vector<double> metric;
    int increases = 0;
    out.converged = false;
    for (int ell = 0; ell < sc.max_outer; ++ell) {
      gp::GpProgram prog = builder.build_scaled(x, penalty_scale);
      gp::ConvexProgram cp = gp::to_convex(prog);
      gp::SolveOptions so;
      so.tol = sc.inner_tol;
      so.start = x.array().log().matrix();
      so.t0 = warm_t0;
      gp::SolveResult res = gp::solve_convex(cp, so);
      warm_t0 = std::max(1.0, res.t_final / 400.0);
      double obj = std::exp(res.objective);
      x = res.z.array().exp().matrix();
      snap_order_stats(builder, x);
      double core = obj - penalty_part(x, penalty_scale);
      if (!metric.empty() &&
          core > metric.back() + 1e-6 * std::max(1.0, std::abs(metric.back()))) {
        if (++increases >= 2)
          throw Diverged("objective increased twice in the outer loop");
      }
      trace.push_back(obj);
      metric.push_back(core);
      if (metric.size() >= 3) {
        double d1 = std::abs(metric[metric.size() - 1] - metric[metric.size() - 2]) /
                    std::max(std::abs(metric[metric.size() - 2]), 1e-300);
        double d2 = std::abs(metric[metric.size() - 2] - metric[metric.size() - 3]) /
                    std::max(std::abs(metric[metric.size() - 3]), 1e-300);
        if (d1 < sc.convergence_rel && d2 < sc.convergence_rel) {
          out.converged = true;
          break;
        }
      }
    }
    out.objective_trace = trace;
    out.outer_iterations = static_cast<int>(trace.size());

    double gap = 0.0;
    std::vector<gp::VarId> a_vars = {builder.v_a("A_ML"), builder.v_a("A_DO")};
    for (int k = 0; k < builder.k_rounds(); ++k)
      for (const char* nm : {"A_MO", "A_D", "A_Sum", "A_Avg", "A_B1", "A_B2"})
        a_vars.push_back(builder.v_a(nm, k));
    for (gp::VarId a : a_vars) gap = std::max(gap, std::abs(x(a) - 1.0));
    out.max_penalty_gap = gap;
    if (gap <= 1e-3 || escalation == 1) break;
    penalty_scale *= 10.0;
    ++out.penalty_escalations;
  }
  out.x = x;
  return out;
}

}  // namespace

InnerResult solve_inner(const Scenario& scenario, int k_rounds) {
  PprimeBuilder builder(scenario, k_rounds);
  return solve_inner_impl(builder, scenario);
}

// ---------------------------------------------------------------------------
// plan extraction and the K search

RoundPlan extract_plan(const PprimeBuilder& builder, const Eigen::VectorXd& x) {
  const Scenario& sc = builder.scenario();
  const int k_rounds = builder.k_rounds();
  const int n = sc.profile.num_devices;
  const double mbg =
      static_cast<double>(sc.profile.model_dim) * sc.profile.bits_per_grad_elem;
  RoundPlan plan;
  plan.rounds = k_rounds;
  plan.a_ml = x(builder.v_a("A_ML"));
  plan.a_do = x(builder.v_a("A_DO"));

  double omega_deficit = 0.0;
  for (int k = 0; k < k_rounds; ++k) {
    PlanRound r;
    r.epochs.resize(n);
    r.freq_hz.resize(n);
    r.batch.resize(n);
    r.rho.resize(n, n);
    r.phi.resize(n, n);
    for (int i = 0; i < n; ++i) {
      r.epochs(i) = x(builder.v_e(k, i));
      r.freq_hz(i) = x(builder.v_f(k, i));
      r.batch(i) = x(builder.v_batch(k, i));
      for (int j = 0; j < n; ++j) {
        r.rho(i, j) = x(builder.v_rho(k, i, j));
        r.phi(i, j) = x(builder.v_phi(k, i, j));
      }
    }
    // exact row-stochastic repair
    for (int i = 0; i < n; ++i) {
      r.rho.row(i) /= r.rho.row(i).sum();
      r.phi.row(i) /= r.phi.row(i).sum();
    }
    // binarize phi_nn at 0.5 and reroute dispersers onto keepers
    std::vector<int> keepers;
    for (int i = 0; i < n; ++i)
      if (r.phi(i, i) >= 0.5) keepers.push_back(i);
    if (keepers.empty()) {
      int best = 0;
      for (int i = 1; i < n; ++i)
        if (r.phi(i, i) > r.phi(best, best)) best = i;
      keepers.push_back(best);
    }
    std::vector<bool> is_keeper(static_cast<std::size_t>(n), false);
    for (int i : keepers) is_keeper[static_cast<std::size_t>(i)] = true;
    for (int i = 0; i < n; ++i) {
      if (is_keeper[static_cast<std::size_t>(i)]) {
        r.phi.row(i).setZero();
        r.phi(i, i) = 1.0;
        continue;
      }
      double mass = 0.0;
      for (int j : keepers) mass += r.phi(i, j);
      Eigen::VectorXd row = Eigen::VectorXd::Zero(n);
      if (mass > 0.0) {
        for (int j : keepers) row(j) = r.phi(i, j) / mass;
      } else {
        for (int j : keepers)
          row(j) = 1.0 / static_cast<double>(keepers.size());
      }
      r.phi.row(i) = row.transpose();
    }

    const Rates& rates_k = builder.round_rates()[static_cast<std::size_t>(k)];
    double t_m = 0.0, t_u = 0.0;
    for (int j = 0; j < n; ++j) {
      for (int i = 0; i < n; ++i) {
        if (i == j || r.phi(i, j) <= 0.0) continue;
        t_m = std::max(t_m, r.phi(i, j) * mbg / rates_k.d2d(i, j));
      }
      if (r.phi(j, j) > 0.0)
        t_u = std::max(t_u, mbg / rates_k.uplink(j));
    }
    const double old_total = x(builder.v_td(k)) + x(builder.v_tl(k)) +
                             x(builder.v_tm(k)) + x(builder.v_tu(k)) +
                             x(builder.v_omega(k));
    r.t_data = x(builder.v_td(k));
    r.t_compute = x(builder.v_tl(k));
    r.t_gradient = t_m;
    r.t_uplink = t_u;
    r.omega = old_total - (r.t_data + r.t_compute + r.t_gradient + r.t_uplink);
    if (r.omega < 0.0) {
      omega_deficit += -r.omega;
      r.omega = 0.0;
    }

    r.d_hat.resize(n);
    for (int j = 0; j < n; ++j) {
      double in = 0.0;
      for (int i = 0; i < n; ++i)
        in += r.rho(i, j) * sc.data_counts[static_cast<std::size_t>(i)];
      r.d_hat(j) = in;
    }
    r.e_sum = r.epochs.sum();
    r.e_avg = r.d_hat.dot(r.epochs) / sc.total_data();
    r.e_max = r.epochs.maxCoeff();
    r.chi = x(builder.v_chi(k));

    plan.a_mo.push_back(x(builder.v_a("A_MO", k)));
    plan.a_d.push_back(x(builder.v_a("A_D", k)));
    plan.a_sum.push_back(x(builder.v_a("A_Sum", k)));
    plan.a_avg.push_back(x(builder.v_a("A_Avg", k)));
    plan.a_b1.push_back(x(builder.v_a("A_B1", k)));
    plan.a_b2.push_back(x(builder.v_a("A_B2", k)));
    plan.per_round.push_back(std::move(r));
  }
  // settle any idle-time deficit created by binarization
  for (auto& r : plan.per_round) {
    if (omega_deficit <= 0.0) break;
    double take = std::min(r.omega, omega_deficit);
    r.omega -= take;
    omega_deficit -= take;
  }
  if (omega_deficit > 1e-6 * sc.t_ml)
    std::cerr << "extract_plan: binarization overran the window by "
              << omega_deficit << " s\n";
  return plan;
}

double plan_true_objective(const Scenario& sc, const RoundPlan& plan) {
  const int k_rounds = plan.rounds;
  const double k_d = static_cast<double>(k_rounds);
  const double n_dev = static_cast<double>(sc.profile.num_devices);
  const double oml = 1.0 - sc.lambda;
  const double beta = sc.constants.beta;
  const double theta = sc.constants.theta;
  const double sqrt_nk = std::sqrt(n_dev * k_d);
  const double d_total = sc.total_data();

  double ehat_max = 0.0, ebar_min = std::numeric_limits<double>::infinity();
  for (const auto& r : plan.per_round) {
    ehat_max = std::max(ehat_max, r.e_sum);
    ebar_min = std::min(ebar_min, r.e_avg);
  }

  double obj = 0.0;
  for (int k = 0; k < k_rounds; ++k) {
    const auto& r = plan.per_round[static_cast<std::size_t>(k)];
    RoundDecision dec;
    dec.epochs = r.epochs;
    dec.freq_hz = r.freq_hz;
    dec.batch = r.batch;
    dec.rho = r.rho;
    dec.phi = r.phi;
    dec.data_counts.resize(sc.profile.num_devices);
    for (int i = 0; i < sc.profile.num_devices; ++i)
      dec.data_counts(i) = sc.data_counts[static_cast<std::size_t>(i)];
    RoundEnergy en = round_energy(sc.profile, sc.rates_for_round(k + 1), dec);
    obj += sc.c1 / k_d * en.total;
    obj += sc.c2 / k_d *
           (r.t_data + r.t_compute + r.t_gradient + r.t_uplink);

    double ml = 2.0 * std::sqrt(ehat_max) * sc.f_initial /
                (ebar_min * sc.alpha * sqrt_nk * oml * k_d);
    ml += 2.0 * std::sqrt(r.e_sum) * r.omega * sc.delta_for_round(k + 1) /
          (sc.alpha * r.e_avg * sqrt_nk * oml);
    const double c_c = 8.0 * beta * beta * theta * theta * sc.alpha *
                       sc.alpha * n_dev / (k_d * k_d * oml);
    const double c_e = 4.0 * theta * theta * beta * sc.alpha *
                       std::sqrt(n_dev) / (k_d * std::sqrt(k_d) * oml);
    for (int i = 0; i < sc.profile.num_devices; ++i) {
      const std::size_t is = static_cast<std::size_t>(i);
      const double zt = sc.z_tilde(is);
      const double zh = sc.z_hat(is);
      ml += c_c / r.e_sum * r.epochs(i) / d_total *
            (zt * r.d_hat(i) / r.batch(i) - zh);
      ml += c_e * r.e_avg / std::sqrt(r.e_sum) * r.d_hat(i) /
            (d_total * d_total * r.epochs(i)) *
            (zt * r.d_hat(i) / r.batch(i) - zh);
    }
    ml += 8.0 * sc.constants.zeta2 * sc.alpha * sc.alpha * beta * beta *
          n_dev * r.e_max * r.e_max / (k_d * k_d * oml * r.e_sum);
    obj += sc.c3 / k_d * ml;
  }
  return obj;
}

std::pair<RoundPlan, SolverReport> plan(const Scenario& scenario) {
  SolverReport report;
  struct Best {
    int k = 0;
    double objective = std::numeric_limits<double>::infinity();
    RoundPlan plan;
    InnerResult inner;
    std::unique_ptr<PprimeBuilder> builder;
  } best;

  for (int k = 1; k <= scenario.k_cap; ++k) {
    std::unique_ptr<PprimeBuilder> builder;
    InnerResult inner;
    try {
      builder = std::make_unique<PprimeBuilder>(scenario, k);
      inner = solve_inner_impl(*builder, scenario);
    } catch (const InfeasibleSeed&) {
      continue;
    } catch (const Infeasible&) {
      continue;
    }
    RoundPlan candidate = extract_plan(*builder, inner.x);
    double obj = plan_true_objective(scenario, candidate);
    report.per_k_objective.emplace_back(k, obj);
    if (obj < best.objective) {
      best.k = k;
      best.objective = obj;
      best.plan = std::move(candidate);
      best.inner = std::move(inner);
      best.builder = std::move(builder);
    }
  }
  if (best.k == 0)
    throw Infeasible("no feasible round count in 1.." +
                     std::to_string(scenario.k_cap));
  report.chosen_k = best.k;
  report.objective_trace = best.inner.objective_trace;
  report.outer_iterations = best.inner.outer_iterations;
  report.penalty_escalations = best.inner.penalty_escalations;
  report.max_penalty_gap = best.inner.max_penalty_gap;
  report.kkt_residual = best.builder->kkt_residual(best.inner.x);
  return {std::move(best.plan), std::move(report)};
}

}  // namespace psl
