#include "psl/learning.hpp"

#include <cmath>
#include <limits>

namespace psl {

LossModel LossModel::quadratic(int feat_dim) {
  LossModel m;
  m.kind_ = Kind::Quadratic;
  m.feat_dim_ = feat_dim;
  m.dim_ = feat_dim;
  m.classes_ = 1;
  return m;
}

LossModel LossModel::softmax(int classes, int feat_dim, double l2) {
  LossModel m;
  m.kind_ = Kind::Softmax;
  m.classes_ = classes;
  m.feat_dim_ = feat_dim;
  m.dim_ = classes * feat_dim;
  m.l2_ = l2;
  return m;
}

double LossModel::point_loss(const Eigen::VectorXd& w,
                             const DataPoint& d) const {
  if (kind_ == Kind::Quadratic) {
    double r = w.dot(d.features) - static_cast<double>(d.label);
    return 0.5 * r * r;
  }
  Eigen::Map<const Eigen::MatrixXd> wm(w.data(), feat_dim_, classes_);
  Eigen::VectorXd logits = wm.transpose() * d.features;
  double mx = logits.maxCoeff();
  double lse = mx + std::log((logits.array() - mx).exp().sum());
  return lse - logits(d.label) + 0.5 * l2_ * w.squaredNorm();
}

Eigen::VectorXd LossModel::point_grad(const Eigen::VectorXd& w,
                                      const DataPoint& d) const {
  if (kind_ == Kind::Quadratic) {
    double r = w.dot(d.features) - static_cast<double>(d.label);
    return r * d.features;
  }
  Eigen::Map<const Eigen::MatrixXd> wm(w.data(), feat_dim_, classes_);
  Eigen::VectorXd logits = wm.transpose() * d.features;
  double mx = logits.maxCoeff();
  Eigen::VectorXd p = (logits.array() - mx).exp();
  p /= p.sum();
  p(d.label) -= 1.0;
  Eigen::VectorXd g(dim_);
  Eigen::Map<Eigen::MatrixXd> gm(g.data(), feat_dim_, classes_);
  gm = d.features * p.transpose();
  g += l2_ * w;
  return g;
}

double LossModel::dataset_loss(const Eigen::VectorXd& w,
                               const DeviceDataset& ds) const {
  double sum = 0.0;
  std::size_t count = 0;
  for (const auto& s : ds.strata()) {
    for (const auto& p : s.points) {
      sum += point_loss(w, p);
      ++count;
    }
  }
  if (count == 0) throw EmptyDataset("dataset_loss");
  return sum / static_cast<double>(count);
}

Eigen::VectorXd LossModel::dataset_grad(const Eigen::VectorXd& w,
                                        const DeviceDataset& ds) const {
  Eigen::VectorXd g = Eigen::VectorXd::Zero(w.size());
  std::size_t count = 0;
  for (const auto& s : ds.strata()) {
    for (const auto& p : s.points) {
      g += point_grad(w, p);
      ++count;
    }
  }
  if (count == 0) throw EmptyDataset("dataset_grad");
  return g / static_cast<double>(count);
}

double TrainingSchedule::step_size(std::size_t e_sum,
                                   std::size_t num_devices) const {
  return step_const /
         std::sqrt(static_cast<double>(rounds) * static_cast<double>(e_sum) /
                   static_cast<double>(num_devices));
}

LocalRound local_sgd_round(const Eigen::VectorXd& w0, const DeviceDataset& ds,
                           const Allocation& alloc, std::size_t epochs,
                           double eta, const LossModel& loss, Rng& rng) {
  if (epochs < 1) throw PslError("local_sgd_round: epochs < 1");
  if (eta <= 0.0) throw PslError("local_sgd_round: eta <= 0");
  const double dn = static_cast<double>(ds.total());
  Eigen::VectorXd w = w0;
  for (std::size_t e = 0; e < epochs; ++e) {
    auto batch = draw_minibatch(ds, alloc, rng);
    Eigen::VectorXd g = Eigen::VectorXd::Zero(w.size());
    for (const auto& tp : batch) {
      const auto& stratum = ds.strata()[tp.stratum_index];
      const double weight = static_cast<double>(stratum.size()) /
                            static_cast<double>(alloc.per_stratum[tp.stratum_index]);
      g += weight * loss.point_grad(w, *tp.point);
    }
    w -= (eta / dn) * g;
  }
  LocalRound out;
  out.accumulated_gradient = (w0 - w) / eta;
  out.w_final = std::move(w);
  return out;
}

Eigen::VectorXd aggregate_global(const std::vector<DeviceUpdate>& devices,
                                 double total_data, const Eigen::VectorXd& w,
                                 double eta) {
  double outer = 0.0;
  for (const auto& d : devices) outer += d.d_hat * d.epochs / total_data;
  Eigen::VectorXd inner = Eigen::VectorXd::Zero(w.size());
  for (const auto& d : devices)
    inner += (d.d_hat / (total_data * d.epochs)) * d.accumulated_gradient;
  return w - eta * outer * inner;
}

double measure_drift(double dn_prev, double loss_prev, double d_prev,
                     double dn_cur, double loss_cur, double d_cur) {
  return (dn_cur / d_cur) * loss_cur - (dn_prev / d_prev) * loss_prev;
}

AnalysisConstants estimate_constants(
    const std::vector<DeviceDataset>& datasets, const LossModel& loss,
    const std::vector<Eigen::VectorXd>& probes) {
  if (probes.size() < 2)
    throw PslError("estimate_constants: need at least two probe models");
  AnalysisConstants c;

  double total = 0.0;
  for (const auto& ds : datasets) total += static_cast<double>(ds.total());

  // beta: exact for the quadratic loss (Hessian of F_n is X^T X / D_n),
  // otherwise the max gradient-difference ratio over probe pairs
  if (loss.kind() == LossModel::Kind::Quadratic) {
    for (const auto& ds : datasets) {
      Eigen::MatrixXd h = Eigen::MatrixXd::Zero(loss.dim(), loss.dim());
      std::size_t count = 0;
      for (const auto& s : ds.strata())
        for (const auto& p : s.points) {
          h.noalias() += p.features * p.features.transpose();
          ++count;
        }
      if (count == 0) continue;
      h /= static_cast<double>(count);
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(h);
      c.beta = std::max(c.beta, eig.eigenvalues().maxCoeff());
    }
  } else {
    for (const auto& ds : datasets) {
      for (std::size_t i = 0; i < probes.size(); ++i) {
        for (std::size_t j = i + 1; j < probes.size(); ++j) {
          double dw = (probes[i] - probes[j]).norm();
          if (dw <= 0.0) continue;
          double dg = (loss.dataset_grad(probes[i], ds) -
                       loss.dataset_grad(probes[j], ds))
                          .norm();
          c.beta = std::max(c.beta, dg / dw);
        }
      }
    }
  }

  // theta: pairwise over points within each device, gradient vs feature gap
  for (const auto& ds : datasets) {
    std::vector<const DataPoint*> pts;
    for (const auto& s : ds.strata())
      for (const auto& p : s.points) pts.push_back(&p);
    double theta_n = 0.0;
    for (const auto& w : probes) {
      for (std::size_t i = 0; i < pts.size(); ++i) {
        for (std::size_t j = i + 1; j < pts.size(); ++j) {
          double dd = (pts[i]->features - pts[j]->features).norm();
          if (dd <= 1e-12) continue;
          double dg = (loss.point_grad(w, *pts[i]) -
                       loss.point_grad(w, *pts[j]))
                          .norm();
          theta_n = std::max(theta_n, dg / dd);
        }
      }
    }
    c.theta = std::max(c.theta, theta_n);
  }

  // (zeta1, zeta2): smallest zeta1 >= 1 covering all probes where the
  // weighted-gradient norm is informative, then the smallest zeta2 mopping
  // up the rest
  double zeta1 = 1.0;
  std::vector<std::pair<double, double>> lhs_rhs;
  for (const auto& w : probes) {
    double lhs = 0.0;
    Eigen::VectorXd mix = Eigen::VectorXd::Zero(loss.dim());
    for (const auto& ds : datasets) {
      double a = static_cast<double>(ds.total()) / total;
      Eigen::VectorXd g = loss.dataset_grad(w, ds);
      lhs += a * g.squaredNorm();
      mix += a * g;
    }
    double rhs = mix.squaredNorm();
    lhs_rhs.emplace_back(lhs, rhs);
    if (rhs > 1e-12) zeta1 = std::max(zeta1, lhs / rhs);
  }
  double zeta2 = 0.0;
  for (const auto& [lhs, rhs] : lhs_rhs)
    zeta2 = std::max(zeta2, lhs - zeta1 * rhs);
  c.zeta1 = zeta1;
  c.zeta2 = std::max(zeta2, 0.0);
  return c;
}

double step_size_cap(const AnalysisConstants& constants, std::size_t e_max,
                     double lambda, double e_avg_term, bool appendix_variant) {
  const double beta = constants.beta;
  double cap = std::numeric_limits<double>::infinity();
  if (e_max > 1) {
    const double ee = static_cast<double>(e_max) *
                      (static_cast<double>(e_max) - 1.0);
    const double denom = appendix_variant
                             ? (constants.zeta1 + lambda) * ee
                             : constants.zeta1 * (beta * beta + lambda) * ee;
    cap = (1.0 / (2.0 * beta)) * std::sqrt(lambda / denom);
  }
  cap = std::min(cap, 1.0 / (2.0 * beta * e_avg_term));
  return cap;
}

bool check_step_size(double eta, const AnalysisConstants& constants,
                     std::size_t e_max, double lambda, double e_avg_term,
                     bool appendix_variant) {
  return eta <=
         step_size_cap(constants, e_max, lambda, e_avg_term, appendix_variant);
}

}  // namespace psl
