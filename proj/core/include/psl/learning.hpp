#pragma once

#include <Eigen/Dense>
#include <optional>
#include <vector>

#include "psl/dataset.hpp"
#include "psl/sampling.hpp"

namespace psl {

struct ModelState {
  Eigen::VectorXd w;
};

// Convex point losses used by the desk-scale tasks.
//  - quadratic: f(w, d) = 0.5 * (x.w - y)^2 with y the label as a real value
//  - softmax:   multinomial logistic over `classes` with L2 weight decay,
//               w laid out class-major as classes x feat_dim
class LossModel {
 public:
  enum class Kind { Quadratic, Softmax };

  static LossModel quadratic(int feat_dim);
  static LossModel softmax(int classes, int feat_dim, double l2);

  Kind kind() const { return kind_; }
  int dim() const { return dim_; }
  int classes() const { return classes_; }

  double point_loss(const Eigen::VectorXd& w, const DataPoint& d) const;
  Eigen::VectorXd point_grad(const Eigen::VectorXd& w, const DataPoint& d) const;

  double dataset_loss(const Eigen::VectorXd& w, const DeviceDataset& ds) const;
  Eigen::VectorXd dataset_grad(const Eigen::VectorXd& w,
                               const DeviceDataset& ds) const;

 private:
  Kind kind_ = Kind::Quadratic;
  int dim_ = 0;
  int classes_ = 1;
  int feat_dim_ = 0;
  double l2_ = 0.0;
};

struct TrainingSchedule {
  std::size_t rounds = 1;              // K
  double step_const = 0.1;             // alpha
  std::vector<std::size_t> epochs;     // e_n for the current round

  // eta_k = alpha / sqrt(K * e_sum / N)
  double step_size(std::size_t e_sum, std::size_t num_devices) const;
};

struct AnalysisConstants {
  double beta = 0.0;     // smoothness
  double theta = 0.0;    // local data variability
  double zeta1 = 1.0;    // dissimilarity, >= 1
  double zeta2 = 0.0;    // dissimilarity offset
  double lambda = 0.9;   // Lambda^{(k)} surrogate, in (0, 1)
};

struct LocalRound {
  Eigen::VectorXd w_final;
  Eigen::VectorXd accumulated_gradient;  // (w0 - w_final) / eta
};

// e_n stratified-SGD iterations with the S_j/B_j inner weights and 1/D_n
// outer weight; the allocation stays fixed, the draw is fresh per iteration.
LocalRound local_sgd_round(const Eigen::VectorXd& w0, const DeviceDataset& ds,
                           const Allocation& alloc, std::size_t epochs,
                           double eta, const LossModel& loss, Rng& rng);

struct DeviceUpdate {
  double d_hat = 0.0;                   // post-dispersion count
  double epochs = 1.0;                  // e_n
  Eigen::VectorXd accumulated_gradient; // \bar{grad F}_n
};

// Global update: w' = w - eta * (sum_n' Dhat_n' e_n' / D) *
//                          sum_n (Dhat_n / (D e_n)) * gbar_n
Eigen::VectorXd aggregate_global(const std::vector<DeviceUpdate>& devices,
                                 double total_data, const Eigen::VectorXd& w,
                                 double eta);

// Per-tick drift of one device's weighted loss at fixed parameters.
double measure_drift(double dn_prev, double loss_prev, double d_prev,
                     double dn_cur, double loss_cur, double d_cur);

// Probe-based estimates of the analysis constants. beta uses the exact
// Hessian norm for the quadratic loss; theta scans point pairs; the
// dissimilarity pair is the least-violation fit over the probes with weights
// a_n = Dhat_n / D (lower estimates of the true suprema).
AnalysisConstants estimate_constants(const std::vector<DeviceDataset>& datasets,
                                     const LossModel& loss,
                                     const std::vector<Eigen::VectorXd>& probes);

// Theorem step-size cap. The published statement divides by
// zeta1*(beta^2 + Lambda); the appendix derivation uses (zeta1 + Lambda).
// `appendix_variant` switches to the latter. e_max = 1 disables the first
// branch.
bool check_step_size(double eta, const AnalysisConstants& constants,
                     std::size_t e_max, double lambda, double e_avg_term,
                     bool appendix_variant = false);
double step_size_cap(const AnalysisConstants& constants, std::size_t e_max,
                     double lambda, double e_avg_term,
                     bool appendix_variant = false);

}  // namespace psl
