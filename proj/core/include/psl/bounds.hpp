#pragma once

#include <optional>
#include <vector>

#include "psl/errors.hpp"
#include "psl/learning.hpp"

namespace psl {

// Everything the bound evaluators need about one global round.
struct RoundParams {
  double omega = 0.0;   // idle seconds before this round
  double delta = 0.0;   // summed per-device drift over that idle window
  double lambda = 0.9;  // Lambda^{(k)}
  std::vector<double> epochs;  // e_n
  std::vector<double> d_hat;   // post-dispersion counts
  double total_data = 0.0;     // D^{(k)}
  std::vector<std::vector<double>> strata_sizes;  // S_{n,j}
  std::vector<std::vector<double>> strata_stds;   // sigma~_{n,j}
  std::vector<std::vector<double>> batch_per_stratum;  // B_{n,j}
  std::vector<double> batch;                           // B_n
  std::optional<double> loss_gain;  // consecutive-loss gain for term (a)
  double eta = 0.0;  // step size; derived from alpha when 0

  double e_sum() const;
  double e_avg() const;  // data-weighted mean, sum Dhat_n e_n / D
  double e_max() const;
};

struct BoundParams {
  AnalysisConstants constants;
  std::size_t rounds = 1;  // K
  int num_devices = 1;     // N
  double alpha = 0.1;      // step-size constant
  double f_initial = 0.0;  // F^{(-1)}(w^0)
  double f_star = 0.0;     // F^{(K)*}; the planner relaxation keeps it at 0
  double lambda_max = 0.9;
  std::vector<RoundParams> per_round;

  // caps; any nonpositive entry is derived from the per-round data
  double e_hat_max = 0.0;  // cap on e_sum
  double e_hat_min = 0.0;  // floor on e_sum
  double e_bar_min = 0.0;  // floor on e_avg
  double e_bar_max = 0.0;  // cap on e_avg
  double sigma_max = 0.0;  // cap on the per-device sampling noise
  double e_max_cap = 0.0;  // cap on e_max
  double gamma = -1.0;     // idle-period budget constant
  bool skip_step_check = false;
};

enum class BoundMode {
  General,       // theorem form, needs realized loss gains
  Cor1,          // step-size substitution
  Cor2,          // unified caps, O(1/sqrt(K))
  Neyman,        // optimal-sampling substitution, feeds the planner
  NeymanCapped,  // Neyman form under the Cor1-style caps
  NeymanNoise,   // Neyman form under unified noise caps
};

struct BoundBreakdown {
  double term_a = 0.0;
  double term_b = 0.0;
  double term_c = 0.0;
  double term_d = 0.0;
  double term_e = 0.0;
  double total = 0.0;
};

BoundBreakdown evaluate_bound(const BoundParams& params, BoundMode mode);

// Sampling-noise bracket under the optimal-sampling substitution:
//   (1/Dhat^2) [ (1/B) (sum_j sigma_j S_j)^2 - sum_j S_j sigma_j^2 ].
// Tiny negative values (|v| < 1e-12) clamp to zero.
double neyman_variance_term(const std::vector<double>& sizes,
                            const std::vector<double>& stds, double batch,
                            double d_hat);

// Theorem-form per-device sampling noise,
//   sum_j (1 - B_j/S_j) (S_j / Dhat^2) ((S_j - 1) sigma_j^2 / B_j).
double stratified_noise_term(const std::vector<double>& sizes,
                             const std::vector<double>& stds,
                             const std::vector<double>& batch_per_stratum,
                             double d_hat);

BoundMode parse_bound_mode(const std::string& name);

}  // namespace psl
