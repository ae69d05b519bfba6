#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include "psl/dataset.hpp"
#include "psl/learning.hpp"
#include "psl/planner.hpp"

namespace psl {

// Synthetic non-iid task: Gaussian-mixture features, a few labels per device.
struct DatasetSpec {
  int classes = 10;
  int feat_dim = 5;
  int labels_per_device = 3;
  double points_mean = 60.0;
  double points_std = 8.0;
  double cluster_radius = 3.0;
  double cluster_spread = 1.0;
  std::size_t s_max = 16;
  std::size_t s_min = 2;
};

// Per-second dataset mutations; applied only inside idle windows. The
// optional per-round scale modulates all three rates during round k's idle
// window (last entry repeats), giving time-varying drift profiles.
struct DriftSpec {
  double arrivals_per_sec = 0.0;
  double departures_per_sec = 0.0;
  double mean_shift_per_sec = 0.0;
  std::vector<double> round_scale;

  double scale_for_round(int k) const {  // 1-indexed
    if (round_scale.empty()) return 1.0;
    std::size_t idx = std::min<std::size_t>(static_cast<std::size_t>(k - 1),
                                            round_scale.size() - 1);
    return round_scale[idx];
  }
};

enum class SamplingPolicy { Neyman, Uniform, FullBatch };

struct SimConfig {
  DatasetSpec dataset;
  DriftSpec drift;
  SamplingPolicy sampling = SamplingPolicy::Neyman;
  double l2 = 1e-3;
  double alpha = 0.1;           // step-size constant
  bool overrun_is_error = false;
  bool use_quadratic = false;   // quadratic task instead of softmax
};

struct RoundTrace {
  int k = 0;
  double t_start = 0.0;
  double omega = 0.0;
  double t_data = 0.0, t_compute = 0.0, t_gradient = 0.0, t_uplink = 0.0;
  double energy_j = 0.0;
  double loss = 0.0;
  double grad_norm_sq = 0.0;
  double drift = 0.0;  // measured Delta^{(k)}
};

struct SimResult {
  std::vector<RoundTrace> rounds;
  double final_loss = 0.0;
  Eigen::VectorXd w_final;
};

std::vector<DeviceDataset> generate_datasets(const Scenario& scenario,
                                             const DatasetSpec& spec,
                                             std::uint64_t seed);

// Executes the plan: idle ticks with drift injection and per-tick drift
// measurement, data dispersion, stratified local SGD, gradient dispersion
// with local condensation (verified against the direct aggregation each
// round), uplink and global update.
SimResult run(const Scenario& scenario, const RoundPlan& plan,
              const SimConfig& config, std::uint64_t seed);

struct PolicyRow {
  std::string policy;
  std::uint64_t seed = 0;
  double final_loss = 0.0;
  std::vector<double> loss_curve;
};

std::vector<PolicyRow> compare_policies(const Scenario& scenario,
                                        const RoundPlan& plan,
                                        const SimConfig& base,
                                        const std::vector<SamplingPolicy>& policies,
                                        const std::vector<std::uint64_t>& seeds);

std::string policy_name(SamplingPolicy p);
std::string trace_csv(const std::vector<RoundTrace>& rounds);

}  // namespace psl
