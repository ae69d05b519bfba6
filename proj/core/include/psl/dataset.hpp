#pragma once

#include <Eigen/Dense>
#include <cstddef>
#include <string>
#include <vector>

#include "psl/errors.hpp"

namespace psl {

struct DataPoint {
  Eigen::VectorXd features;
  int label = 0;
};

// Count, mean vector and scalar sample variance of a point set. The variance
// is the squared-norm form var = sum ||d - mean||^2 / (count - 1); it is
// defined as 0 for empty and singleton sets.
struct SetStats {
  std::size_t count = 0;
  Eigen::VectorXd mean;
  double var = 0.0;

  static SetStats of(const std::vector<Eigen::VectorXd>& pts);
};

// Online update of (mean, variance) under batch arrivals A and departures D,
// with D a sub-multiset of the old set and A disjoint from it.
// Throws SizeUnderflow when |S|+|A|-|D| < 1.
SetStats merge_stats(const SetStats& old_set, const SetStats& arrivals,
                     const SetStats& departures);

struct Stratum {
  int id = 0;
  int label = 0;
  std::vector<DataPoint> points;  // insertion order preserved
  Eigen::VectorXd mean;
  double var = 0.0;  // sample variance, squared-norm form

  std::size_t size() const { return points.size(); }
  double sample_std() const { return var > 0.0 ? std::sqrt(var) : 0.0; }
  SetStats stats() const;
  void recompute_stats();
};

// Per-device partitioned dataset with online statistics and the arrival /
// departure / offloading policies. Single writer per instance.
class DeviceDataset {
 public:
  DeviceDataset(int device_id, std::size_t s_max, std::size_t s_min);

  // Initial stratification: one stratum per label, then repeated splits
  // until every stratum fits under s_max.
  static DeviceDataset build(int device_id, std::vector<DataPoint> points,
                             std::size_t s_max, std::size_t s_min);

  int device_id() const { return device_id_; }
  std::size_t total() const;
  std::size_t s_max() const { return s_max_; }
  std::size_t s_min() const { return s_min_; }
  const std::vector<Stratum>& strata() const { return strata_; }
  const Stratum* find(int stratum_id) const;

  // Routes a point to the nearest-mean stratum of its label (new stratum for
  // a new label); splits the receiver when it reaches s_max. Returns the id
  // of the stratum the point landed in (pre-split id).
  int assign_arrival(DataPoint d);

  // Removes one point by stratum id and insertion index; deletes the stratum
  // if it empties, otherwise applies the s_min merge rule.
  DataPoint remove_point(int stratum_id, std::size_t index);

  // Merges stratum j into its nearest same-label peer when its size has
  // fallen below s_min and such a peer exists.
  void maybe_merge(int stratum_id);

  // Point the device would offload next: from the largest stratum (ties ->
  // lowest id), the point closest to the stratum mean (ties -> lowest
  // insertion index). Throws EmptyDataset.
  std::pair<int, std::size_t> select_offload_point() const;
  DataPoint take_offload_point();

  std::string to_json() const;
  static DeviceDataset from_json(const std::string& text, std::size_t s_max,
                                 std::size_t s_min);

 private:
  void split_stratum(std::size_t idx);
  std::size_t index_of(int stratum_id) const;

  int device_id_;
  std::size_t s_max_;
  std::size_t s_min_;
  int next_id_ = 0;
  std::vector<Stratum> strata_;
};

// Data dispersion step: device n sends round(rho[n][m] * D_n) points to each
// m != n, selected by the offload rule; receivers ingest through
// assign_arrival. Rows of rho must sum to 1 (+-1e-9) with nonnegative
// entries, else InvalidMatrix. Fractional counts round half-to-even and any
// residual stays at the sender.
void apply_dispersion(std::vector<DeviceDataset>& datasets,
                      const Eigen::MatrixXd& rho);

}  // namespace psl
