#pragma once

#include <cstddef>
#include <vector>

#include "psl/dataset.hpp"
#include "psl/rng.hpp"

namespace psl {

struct Allocation {
  std::vector<std::size_t> per_stratum;  // B_{n,j}, aligned with strata order
  std::size_t total = 0;                 // B_n
};

// Neyman split of a minibatch budget across strata: continuous targets
// B_j = B * sigma_j S_j / sum_i sigma_i S_i, integerized by largest
// remainder and clamped to [1, S_j] (excess moved along descending
// sigma*S). All-zero stds fall back to allocation proportional to sizes.
// Throws BudgetExceedsData when budget > sum S_j.
Allocation neyman_allocate(const std::vector<std::size_t>& sizes,
                           const std::vector<double>& stds,
                           std::size_t budget);

struct TaggedPoint {
  const DataPoint* point;
  std::size_t stratum_index;  // position in ds.strata()
};

// Uniform without-replacement draw inside each stratum; the allocation is
// held fixed across local iterations, the draw itself is fresh per call.
std::vector<TaggedPoint> draw_minibatch(const DeviceDataset& ds,
                                        const Allocation& alloc, Rng& rng);

// Variance of the stratified estimator under a finite population:
//   sum_j (1 - B_j/S_j) * S_j^2 / Dhat^2 * var_j / B_j
// with var_j the per-stratum sample variance proxy (stds squared). Strata
// sampled in full contribute zero. Throws ZeroAllocation when a stratum with
// data and positive std receives no samples.
double estimator_variance(const std::vector<std::size_t>& sizes,
                          const std::vector<double>& stds,
                          const Allocation& alloc, double d_hat);

// Same quantity for continuous (possibly fractional) per-stratum counts;
// used by the Neyman optimality checks.
double estimator_variance_continuous(const std::vector<std::size_t>& sizes,
                                     const std::vector<double>& stds,
                                     const std::vector<double>& counts,
                                     double d_hat);

}  // namespace psl
