#include "psl/sampling.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace psl {

Allocation neyman_allocate(const std::vector<std::size_t>& sizes,
                           const std::vector<double>& stds,
                           std::size_t budget) {
  const std::size_t j_count = sizes.size();
  if (j_count == 0 || budget == 0)
    throw PslError("neyman_allocate: empty strata or zero budget");
  std::size_t capacity = 0;
  for (std::size_t s : sizes) capacity += s;
  if (budget > capacity)
    throw BudgetExceedsData("budget " + std::to_string(budget) +
                            " exceeds data " + std::to_string(capacity));

  std::vector<double> weight(j_count);
  double wsum = 0.0;
  for (std::size_t j = 0; j < j_count; ++j) {
    weight[j] = stds[j] * static_cast<double>(sizes[j]);
    wsum += weight[j];
  }
  if (wsum <= 0.0) {
    // degenerate: all stds zero, allocate proportionally to sizes
    for (std::size_t j = 0; j < j_count; ++j)
      weight[j] = static_cast<double>(sizes[j]);
    wsum = static_cast<double>(capacity);
  }

  std::vector<double> target(j_count);
  for (std::size_t j = 0; j < j_count; ++j)
    target[j] = static_cast<double>(budget) * weight[j] / wsum;

  // largest-remainder integerization against the stratum caps
  Allocation out;
  out.per_stratum.assign(j_count, 0);
  std::size_t assigned = 0;
  std::vector<std::pair<double, std::size_t>> remainder;
  for (std::size_t j = 0; j < j_count; ++j) {
    auto base = static_cast<std::size_t>(std::floor(target[j]));
    base = std::min(base, sizes[j]);
    out.per_stratum[j] = base;
    assigned += base;
    remainder.emplace_back(target[j] - std::floor(target[j]), j);
  }
  std::stable_sort(remainder.begin(), remainder.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (const auto& [frac, j] : remainder) {
    (void)frac;
    if (assigned >= budget) break;
    if (out.per_stratum[j] < sizes[j]) {
      ++out.per_stratum[j];
      ++assigned;
    }
  }
  // caps may leave budget unplaced; spill by descending sigma*S
  std::vector<std::size_t> by_weight(j_count);
  std::iota(by_weight.begin(), by_weight.end(), std::size_t{0});
  std::stable_sort(by_weight.begin(), by_weight.end(),
                   [&](std::size_t a, std::size_t b) { return weight[a] > weight[b]; });
  while (assigned < budget) {
    bool moved = false;
    for (std::size_t j : by_weight) {
      if (assigned >= budget) break;
      if (out.per_stratum[j] < sizes[j]) {
        ++out.per_stratum[j];
        ++assigned;
        moved = true;
      }
    }
    if (!moved) break;
  }
  // every nonempty stratum keeps at least one sample when the budget allows
  if (budget >= j_count) {
    for (std::size_t j = 0; j < j_count; ++j) {
      if (out.per_stratum[j] > 0) continue;
      for (auto it = by_weight.rbegin(); it != by_weight.rend(); ++it) {
        std::size_t k = *it;
        if (k != j && out.per_stratum[k] > 1) {
          --out.per_stratum[k];
          ++out.per_stratum[j];
          break;
        }
      }
    }
  }
  // single-unit exchange polish: the variance is separable convex in the
  // counts, so local exchange optimality is global over the integer simplex
  const std::size_t floor_each = budget >= j_count ? 1 : 0;
  std::vector<double> weight2(j_count);
  for (std::size_t j = 0; j < j_count; ++j) weight2[j] = weight[j] * weight[j];
  bool improved = true;
  while (improved) {
    improved = false;
    for (std::size_t from = 0; from < j_count; ++from) {
      if (out.per_stratum[from] <= floor_each) continue;
      const double bf = static_cast<double>(out.per_stratum[from]);
      const double gain = weight2[from] / (bf * (bf - 1.0));
      for (std::size_t to = 0; to < j_count; ++to) {
        if (to == from || out.per_stratum[to] >= sizes[to]) continue;
        const double bt = static_cast<double>(out.per_stratum[to]);
        const double cost = weight2[to] / (bt * (bt + 1.0));
        if (cost > gain * (1.0 + 1e-12)) {
          --out.per_stratum[from];
          ++out.per_stratum[to];
          improved = true;
          break;
        }
      }
      if (improved) break;
    }
  }
  out.total = std::accumulate(out.per_stratum.begin(), out.per_stratum.end(),
                              std::size_t{0});
  return out;
}

std::vector<TaggedPoint> draw_minibatch(const DeviceDataset& ds,
                                        const Allocation& alloc, Rng& rng) {
  const auto& strata = ds.strata();
  if (alloc.per_stratum.size() != strata.size())
    throw PslError("draw_minibatch: allocation/strata mismatch");
  std::vector<TaggedPoint> batch;
  batch.reserve(alloc.total);
  for (std::size_t j = 0; j < strata.size(); ++j) {
    const std::size_t take = alloc.per_stratum[j];
    const std::size_t have = strata[j].size();
    if (take > have) throw PslError("draw_minibatch: allocation exceeds stratum");
    // partial Fisher-Yates over index vector
    std::vector<std::size_t> idx(have);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    for (std::size_t t = 0; t < take; ++t) {
      std::size_t pick = t + static_cast<std::size_t>(rng.uniform_below(have - t));
      std::swap(idx[t], idx[pick]);
      batch.push_back({&strata[j].points[idx[t]], j});
    }
  }
  return batch;
}

double estimator_variance(const std::vector<std::size_t>& sizes,
                          const std::vector<double>& stds,
                          const Allocation& alloc, double d_hat) {
  double total = 0.0;
  for (std::size_t j = 0; j < sizes.size(); ++j) {
    const double s = static_cast<double>(sizes[j]);
    const double b = static_cast<double>(alloc.per_stratum[j]);
    if (alloc.per_stratum[j] == sizes[j]) continue;  // FPC kills the term
    if (alloc.per_stratum[j] == 0) {
      if (sizes[j] > 0 && stds[j] > 0.0)
        throw ZeroAllocation("stratum " + std::to_string(j) +
                             " has data but no samples");
      continue;
    }
    total += (1.0 - b / s) * (s * s) / (d_hat * d_hat) * (stds[j] * stds[j]) / b;
  }
  return total;
}

double estimator_variance_continuous(const std::vector<std::size_t>& sizes,
                                     const std::vector<double>& stds,
                                     const std::vector<double>& counts,
                                     double d_hat) {
  double total = 0.0;
  for (std::size_t j = 0; j < sizes.size(); ++j) {
    const double s = static_cast<double>(sizes[j]);
    const double var = stds[j] * stds[j];
    if (var <= 0.0) continue;
    if (counts[j] <= 0.0) throw ZeroAllocation("continuous count is zero");
    total += (1.0 / counts[j] - 1.0 / s) * (s * s) / (d_hat * d_hat) * var;
  }
  return total;
}

}  // namespace psl
