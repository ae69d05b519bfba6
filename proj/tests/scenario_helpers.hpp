#pragma once

#include "psl/planner.hpp"
#include "psl/simulator.hpp"

namespace psl::testing {

// Desk-scale scenario shared by the planner/simulator tests: profile drawn
// in a 25 m disk, heterogeneous processing costs, warm-up stratum caps from
// the synthetic task.
inline Scenario make_scenario(int devices, double t_ml, std::uint64_t seed,
                              int k_cap = 2) {
  Scenario sc;
  Rng rng = Rng(seed).fork(0x706f73ull);
  sc.profile = NetworkProfile::sample_disk(devices, 25.0, rng);
  sc.seed = seed;
  sc.t_ml = t_ml;
  sc.k_cap = k_cap;
  sc.c1 = 1e-9;
  sc.c2 = 1e-3;
  sc.c3 = 1.0;
  sc.penalties = {1e6, 1e6, 1e6, 1e6, 1e6, 1e6, 1e6, 1e6};
  sc.alpha = 0.05;
  sc.lambda = 0.9;
  sc.constants.beta = 1.0;
  sc.constants.theta = 3.0;
  sc.constants.zeta1 = 1.0;
  sc.constants.zeta2 = 1e-5;
  sc.f_initial = 2.4;
  sc.delta_forecast = {0.1};
  sc.e_cap = 25.0;

  DatasetSpec spec;
  spec.points_mean = 40.0;
  spec.points_std = 5.0;
  std::vector<DeviceDataset> warm = generate_datasets(sc, spec, seed);
  for (const auto& ds : warm) {
    sc.data_counts.push_back(static_cast<double>(ds.total()));
    std::vector<double> rel, stds;
    double total = static_cast<double>(ds.total());
    for (const auto& s : ds.strata()) {
      rel.push_back(std::min(1.0, 1.2 * static_cast<double>(s.size()) / total));
      stds.push_back(1.2 * s.sample_std());
    }
    sc.strata_rel_caps.push_back(std::move(rel));
    sc.strata_std_caps.push_back(std::move(stds));
  }
  return sc;
}

inline SimConfig make_sim_config() {
  SimConfig cfg;
  cfg.dataset.points_mean = 40.0;
  cfg.dataset.points_std = 5.0;
  cfg.alpha = 0.05;
  return cfg;
}

}  // namespace psl::testing
