#include <benchmark/benchmark.h>

#include "psl/dataset.hpp"
#include "psl/gp.hpp"
#include "psl/rng.hpp"
#include "psl/sampling.hpp"

namespace {

psl::DeviceDataset random_dataset(int points, std::uint64_t seed) {
  psl::Rng rng(seed);
  std::vector<psl::DataPoint> pts;
  for (int i = 0; i < points; ++i) {
    psl::DataPoint p;
    p.features = Eigen::VectorXd(4);
    for (int d = 0; d < 4; ++d) p.features(d) = rng.normal();
    p.label = static_cast<int>(rng.uniform_below(3));
    pts.push_back(std::move(p));
  }
  return psl::DeviceDataset::build(0, std::move(pts), 32, 2);
}

void BM_OnlineArrival(benchmark::State& state) {
  psl::Rng rng(7);
  auto ds = random_dataset(256, 1);
  for (auto _ : state) {
    psl::DataPoint p;
    p.features = Eigen::VectorXd(4);
    for (int d = 0; d < 4; ++d) p.features(d) = rng.normal();
    p.label = static_cast<int>(rng.uniform_below(3));
    ds.assign_arrival(std::move(p));
    benchmark::DoNotOptimize(ds.total());
  }
}
BENCHMARK(BM_OnlineArrival);

void BM_NeymanAllocate(benchmark::State& state) {
  std::vector<std::size_t> sizes;
  std::vector<double> stds;
  psl::Rng rng(9);
  for (int j = 0; j < static_cast<int>(state.range(0)); ++j) {
    sizes.push_back(8 + rng.uniform_below(24));
    stds.push_back(rng.uniform(0.1, 4.0));
  }
  for (auto _ : state) {
    auto a = psl::neyman_allocate(sizes, stds, 16);
    benchmark::DoNotOptimize(a.total);
  }
}
BENCHMARK(BM_NeymanAllocate)->Arg(4)->Arg(16)->Arg(64);

void BM_AgmCondense(benchmark::State& state) {
  psl::Rng rng(11);
  psl::gp::VarTable table;
  psl::gp::Posynomial g;
  const int n = static_cast<int>(state.range(0));
  for (int v = 0; v < n; ++v) table.intern("y" + std::to_string(v));
  for (int t = 0; t < n; ++t) {
    psl::gp::Monomial m(std::exp(rng.uniform(-1.0, 1.0)));
    for (int v = 0; v < n; ++v) m.mul(v, rng.uniform(-1.0, 1.0));
    g += m;
  }
  Eigen::VectorXd anchor = Eigen::VectorXd::Ones(n);
  for (auto _ : state) {
    auto mono = psl::gp::agm_condense(g, anchor);
    benchmark::DoNotOptimize(mono.coeff);
  }
}
BENCHMARK(BM_AgmCondense)->Arg(8)->Arg(32)->Arg(128);

}  // namespace

BENCHMARK_MAIN();
