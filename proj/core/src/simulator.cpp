#include "psl/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <sstream>

namespace psl {

namespace {

std::size_t poisson_draw(Rng& rng, double lambda) {
  if (lambda <= 0.0) return 0;
  // Knuth; fine for the small per-second rates used here
  double l = std::exp(-lambda);
  std::size_t k = 0;
  double p = 1.0;
  do {
    ++k;
    p *= rng.uniform();
  } while (p > l);
  return k - 1;
}

struct TaskContext {
  LossModel loss;
  std::vector<Eigen::VectorXd> class_means;
  std::vector<std::vector<int>> device_labels;
};

TaskContext make_task(const Scenario& sc, const DatasetSpec& spec,
                      std::uint64_t seed, bool quadratic, double l2) {
  TaskContext ctx{quadratic
                      ? LossModel::quadratic(spec.feat_dim)
                      : LossModel::softmax(spec.classes, spec.feat_dim, l2),
                  {},
                  {}};
  Rng rng = Rng(seed).fork(0x7461736bull);
  ctx.class_means.resize(static_cast<std::size_t>(spec.classes));
  for (auto& m : ctx.class_means) {
    m.resize(spec.feat_dim);
    for (int i = 0; i < spec.feat_dim; ++i) m(i) = rng.normal();
    if (m.norm() > 0.0) m *= spec.cluster_radius / m.norm();
  }
  ctx.device_labels.resize(static_cast<std::size_t>(sc.profile.num_devices));
  for (int n = 0; n < sc.profile.num_devices; ++n) {
    std::vector<int> pool(static_cast<std::size_t>(spec.classes));
    for (int c = 0; c < spec.classes; ++c) pool[static_cast<std::size_t>(c)] = c;
    Rng dr = rng.fork(static_cast<std::uint64_t>(n) + 17);
    for (int pick = 0; pick < spec.labels_per_device && !pool.empty(); ++pick) {
      std::size_t at = static_cast<std::size_t>(dr.uniform_below(pool.size()));
      ctx.device_labels[static_cast<std::size_t>(n)].push_back(pool[at]);
      pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(at));
    }
  }
  return ctx;
}

DataPoint sample_point(const TaskContext& ctx, const DatasetSpec& spec,
                       int label, const Eigen::VectorXd& shift, Rng& rng) {
  DataPoint p;
  p.label = label;
  p.features = ctx.class_means[static_cast<std::size_t>(label)] + shift;
  for (int i = 0; i < spec.feat_dim; ++i)
    p.features(i) += spec.cluster_spread * rng.normal();
  return p;
}

Allocation allocation_for(const DeviceDataset& ds, std::size_t budget,
                          SamplingPolicy policy) {
  std::vector<std::size_t> sizes;
  std::vector<double> stds;
  for (const auto& s : ds.strata()) {
    sizes.push_back(s.size());
    stds.push_back(s.sample_std());
  }
  std::size_t capacity = ds.total();
  budget = std::min(budget, capacity);
  budget = std::max<std::size_t>(budget, 1);
  switch (policy) {
    case SamplingPolicy::FullBatch: {
      Allocation a;
      a.per_stratum = sizes;
      a.total = capacity;
      return a;
    }
    case SamplingPolicy::Uniform: {
      // proportional to stratum sizes = plain uniform sampling
      std::vector<double> ones(sizes.size(), 1.0);
      return neyman_allocate(sizes, ones, budget);
    }
    case SamplingPolicy::Neyman:
      return neyman_allocate(sizes, stds, budget);
  }
  throw PslError("allocation_for: bad policy");
}

}  // namespace

std::vector<DeviceDataset> generate_datasets(const Scenario& sc,
                                             const DatasetSpec& spec,
                                             std::uint64_t seed) {
  TaskContext ctx = make_task(sc, spec, seed, false, 0.0);
  Rng rng = Rng(seed).fork(0x64617461ull);
  std::vector<DeviceDataset> out;
  Eigen::VectorXd no_shift = Eigen::VectorXd::Zero(spec.feat_dim);
  for (int n = 0; n < sc.profile.num_devices; ++n) {
    Rng dr = rng.fork(static_cast<std::uint64_t>(n));
    auto count = static_cast<std::size_t>(std::max(
        4.0, std::round(spec.points_mean + spec.points_std * dr.normal())));
    std::vector<DataPoint> pts;
    const auto& labels = ctx.device_labels[static_cast<std::size_t>(n)];
    for (std::size_t i = 0; i < count; ++i) {
      int label = labels[static_cast<std::size_t>(dr.uniform_below(labels.size()))];
      pts.push_back(sample_point(ctx, spec, label, no_shift, dr));
    }
    out.push_back(
        DeviceDataset::build(n, std::move(pts), spec.s_max, spec.s_min));
  }
  return out;
}

SimResult run(const Scenario& sc, const RoundPlan& plan,
              const SimConfig& cfg, std::uint64_t seed) {
  const int n_dev = sc.profile.num_devices;
  if (plan.rounds <= 0 || plan.per_round.empty())
    throw PslError("run: empty plan");
  TaskContext ctx =
      make_task(sc, cfg.dataset, seed, cfg.use_quadratic, cfg.l2);
  std::vector<DeviceDataset> datasets =
      generate_datasets(sc, cfg.dataset, seed);

  Rng root(seed);
  Rng drift_rng = root.fork(0x8472696674ull);
  Eigen::VectorXd w = Eigen::VectorXd::Zero(ctx.loss.dim());
  const int model_dim = ctx.loss.dim();

  // cumulative drift direction per device
  std::vector<Eigen::VectorXd> shift(static_cast<std::size_t>(n_dev));
  std::vector<Eigen::VectorXd> shift_dir(static_cast<std::size_t>(n_dev));
  for (int n = 0; n < n_dev; ++n) {
    Rng dr = drift_rng.fork(static_cast<std::uint64_t>(n) + 911);
    Eigen::VectorXd dir(cfg.dataset.feat_dim);
    for (int i = 0; i < cfg.dataset.feat_dim; ++i) dir(i) = dr.normal();
    if (dir.norm() > 0.0) dir /= dir.norm();
    shift_dir[static_cast<std::size_t>(n)] = dir;
    shift[static_cast<std::size_t>(n)] =
        Eigen::VectorXd::Zero(cfg.dataset.feat_dim);
  }

  SimResult result;
  double wall = 0.0;
  long tick_counter = 0;

  for (int k = 0; k < plan.rounds; ++k) {
    const auto& pr = plan.per_round[static_cast<std::size_t>(k)];
    RoundTrace trace;
    trace.k = k + 1;
    trace.t_start = wall;
    trace.omega = pr.omega;

    // ----- idle window: 1 s drift ticks, max per device -----
    std::vector<double> delta_max(static_cast<std::size_t>(n_dev), 0.0);
    auto ticks = static_cast<long>(std::floor(pr.omega));
    bool any_tick = false;
    for (long t = 0; t < ticks; ++t) {
      ++tick_counter;
      double d_before = 0.0, d_after = 0.0;
      std::vector<double> dn_before(static_cast<std::size_t>(n_dev));
      std::vector<double> loss_before(static_cast<std::size_t>(n_dev));
      for (int n = 0; n < n_dev; ++n) {
        dn_before[static_cast<std::size_t>(n)] =
            static_cast<double>(datasets[static_cast<std::size_t>(n)].total());
        d_before += dn_before[static_cast<std::size_t>(n)];
        loss_before[static_cast<std::size_t>(n)] =
            ctx.loss.dataset_loss(w, datasets[static_cast<std::size_t>(n)]);
      }
      const double drift_scale = cfg.drift.scale_for_round(k + 1);
      for (int n = 0; n < n_dev; ++n) {
        auto& ds = datasets[static_cast<std::size_t>(n)];
        Rng tr = drift_rng.fork(
            static_cast<std::uint64_t>(tick_counter) * 1000 +
            static_cast<std::uint64_t>(n));
        shift[static_cast<std::size_t>(n)] += drift_scale *
            cfg.drift.mean_shift_per_sec * shift_dir[static_cast<std::size_t>(n)];
        std::size_t arrivals =
            poisson_draw(tr, drift_scale * cfg.drift.arrivals_per_sec);
        const auto& labels = ctx.device_labels[static_cast<std::size_t>(n)];
        for (std::size_t a = 0; a < arrivals; ++a) {
          int label =
              labels[static_cast<std::size_t>(tr.uniform_below(labels.size()))];
          ds.assign_arrival(sample_point(ctx, cfg.dataset, label,
                                         shift[static_cast<std::size_t>(n)], tr));
        }
        std::size_t departures =
            poisson_draw(tr, drift_scale * cfg.drift.departures_per_sec);
        for (std::size_t d = 0; d < departures && ds.total() > 4; ++d) {
          // uniform over points: pick stratum weighted by size
          std::size_t pick = static_cast<std::size_t>(tr.uniform_below(ds.total()));
          for (const auto& s : ds.strata()) {
            if (pick < s.size()) {
              ds.remove_point(s.id, pick);
              break;
            }
            pick -= s.size();
          }
        }
      }
      for (int n = 0; n < n_dev; ++n)
        d_after += static_cast<double>(datasets[static_cast<std::size_t>(n)].total());
      for (int n = 0; n < n_dev; ++n) {
        double dn_after =
            static_cast<double>(datasets[static_cast<std::size_t>(n)].total());
        double loss_after =
            ctx.loss.dataset_loss(w, datasets[static_cast<std::size_t>(n)]);
        double dn = measure_drift(dn_before[static_cast<std::size_t>(n)],
                                  loss_before[static_cast<std::size_t>(n)],
                                  d_before, dn_after, loss_after, d_after);
        delta_max[static_cast<std::size_t>(n)] =
            any_tick ? std::max(delta_max[static_cast<std::size_t>(n)], dn) : dn;
      }
      any_tick = true;
    }
    trace.drift = 0.0;
    if (any_tick)
      for (double d : delta_max) trace.drift += d;
    wall += pr.omega;

    // ----- data dispersion -----
    Eigen::VectorXd counts_before(n_dev);
    for (int n = 0; n < n_dev; ++n)
      counts_before(n) =
          static_cast<double>(datasets[static_cast<std::size_t>(n)].total());
    apply_dispersion(datasets, pr.rho);
    double d_total = 0.0;
    Eigen::VectorXd d_hat(n_dev);
    for (int n = 0; n < n_dev; ++n) {
      d_hat(n) = static_cast<double>(datasets[static_cast<std::size_t>(n)].total());
      d_total += d_hat(n);
    }

    // integer realizations of the plan decisions
    Eigen::VectorXd epochs(n_dev), batch(n_dev);
    for (int n = 0; n < n_dev; ++n) {
      epochs(n) = std::max(1.0, std::round(pr.epochs(n)));
      batch(n) = std::clamp(std::round(pr.batch(n)), 1.0, d_hat(n));
    }
    double e_sum = epochs.sum();
    double eta = cfg.alpha /
                 std::sqrt(static_cast<double>(plan.rounds) * e_sum /
                           static_cast<double>(n_dev));

    // ----- phase timings and energies, rates frozen per phase start -----
    auto block_of = [&](double t) {
      return static_cast<long>(std::floor(t / sc.profile.coherence_s));
    };
    RoundDecision dec;
    dec.epochs = epochs;
    dec.freq_hz = pr.freq_hz;
    dec.batch = batch;
    dec.rho = pr.rho;
    dec.phi = Eigen::MatrixXd::Zero(n_dev, n_dev);
    dec.data_counts = counts_before;
    Rng chan_root = root.fork(0x6e6574ull);
    Rates rates_data =
        rates(sc.profile, realize_channel(sc.profile, block_of(wall), chan_root));
    RoundTimes t_dataphase = round_timing(sc.profile, rates_data, dec);
    RoundEnergy e_dataphase = round_energy(sc.profile, rates_data, dec);
    trace.t_data = t_dataphase.data;
    wall += trace.t_data;

    trace.t_compute = t_dataphase.compute;
    wall += trace.t_compute;

    // ----- local stratified SGD -----
    std::vector<DeviceUpdate> updates;
    std::vector<Eigen::VectorXd> normalized(static_cast<std::size_t>(n_dev));
    for (int n = 0; n < n_dev; ++n) {
      auto& ds = datasets[static_cast<std::size_t>(n)];
      Allocation alloc = allocation_for(
          ds, static_cast<std::size_t>(batch(n)), cfg.sampling);
      Rng sgd_rng = root.fork(0x5347 + static_cast<std::uint64_t>(k) * 131 +
                              static_cast<std::uint64_t>(n));
      LocalRound lr = local_sgd_round(w, ds,
                                      alloc,
                                      static_cast<std::size_t>(epochs(n)), eta,
                                      ctx.loss, sgd_rng);
      DeviceUpdate up;
      up.d_hat = d_hat(n);
      up.epochs = epochs(n);
      up.accumulated_gradient = lr.accumulated_gradient;
      normalized[static_cast<std::size_t>(n)] =
          (d_hat(n) / (d_total * epochs(n))) * lr.accumulated_gradient;
      updates.push_back(std::move(up));
    }

    // ----- gradient dispersion with local condensation -----
    RoundDecision grad_dec;
    grad_dec.epochs = epochs;
    grad_dec.freq_hz = pr.freq_hz;
    grad_dec.batch = Eigen::VectorXd::Zero(n_dev);
    grad_dec.rho = Eigen::MatrixXd::Zero(n_dev, n_dev);
    grad_dec.phi = pr.phi;
    grad_dec.data_counts = counts_before;
    Rates rates_grad =
        rates(sc.profile, realize_channel(sc.profile, block_of(wall), chan_root));
    RoundTimes t_gradphase = round_timing(sc.profile, rates_grad, grad_dec);
    RoundEnergy e_gradphase = round_energy(sc.profile, rates_grad, grad_dec);
    trace.t_gradient = t_gradphase.gradient;
    wall += trace.t_gradient;

    std::vector<Eigen::VectorXd> uplinked(static_cast<std::size_t>(n_dev));
    std::vector<bool> keeper(static_cast<std::size_t>(n_dev), false);
    for (int n = 0; n < n_dev; ++n) {
      keeper[static_cast<std::size_t>(n)] = pr.phi(n, n) >= 0.5;
      if (keeper[static_cast<std::size_t>(n)])
        uplinked[static_cast<std::size_t>(n)] =
            normalized[static_cast<std::size_t>(n)];
    }
    for (int n = 0; n < n_dev; ++n) {
      if (keeper[static_cast<std::size_t>(n)]) continue;
      // contiguous chunks sized round(phi * M), remainder to the largest
      std::vector<std::pair<int, long>> sizes;
      long assigned = 0;
      int largest = -1;
      for (int m = 0; m < n_dev; ++m) {
        if (m == n || pr.phi(n, m) <= 0.0) continue;
        long len = std::lround(pr.phi(n, m) * model_dim);
        sizes.emplace_back(m, len);
        assigned += len;
        if (largest < 0 || pr.phi(n, m) > pr.phi(n, largest)) largest = m;
      }
      if (sizes.empty()) throw PslError("run: disperser with no recipients");
      for (auto& [m, len] : sizes)
        if (m == largest) len += model_dim - assigned;
      long at = 0;
      for (auto& [m, len] : sizes) {
        len = std::max<long>(len, 0);
        long hi = std::min<long>(at + len, model_dim);
        if (!keeper[static_cast<std::size_t>(m)])
          throw PslError("run: chunk routed to a non-keeper");
        uplinked[static_cast<std::size_t>(m)].segment(at, hi - at) +=
            normalized[static_cast<std::size_t>(n)].segment(at, hi - at);
        at = hi;
      }
      if (at != model_dim) throw PslError("run: chunks do not cover the model");
    }

    RoundDecision up_dec = grad_dec;
    Rates rates_up =
        rates(sc.profile, realize_channel(sc.profile, block_of(wall), chan_root));
    RoundTimes t_upphase = round_timing(sc.profile, rates_up, up_dec);
    RoundEnergy e_upphase = round_energy(sc.profile, rates_up, up_dec);
    trace.t_uplink = t_upphase.uplink;
    wall += trace.t_uplink;

    double outer = 0.0;
    for (int n = 0; n < n_dev; ++n) outer += d_hat(n) * epochs(n) / d_total;
    Eigen::VectorXd server_sum = Eigen::VectorXd::Zero(model_dim);
    for (int n = 0; n < n_dev; ++n)
      if (keeper[static_cast<std::size_t>(n)])
        server_sum += uplinked[static_cast<std::size_t>(n)];
    Eigen::VectorXd reconstructed = outer * server_sum;

    // server-side reconstruction must equal the direct aggregation
    Eigen::VectorXd direct =
        (w - aggregate_global(updates, d_total, w, eta)) / eta;
    double rel = (reconstructed - direct).norm() /
                 std::max(direct.norm(), 1e-30);
    if (rel > 1e-9)
      throw PslError("run: condensation mismatch, rel err " +
                     std::to_string(rel));
    w -= eta * reconstructed;

    trace.energy_j = e_dataphase.data_dispersion.sum() +
                     e_dataphase.compute.sum() +
                     e_gradphase.gradient_dispersion.sum() +
                     e_upphase.gradient_uplink.sum();

    // overruns: the plan values are budgets, fading makes realizations vary
    auto check = [&](double realized, double budget, const char* phase) {
      if (realized > budget * (1.0 + 1e-9) + 1e-12) {
        if (cfg.overrun_is_error)
          throw PlanPhaseOverrun(std::string(phase) + " overran the budget");
        std::cerr << "round " << (k + 1) << ": " << phase << " realized "
                  << realized << " s vs budget " << budget << " s\n";
      }
    };
    check(trace.t_data, pr.t_data, "data dispersion");
    check(trace.t_compute, pr.t_compute, "local computation");
    check(trace.t_gradient, pr.t_gradient, "gradient dispersion");
    check(trace.t_uplink, pr.t_uplink, "uplink");

    double loss_val = 0.0;
    Eigen::VectorXd grad = Eigen::VectorXd::Zero(model_dim);
    for (int n = 0; n < n_dev; ++n) {
      const auto& ds = datasets[static_cast<std::size_t>(n)];
      double share = d_hat(n) / d_total;
      loss_val += share * ctx.loss.dataset_loss(w, ds);
      grad += share * ctx.loss.dataset_grad(w, ds);
    }
    trace.loss = loss_val;
    trace.grad_norm_sq = grad.squaredNorm();
    result.rounds.push_back(trace);
  }

  result.final_loss = result.rounds.back().loss;
  result.w_final = w;
  return result;
}

std::string policy_name(SamplingPolicy p) {
  switch (p) {
    case SamplingPolicy::Neyman: return "neyman";
    case SamplingPolicy::Uniform: return "uniform";
    case SamplingPolicy::FullBatch: return "full";
  }
  return "?";
}

std::vector<PolicyRow> compare_policies(
    const Scenario& sc, const RoundPlan& plan, const SimConfig& base,
    const std::vector<SamplingPolicy>& policies,
    const std::vector<std::uint64_t>& seeds) {
  if (policies.size() < 2)
    throw PslError("compare_policies: need at least two policies");
  std::vector<PolicyRow> rows;
  for (SamplingPolicy p : policies) {
    for (std::uint64_t s : seeds) {
      SimConfig cfg = base;
      cfg.sampling = p;
      SimResult res = run(sc, plan, cfg, s);
      PolicyRow row;
      row.policy = policy_name(p);
      row.seed = s;
      row.final_loss = res.final_loss;
      for (const auto& r : res.rounds) row.loss_curve.push_back(r.loss);
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

std::string trace_csv(const std::vector<RoundTrace>& rounds) {
  std::ostringstream os;
  os << "k,t_start,omega,T_D,T_L,T_M,T_U,energy_J,loss,grad_norm_sq,drift\n";
  os.precision(12);
  for (const auto& r : rounds) {
    os << r.k << ',' << r.t_start << ',' << r.omega << ',' << r.t_data << ','
       << r.t_compute << ',' << r.t_gradient << ',' << r.t_uplink << ','
       << r.energy_j << ',' << r.loss << ',' << r.grad_norm_sq << ','
       << r.drift << '\n';
  }
  return os.str();
}

}  // namespace psl
