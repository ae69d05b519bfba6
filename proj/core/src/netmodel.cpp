#include "psl/netmodel.hpp"

#include <cmath>

namespace psl {

namespace {

constexpr double kTransferEps = 1e-12;  // below this a transfer is "none"

double pathloss_gain(double beta0_db, double alpha, double dist_m, double d0_m) {
  double beta_db = beta0_db - 10.0 * alpha * std::log10(std::max(dist_m, d0_m) / d0_m);
  return std::pow(10.0, beta_db / 10.0);
}

}  // namespace

NetworkProfile NetworkProfile::sample_disk(int num_devices, double radius_m,
                                           Rng& rng) {
  NetworkProfile p;
  p.num_devices = num_devices;
  p.positions.resize(static_cast<std::size_t>(num_devices));
  for (auto& pos : p.positions) {
    // uniform in disk via sqrt radius
    double r = radius_m * std::sqrt(rng.uniform());
    double ang = rng.uniform(0.0, 2.0 * M_PI);
    pos = Eigen::Vector2d(r * std::cos(ang), r * std::sin(ang));
  }
  p.p_uplink_w.assign(static_cast<std::size_t>(num_devices), 0.25);
  p.p_d2d_w.assign(static_cast<std::size_t>(num_devices), 0.10);
  p.cycles_per_datum.resize(static_cast<std::size_t>(num_devices));
  p.chipset_capacitance.assign(static_cast<std::size_t>(num_devices), 2e-13);
  p.f_min_hz.assign(static_cast<std::size_t>(num_devices), 1e5);
  p.f_max_hz.assign(static_cast<std::size_t>(num_devices), 2.3e9);
  // heterogeneous processing cost, cycled pattern so larger networks always
  // include cheap devices
  const double pattern[5] = {800.0, 400.0, 200.0, 100.0, 50.0};
  for (int n = 0; n < num_devices; ++n)
    p.cycles_per_datum[static_cast<std::size_t>(n)] = pattern[n % 5];
  return p;
}

ChannelRealization realize_channel(const NetworkProfile& profile,
                                   long block_index, const Rng& base) {
  const int n = profile.num_devices;
  ChannelRealization chan;
  chan.block_index = block_index;
  chan.gain_up.resize(n);
  chan.gain_d2d.setZero(n, n);
  Rng rng = base.fork(0x6368616eull ^ static_cast<std::uint64_t>(block_index));
  for (int i = 0; i < n; ++i) {
    double d = profile.positions[static_cast<std::size_t>(i)].norm();
    double pl = pathloss_gain(profile.beta0_db, profile.pathloss_uplink, d,
                              profile.d0_m);
    // |CN(0,1)|^2 is Exp(1)
    double fade = profile.average_rate_model ? 1.0 : rng.exponential();
    chan.gain_up(i) = pl * fade;
  }
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      if (i == j) continue;
      double d = (profile.positions[static_cast<std::size_t>(i)] -
                  profile.positions[static_cast<std::size_t>(j)])
                     .norm();
      double pl = pathloss_gain(profile.beta0_db, profile.pathloss_d2d, d,
                                profile.d0_m);
      double fade = profile.average_rate_model ? 1.0 : rng.exponential();
      chan.gain_d2d(i, j) = pl * fade;
    }
  }
  return chan;
}

Rates rates(const NetworkProfile& profile, const ChannelRealization& chan) {
  const int n = profile.num_devices;
  Rates r;
  r.uplink.resize(n);
  r.d2d.setZero(n, n);
  const double nu = profile.noise_uplink_w();
  const double nd = profile.noise_d2d_w();
  for (int i = 0; i < n; ++i) {
    double snr = chan.gain_up(i) * profile.p_uplink_w[static_cast<std::size_t>(i)] / nu;
    r.uplink(i) = profile.bw_uplink_hz * std::log2(1.0 + snr);
  }
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      if (i == j) continue;
      double snr = chan.gain_d2d(i, j) * profile.p_d2d_w[static_cast<std::size_t>(i)] / nd;
      r.d2d(i, j) = profile.bw_d2d_hz * std::log2(1.0 + snr);
    }
  }
  return r;
}

RoundTimes round_timing(const NetworkProfile& profile, const Rates& r,
                        const RoundDecision& plan) {
  const int n = profile.num_devices;
  RoundTimes t;
  t.data_per_device.setZero(n);
  t.compute_per_device.setZero(n);
  t.gradient_per_device.setZero(n);
  t.uplink_per_device.setZero(n);
  const double mbg = static_cast<double>(profile.model_dim) *
                     profile.bits_per_grad_elem;

  for (int m = 0; m < n; ++m) {
    double agg = 0.0;
    for (int s = 0; s < n; ++s) {
      if (s == m) continue;
      double bits = plan.rho(s, m) * plan.data_counts(s) * profile.bits_per_datum;
      if (bits <= kTransferEps) continue;
      if (r.d2d(s, m) <= 0.0)
        throw ZeroRate("data link " + std::to_string(s) + "->" +
                       std::to_string(m) + " has zero rate");
      double link = bits / r.d2d(s, m);
      agg = profile.tdma_data_reception ? agg + link : std::max(agg, link);
    }
    t.data_per_device(m) = agg;

    double grad = 0.0;
    for (int s = 0; s < n; ++s) {
      if (s == m) continue;
      double bits = plan.phi(s, m) * mbg;
      if (bits <= kTransferEps) continue;
      if (r.d2d(s, m) <= 0.0)
        throw ZeroRate("gradient link " + std::to_string(s) + "->" +
                       std::to_string(m) + " has zero rate");
      grad = std::max(grad, bits / r.d2d(s, m));
    }
    t.gradient_per_device(m) = grad;
  }

  for (int i = 0; i < n; ++i) {
    double f = plan.freq_hz(i);
    if (f <= 0.0) throw PslError("round_timing: nonpositive frequency");
    t.compute_per_device(i) = plan.epochs(i) *
                              profile.cycles_per_datum[static_cast<std::size_t>(i)] *
                              plan.batch(i) / f;
    double bits = plan.phi(i, i) * mbg;
    if (bits > kTransferEps) {
      if (r.uplink(i) <= 0.0)
        throw ZeroRate("uplink " + std::to_string(i) + " has zero rate");
      t.uplink_per_device(i) = bits / r.uplink(i);
    }
  }

  t.data = t.data_per_device.maxCoeff();
  t.compute = t.compute_per_device.maxCoeff();
  t.gradient = t.gradient_per_device.maxCoeff();
  t.uplink = t.uplink_per_device.maxCoeff();
  return t;
}

RoundEnergy round_energy(const NetworkProfile& profile, const Rates& r,
                         const RoundDecision& plan) {
  const int n = profile.num_devices;
  RoundEnergy e;
  e.per_device.setZero(n);
  e.data_dispersion.setZero(n);
  e.compute.setZero(n);
  e.gradient_dispersion.setZero(n);
  e.gradient_uplink.setZero(n);
  const double mbg = static_cast<double>(profile.model_dim) *
                     profile.bits_per_grad_elem;

  for (int i = 0; i < n; ++i) {
    const double pd = profile.p_d2d_w[static_cast<std::size_t>(i)];
    for (int j = 0; j < n; ++j) {
      if (i == j) continue;
      double data_bits = plan.rho(i, j) * plan.data_counts(i) * profile.bits_per_datum;
      if (data_bits > kTransferEps) {
        if (r.d2d(i, j) <= 0.0) throw ZeroRate("data link energy: zero rate");
        e.data_dispersion(i) += pd * data_bits / r.d2d(i, j);
      }
      double grad_bits = plan.phi(i, j) * mbg;
      if (grad_bits > kTransferEps) {
        if (r.d2d(i, j) <= 0.0) throw ZeroRate("gradient link energy: zero rate");
        e.gradient_dispersion(i) += pd * grad_bits / r.d2d(i, j);
      }
    }
    e.compute(i) = 0.5 * profile.chipset_capacitance[static_cast<std::size_t>(i)] *
                   profile.cycles_per_datum[static_cast<std::size_t>(i)] *
                   plan.epochs(i) * plan.batch(i) * plan.freq_hz(i) *
                   plan.freq_hz(i);
    double up_bits = plan.phi(i, i) * mbg;
    if (up_bits > kTransferEps) {
      if (r.uplink(i) <= 0.0) throw ZeroRate("uplink energy: zero rate");
      e.gradient_uplink(i) = profile.p_uplink_w[static_cast<std::size_t>(i)] *
                             up_bits / r.uplink(i);
    }
    e.per_device(i) = e.data_dispersion(i) + e.compute(i) +
                      e.gradient_dispersion(i) + e.gradient_uplink(i);
  }
  e.total = e.per_device.sum();
  return e;
}

}  // namespace psl
