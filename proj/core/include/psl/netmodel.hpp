#pragma once

#include <Eigen/Dense>
#include <complex>
#include <vector>

#include "psl/errors.hpp"
#include "psl/rng.hpp"

namespace psl {

// Static device/radio/compute parameters; all units SI. Devices are indexed
// 0..N-1 with the base station at the origin.
struct NetworkProfile {
  int num_devices = 0;
  std::vector<Eigen::Vector2d> positions;

  double beta0_db = -30.0;       // pathloss intercept at d0
  double d0_m = 1.0;
  double pathloss_uplink = 3.0;  // alpha~ for device-BS links
  double pathloss_d2d = 3.2;     // alpha~ for device-device links
  double noise_psd_w = 3.9810717055349565e-21;  // -174 dBm/Hz
  double bw_uplink_hz = 1e6;     // B^U
  double bw_d2d_hz = 1e5;        // B^D
  std::vector<double> p_uplink_w;  // p^U_n
  std::vector<double> p_d2d_w;     // p^D_n
  double bits_per_datum = 4096.0;      // b^D
  double bits_per_grad_elem = 32.0;    // b^G
  int model_dim = 2250;                // M
  std::vector<double> cycles_per_datum;      // a_n
  std::vector<double> chipset_capacitance;   // alpha_n (E^C = alpha_n/2 * ...)
  std::vector<double> f_min_hz;
  std::vector<double> f_max_hz;
  double coherence_s = 0.05;

  bool tdma_data_reception = false;  // sum instead of max in the data phase
  bool average_rate_model = false;   // expected fading power instead of draws

  double noise_uplink_w() const { return noise_psd_w * bw_uplink_hz; }
  double noise_d2d_w() const { return noise_psd_w * bw_d2d_hz; }

  // Devices uniform in a disk of `radius_m`, radio/compute columns filled
  // from the given per-device vectors cycled as needed.
  static NetworkProfile sample_disk(int num_devices, double radius_m, Rng& rng);
};

// Per-block fading; |h|^2 combines lognormal-free pathloss with a Rayleigh
// draw, regenerated every coherence block.
struct ChannelRealization {
  Eigen::VectorXd gain_up;           // |h_n|^2
  Eigen::MatrixXd gain_d2d;          // |h_{n,m}|^2, diagonal unused
  long block_index = 0;
};

ChannelRealization realize_channel(const NetworkProfile& profile,
                                   long block_index, const Rng& base);

struct Rates {
  Eigen::VectorXd uplink;  // r_n
  Eigen::MatrixXd d2d;     // r_{n,m}: from n to m
};

// r_n = B^U log2(1 + |h_n|^2 p^U_n / N^U), r_{n,m} analogous on B^D.
Rates rates(const NetworkProfile& profile, const ChannelRealization& chan);

// Decision variables of one round as the network model needs them.
struct RoundDecision {
  Eigen::VectorXd epochs;       // e_n
  Eigen::VectorXd freq_hz;      // f_n
  Eigen::VectorXd batch;        // B_n
  Eigen::MatrixXd rho;          // data dispersion
  Eigen::MatrixXd phi;          // gradient dispersion
  Eigen::VectorXd data_counts;  // D_n at the start of the round
};

struct RoundTimes {
  double data = 0.0;      // T^D realized: max_m of data reception at m
  double compute = 0.0;   // T^L realized
  double gradient = 0.0;  // T^M realized
  double uplink = 0.0;    // T^U realized
  Eigen::VectorXd data_per_device;
  Eigen::VectorXd compute_per_device;
  Eigen::VectorXd gradient_per_device;
  Eigen::VectorXd uplink_per_device;
  double total() const { return data + compute + gradient + uplink; }
};

RoundTimes round_timing(const NetworkProfile& profile, const Rates& r,
                        const RoundDecision& plan);

struct RoundEnergy {
  Eigen::VectorXd per_device;
  Eigen::VectorXd data_dispersion;
  Eigen::VectorXd compute;
  Eigen::VectorXd gradient_dispersion;
  Eigen::VectorXd gradient_uplink;
  double total = 0.0;
};

RoundEnergy round_energy(const NetworkProfile& profile, const Rates& r,
                         const RoundDecision& plan);

}  // namespace psl
