#include "psl/bounds.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>

namespace psl {

double RoundParams::e_sum() const {
  double s = 0.0;
  for (double e : epochs) s += e;
  return s;
}

double RoundParams::e_avg() const {
  double s = 0.0;
  for (std::size_t n = 0; n < epochs.size(); ++n) s += d_hat[n] * epochs[n];
  return s / total_data;
}

double RoundParams::e_max() const {
  double m = 0.0;
  for (double e : epochs) m = std::max(m, e);
  return m;
}

double neyman_variance_term(const std::vector<double>& sizes,
                            const std::vector<double>& stds, double batch,
                            double d_hat) {
  if (batch < 1.0) throw PslError("neyman_variance_term: batch < 1");
  double lin = 0.0, quad = 0.0;
  for (std::size_t j = 0; j < sizes.size(); ++j) {
    lin += stds[j] * sizes[j];
    quad += sizes[j] * stds[j] * stds[j];
  }
  double v = (lin * lin / batch - quad) / (d_hat * d_hat);
  if (v < 0.0 && std::abs(v) < 1e-12) {
    std::cerr << "neyman_variance_term: clamping round-off negative " << v
              << " to 0\n";
    v = 0.0;
  }
  return v;
}

double stratified_noise_term(const std::vector<double>& sizes,
                             const std::vector<double>& stds,
                             const std::vector<double>& batch_per_stratum,
                             double d_hat) {
  double total = 0.0;
  for (std::size_t j = 0; j < sizes.size(); ++j) {
    const double s = sizes[j];
    const double b = batch_per_stratum[j];
    if (b >= s) continue;  // sampled in full
    if (b <= 0.0) {
      if (stds[j] > 0.0)
        throw ZeroAllocation("stratified_noise_term: unsampled stratum");
      continue;
    }
    total += (1.0 - b / s) * (s / (d_hat * d_hat)) *
             ((s - 1.0) * stds[j] * stds[j] / b);
  }
  return total;
}

namespace {

struct Caps {
  double e_hat_max, e_hat_min, e_bar_min, e_bar_max, e_max_cap;
};

Caps derive_caps(const BoundParams& p) {
  Caps c{0.0, 0.0, 0.0, 0.0, 0.0};
  c.e_hat_max = p.e_hat_max;
  c.e_hat_min = p.e_hat_min;
  c.e_bar_min = p.e_bar_min;
  c.e_bar_max = p.e_bar_max;
  c.e_max_cap = p.e_max_cap;
  if (c.e_hat_max <= 0.0 || c.e_hat_min <= 0.0 || c.e_bar_min <= 0.0 ||
      c.e_bar_max <= 0.0 || c.e_max_cap <= 0.0) {
    double esum_max = 0.0, esum_min = 1e300, eavg_min = 1e300, eavg_max = 0.0,
           emax = 0.0;
    for (const auto& r : p.per_round) {
      esum_max = std::max(esum_max, r.e_sum());
      esum_min = std::min(esum_min, r.e_sum());
      eavg_min = std::min(eavg_min, r.e_avg());
      eavg_max = std::max(eavg_max, r.e_avg());
      emax = std::max(emax, r.e_max());
    }
    if (c.e_hat_max <= 0.0) c.e_hat_max = esum_max;
    if (c.e_hat_min <= 0.0) c.e_hat_min = esum_min;
    if (c.e_bar_min <= 0.0) c.e_bar_min = eavg_min;
    if (c.e_bar_max <= 0.0) c.e_bar_max = eavg_max;
    if (c.e_max_cap <= 0.0) c.e_max_cap = emax;
  }
  return c;
}

double derived_eta(const BoundParams& p, const RoundParams& r) {
  if (r.eta > 0.0) return r.eta;
  return p.alpha / std::sqrt(static_cast<double>(p.rounds) * r.e_sum() /
                             static_cast<double>(p.num_devices));
}

void validate(const BoundParams& p, BoundMode mode) {
  if (p.per_round.size() != p.rounds)
    throw MissingParam("per_round size != rounds");
  if (p.rounds == 0) throw MissingParam("rounds = 0");
  for (const auto& r : p.per_round) {
    if (r.epochs.empty() || r.d_hat.size() != r.epochs.size())
      throw MissingParam("round epochs / d_hat incomplete");
    if (r.total_data <= 0.0) throw MissingParam("total_data <= 0");
    if (r.lambda <= 0.0 || r.lambda >= 1.0)
      throw MissingParam("lambda outside (0,1)");
    bool needs_strata = mode == BoundMode::General || mode == BoundMode::Cor1 ||
                        mode == BoundMode::Neyman ||
                        mode == BoundMode::NeymanCapped;
    if (needs_strata && r.strata_sizes.size() != r.epochs.size())
      throw MissingParam("strata data incomplete");
    if ((mode == BoundMode::General || mode == BoundMode::Cor1) &&
        r.batch_per_stratum.size() != r.epochs.size())
      throw MissingParam("per-stratum batches required for this mode");
    if ((mode == BoundMode::Neyman || mode == BoundMode::NeymanCapped) &&
        r.batch.size() != r.epochs.size())
      throw MissingParam("per-device batch sizes required for this mode");
    if (mode == BoundMode::General && !r.loss_gain.has_value())
      throw MissingParam("GENERAL mode needs realized loss gains");
  }
  if (!p.skip_step_check) {
    for (const auto& r : p.per_round) {
      double eta = derived_eta(p, r);
      double cap = step_size_cap(p.constants,
                                 static_cast<std::size_t>(r.e_max()), r.lambda,
                                 r.e_avg());
      if (eta > cap * (1.0 + 1e-12))
        throw StepSizeViolation("eta " + std::to_string(eta) + " above cap " +
                                std::to_string(cap));
    }
  }
}

double device_noise_theorem(const RoundParams& r, std::size_t n) {
  return stratified_noise_term(r.strata_sizes[n], r.strata_stds[n],
                               r.batch_per_stratum[n], r.d_hat[n]);
}

double device_noise_neyman(const RoundParams& r, std::size_t n) {
  return neyman_variance_term(r.strata_sizes[n], r.strata_stds[n], r.batch[n],
                              r.d_hat[n]);
}

}  // namespace

BoundBreakdown evaluate_bound(const BoundParams& p, BoundMode mode) {
  validate(p, mode);
  const double beta = p.constants.beta;
  const double theta = p.constants.theta;
  const double zeta2 = p.constants.zeta2;
  const double k_rounds = static_cast<double>(p.rounds);
  const double n_dev = static_cast<double>(p.num_devices);
  const double sqrt_nk = std::sqrt(n_dev * k_rounds);
  const Caps caps = derive_caps(p);
  const double one_minus_lmax = 1.0 - p.lambda_max;

  BoundBreakdown out;

  switch (mode) {
    case BoundMode::General: {
      for (const auto& r : p.per_round) {
        const double eta = derived_eta(p, r);
        const double gamma_k = 0.5 * eta * r.e_avg();
        const double oml = 1.0 - r.lambda;
        out.term_a += r.loss_gain.value() / (gamma_k * oml);
        out.term_b += r.omega * r.delta / (gamma_k * oml);
        double c_sum = 0.0, e_sum_term = 0.0;
        for (std::size_t n = 0; n < r.epochs.size(); ++n) {
          const double share = r.d_hat[n] / r.total_data;
          const double noise = device_noise_theorem(r, n);
          c_sum += share * (r.epochs[n] - 1.0) * noise;
          e_sum_term += share * share / r.epochs[n] * noise;
        }
        out.term_c += 8.0 * beta * beta * theta * theta * eta * eta * c_sum / oml;
        out.term_d += 8.0 * zeta2 * eta * eta * beta * beta * r.e_max() *
                      (r.e_max() - 1.0) / oml;
        out.term_e += 8.0 * theta * theta * beta * gamma_k * e_sum_term / oml;
      }
      out.term_a /= k_rounds;
      out.term_b /= k_rounds;
      out.term_c /= k_rounds;
      out.term_d /= k_rounds;
      out.term_e /= k_rounds;
      break;
    }
    case BoundMode::Cor1: {
      out.term_a = 2.0 * std::sqrt(caps.e_hat_max) * (p.f_initial - p.f_star) /
                   (caps.e_bar_min * p.alpha * sqrt_nk * one_minus_lmax);
      for (const auto& r : p.per_round) {
        out.term_b += 2.0 * std::sqrt(caps.e_hat_max) * r.omega * r.delta /
                      (caps.e_bar_min * p.alpha * sqrt_nk * one_minus_lmax);
        double c_sum = 0.0, e_sum_term = 0.0;
        for (std::size_t n = 0; n < r.epochs.size(); ++n) {
          const double share = r.d_hat[n] / r.total_data;
          const double noise = device_noise_theorem(r, n);
          c_sum += share * (r.epochs[n] - 1.0) * noise;
          e_sum_term += share * share / r.epochs[n] * noise;
        }
        const double es = r.e_sum();
        out.term_c += 8.0 * beta * beta * theta * theta * p.alpha * p.alpha *
                      n_dev * c_sum / (k_rounds * es * one_minus_lmax);
        out.term_d += 8.0 * zeta2 * p.alpha * p.alpha * n_dev * beta * beta *
                      r.e_max() * (r.e_max() - 1.0) /
                      (k_rounds * es * one_minus_lmax);
        out.term_e += 4.0 * caps.e_bar_max * p.alpha * theta * theta * beta *
                      std::sqrt(n_dev) * e_sum_term /
                      (one_minus_lmax * std::sqrt(es) * std::sqrt(k_rounds));
      }
      out.term_c /= k_rounds;
      out.term_d /= k_rounds;
      out.term_e /= k_rounds;
      break;
    }
    case BoundMode::Cor2: {
      if (p.gamma < 0.0) throw MissingParam("COR2 needs gamma >= 0");
      for (const auto& r : p.per_round) {
        // [gamma/(K Delta)]^+ : nonpositive drift leaves omega unconstrained
        if (r.delta > 0.0 &&
            r.omega * r.delta > p.gamma / k_rounds + 1e-12)
          throw PslError("COR2 requires omega*delta <= gamma/K each round");
      }
      double sigma_max = p.sigma_max;
      if (sigma_max <= 0.0) {
        for (const auto& r : p.per_round)
          for (std::size_t n = 0; n < r.epochs.size(); ++n)
            sigma_max = std::max(sigma_max, device_noise_theorem(r, n));
      }
      out.term_a = 2.0 * std::sqrt(caps.e_hat_max) * (p.f_initial - p.f_star) /
                   (caps.e_bar_min * p.alpha * sqrt_nk * one_minus_lmax);
      out.term_b = 2.0 * std::sqrt(caps.e_hat_max) * p.gamma /
                   (caps.e_bar_min * p.alpha * sqrt_nk * one_minus_lmax);
      out.term_c = 8.0 * beta * beta * theta * theta * p.alpha * p.alpha *
                   n_dev * (caps.e_max_cap - 1.0) * sigma_max /
                   (caps.e_hat_min * k_rounds * one_minus_lmax);
      out.term_d = 8.0 * zeta2 * p.alpha * p.alpha * n_dev * beta * beta *
                   caps.e_max_cap * (caps.e_max_cap - 1.0) /
                   (caps.e_hat_min * k_rounds * one_minus_lmax);
      out.term_e = 4.0 * caps.e_bar_max * p.alpha * theta * theta * beta *
                   std::sqrt(n_dev) * sigma_max /
                   (one_minus_lmax * std::sqrt(caps.e_hat_min) *
                    std::sqrt(k_rounds));
      break;
    }
    case BoundMode::Neyman: {
      out.term_a = 2.0 * std::sqrt(caps.e_hat_max) * (p.f_initial - p.f_star) /
                   (caps.e_bar_min * p.alpha * sqrt_nk * one_minus_lmax);
      for (const auto& r : p.per_round) {
        const double oml = 1.0 - r.lambda;
        const double es = r.e_sum();
        const double ea = r.e_avg();
        out.term_b += 2.0 * std::sqrt(es) * r.omega * r.delta /
                      (p.alpha * ea * sqrt_nk * oml);
        double c_sum = 0.0, e_sum_term = 0.0;
        for (std::size_t n = 0; n < r.epochs.size(); ++n) {
          const double share = r.d_hat[n] / r.total_data;
          const double noise = device_noise_neyman(r, n);
          c_sum += share * (r.epochs[n] - 1.0) * noise;
          e_sum_term += share * share / r.epochs[n] * noise;
        }
        out.term_c += 8.0 * beta * beta * theta * theta * p.alpha * p.alpha *
                      n_dev * c_sum / (es * k_rounds * k_rounds * oml);
        out.term_d += 8.0 * zeta2 * p.alpha * p.alpha * beta * beta * n_dev *
                      r.e_max() * (r.e_max() - 1.0) /
                      (es * k_rounds * k_rounds * oml);
        out.term_e += 4.0 * ea * p.alpha * theta * theta * beta *
                      std::sqrt(n_dev) * e_sum_term /
                      (std::sqrt(es) * k_rounds * std::sqrt(k_rounds) * oml);
      }
      break;
    }
    case BoundMode::NeymanCapped: {
      out.term_a = 2.0 * std::sqrt(caps.e_hat_max) * (p.f_initial - p.f_star) /
                   (caps.e_bar_min * p.alpha * sqrt_nk * one_minus_lmax);
      for (const auto& r : p.per_round) {
        out.term_b += 2.0 * std::sqrt(caps.e_hat_max) * r.omega * r.delta /
                      (p.alpha * caps.e_bar_min * sqrt_nk * one_minus_lmax);
        double c_sum = 0.0, e_sum_term = 0.0;
        for (std::size_t n = 0; n < r.epochs.size(); ++n) {
          const double share = r.d_hat[n] / r.total_data;
          const double noise = device_noise_neyman(r, n);
          c_sum += share * (r.epochs[n] - 1.0) * noise;
          e_sum_term += share * share / r.epochs[n] * noise;
        }
        out.term_c += 8.0 * beta * beta * theta * theta * p.alpha * p.alpha *
                      n_dev * c_sum /
                      (caps.e_hat_min * k_rounds * k_rounds * one_minus_lmax);
        out.term_d += 8.0 * zeta2 * p.alpha * p.alpha * beta * beta * n_dev *
                      r.e_max() * (r.e_max() - 1.0) /
                      (caps.e_hat_min * k_rounds * k_rounds * one_minus_lmax);
        out.term_e += 4.0 * caps.e_bar_max * p.alpha * theta * theta * beta *
                      std::sqrt(n_dev) * e_sum_term /
                      (std::sqrt(caps.e_hat_min) * k_rounds *
                       std::sqrt(k_rounds) * one_minus_lmax);
      }
      break;
    }
    case BoundMode::NeymanNoise: {
      if (p.gamma < 0.0) throw MissingParam("NEYMAN_NOISE needs gamma >= 0");
      double sigma_max = p.sigma_max;
      if (sigma_max <= 0.0) {
        for (const auto& r : p.per_round)
          for (std::size_t n = 0; n < r.epochs.size(); ++n)
            sigma_max = std::max(sigma_max, device_noise_neyman(r, n));
      }
      out.term_a = 2.0 * std::sqrt(caps.e_hat_max) * (p.f_initial - p.f_star) /
                   (caps.e_bar_min * p.alpha * sqrt_nk * one_minus_lmax);
      out.term_b = 2.0 * std::sqrt(caps.e_hat_max) * p.gamma /
                   (caps.e_bar_min * p.alpha * sqrt_nk * one_minus_lmax);
      out.term_c = 8.0 * beta * beta * theta * theta * p.alpha * p.alpha *
                   n_dev * (caps.e_max_cap - 1.0) * sigma_max /
                   (caps.e_hat_min * k_rounds * one_minus_lmax);
      out.term_d = 8.0 * zeta2 * p.alpha * p.alpha * n_dev * beta * beta *
                   caps.e_max_cap * (caps.e_max_cap - 1.0) /
                   (caps.e_hat_min * k_rounds * one_minus_lmax);
      out.term_e = 4.0 * caps.e_bar_max * p.alpha * theta * theta * beta *
                   std::sqrt(n_dev) * sigma_max /
                   (std::sqrt(caps.e_hat_min) * std::sqrt(k_rounds) *
                    one_minus_lmax);
      break;
    }
  }
  out.total = out.term_a + out.term_b + out.term_c + out.term_d + out.term_e;
  return out;
}

BoundMode parse_bound_mode(const std::string& name) {
  if (name == "general") return BoundMode::General;
  if (name == "cor1") return BoundMode::Cor1;
  if (name == "cor2") return BoundMode::Cor2;
  if (name == "neyman") return BoundMode::Neyman;
  if (name == "neyman_capped") return BoundMode::NeymanCapped;
  if (name == "neyman_noise") return BoundMode::NeymanNoise;
  throw ConfigError("unknown bound mode: " + name);
}

}  // namespace psl
