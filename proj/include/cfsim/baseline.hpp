#pragma once

#include <cmath>
#include <stdexcept>

#include <json.hpp>

#include "cfsim/core.hpp"
#include "cfsim/rng.hpp"

namespace cfsim {

/// Intelligent Driver Model constants. All strictly positive.
struct IdmParams {
  double v0 = 34.99;    // desired speed, m/s
  double s0 = 1.70;     // minimum gap, m
  double a_max = 0.15;  // maximum acceleration, m/s^2
  double b = 0.66;      // comfortable deceleration, m/s^2
  double T = 0.73;      // desired time headway, s

  void validate() const {
    if (!(v0 > 0 && s0 > 0 && a_max > 0 && b > 0 && T > 0)) {
      throw std::invalid_argument("IdmParams: all parameters must be strictly positive");
    }
  }
};

struct NoisyIdmParams {
  IdmParams idm;
  double q = 0.10;  // fluctuation strength, m^2/s^3

  void validate() const {
    idm.validate();
    if (q < 0) throw std::invalid_argument("NoisyIdmParams: Q must be >= 0");
  }
};

inline void to_json(nlohmann::json& j, const IdmParams& p) {
  j = {{"units", "v0 m/s, s0 m, a_max m/s^2, b m/s^2, T s"},
       {"v0", p.v0}, {"s0", p.s0}, {"a_max", p.a_max}, {"b", p.b}, {"T", p.T}};
}

inline void from_json(const nlohmann::json& j, IdmParams& p) {
  j.at("v0").get_to(p.v0);
  j.at("s0").get_to(p.s0);
  j.at("a_max").get_to(p.a_max);
  j.at("b").get_to(p.b);
  j.at("T").get_to(p.T);
  p.validate();
}

inline void to_json(nlohmann::json& j, const NoisyIdmParams& p) {
  j = {{"idm", p.idm}, {"Q", p.q}};
}

inline void from_json(const nlohmann::json& j, NoisyIdmParams& p) {
  j.at("idm").get_to(p.idm);
  j.at("Q").get_to(p.q);
  p.validate();
}

/// Standard IDM acceleration. Closing speed is v - v_l = -rr under this
/// repo's gap-opening range-rate convention; the desired gap is floored at
/// s0 so a strongly opening gap cannot drive it negative.
inline double idm_accel(const TrafficState& s, const IdmParams& p) {
  if (!(s.r > 0.0)) throw std::domain_error("idm_accel: range must be > 0");
  const double closing = -s.rr;
  double s_star = p.s0 + s.v * p.T + s.v * closing / (2.0 * std::sqrt(p.a_max * p.b));
  s_star = std::max(s_star, p.s0);
  const double free_term = std::pow(s.v / p.v0, 4.0);
  const double gap_term = (s_star / s.r) * (s_star / s.r);
  return p.a_max * (1.0 - free_term - gap_term);
}

/// IDM plus per-step additive Gaussian noise with standard deviation sqrt(Q).
inline double noisy_idm_accel(const TrafficState& s, const NoisyIdmParams& p, Rng& rng) {
  std::normal_distribution<double> noise(0.0, 1.0);
  return idm_accel(s, p.idm) + std::sqrt(p.q) * noise(rng);
}

/// Gap at which idm_accel is zero for a steady state at speed v (v_l == v).
inline double idm_equilibrium_gap(double v, const IdmParams& p) {
  const double denom = 1.0 - std::pow(v / p.v0, 4.0);
  if (!(denom > 0.0)) throw std::domain_error("idm_equilibrium_gap: v must be below v0");
  return (p.s0 + v * p.T) / std::sqrt(denom);
}

class IdmDriver : public DriverModel {
 public:
  explicit IdmDriver(IdmParams p) : params_(p) { params_.validate(); }
  double action(const StateWindow& window, Rng&) const override {
    return idm_accel(window.back(), params_);
  }
  const IdmParams& params() const { return params_; }

 private:
  IdmParams params_;
};

class NoisyIdmDriver : public DriverModel {
 public:
  explicit NoisyIdmDriver(NoisyIdmParams p) : params_(p) { params_.validate(); }
  double action(const StateWindow& window, Rng& rng) const override {
    return noisy_idm_accel(window.back(), params_, rng);
  }
  const NoisyIdmParams& params() const { return params_; }

 private:
  NoisyIdmParams params_;
};

}  // namespace cfsim
