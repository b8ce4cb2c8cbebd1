#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "cfsim/core.hpp"
#include "cfsim/data.hpp"
#include "cfsim/density.hpp"

namespace cfsim::testing {

/// Trajectory from explicit follower/leader speed profiles; range integrates
/// the speed difference, labels are forward differences of the speeds.
inline Trajectory trajectory_from_speeds(const std::vector<double>& v,
                                         const std::vector<double>& v_l, double r0,
                                         double dt = kDefaultDt) {
  Trajectory traj;
  traj.id = "test";
  traj.dt = dt;
  double r = r0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    traj.samples.push_back({TrafficState::make(v[i], v_l[i], r), 0.0});
    r += (v_l[i] - v[i]) * dt;
  }
  for (std::size_t i = 0; i + 1 < v.size(); ++i) {
    traj.samples[i].accel = (v[i + 1] - v[i]) / dt;
  }
  return traj;
}

inline Trajectory constant_trajectory(std::size_t n, double v = 30.0, double r0 = 40.0) {
  return trajectory_from_speeds(std::vector<double>(n, v), std::vector<double>(n, v), r0);
}

inline Trajectory random_trajectory(std::size_t n, Rng& rng, double v0 = 28.0, double r0 = 40.0) {
  std::normal_distribution<double> jitter(0.0, 0.4);
  std::vector<double> v(n), v_l(n);
  v[0] = v0;
  v_l[0] = v0 + 0.5;
  for (std::size_t i = 1; i < n; ++i) {
    v[i] = std::max(21.0, v[i - 1] + jitter(rng) * kDefaultDt * 5.0);
    v_l[i] = std::max(21.0, v_l[i - 1] + jitter(rng) * kDefaultDt * 5.0);
  }
  return trajectory_from_speeds(v, v_l, r0);
}

inline SynthPopulation single_driver_population(const IdmParams& params, double q) {
  SynthPopulation pop;
  pop.drivers.push_back({"d000", NoisyIdmParams{params, q}, 1.0});
  return pop;
}

inline double simpson(const std::function<double(double)>& f, double lo, double hi, int n = 20000) {
  if (n % 2 != 0) ++n;
  const double h = (hi - lo) / n;
  double sum = f(lo) + f(hi);
  for (int i = 1; i < n; ++i) sum += f(lo + i * h) * (i % 2 ? 4.0 : 2.0);
  return sum * h / 3.0;
}

/// Standard normal quantile by bisection on the CDF; test-side oracle.
inline double inv_normal_cdf(double p) {
  double lo = -10.0, hi = 10.0;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    (normal_cdf(mid) < p ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

/// Kolmogorov-Smirnov statistic of samples against an analytic CDF.
inline double ks_statistic(std::vector<double> samples, const std::function<double(double)>& cdf) {
  std::sort(samples.begin(), samples.end());
  const double n = static_cast<double>(samples.size());
  double d = 0.0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const double f = cdf(samples[i]);
    d = std::max(d, std::abs(f - static_cast<double>(i) / n));
    d = std::max(d, std::abs(static_cast<double>(i + 1) / n - f));
  }
  return d;
}

}  // namespace cfsim::testing
