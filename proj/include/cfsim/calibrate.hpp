#pragma once

#include <algorithm>
#include <array>
#include <functional>
#include <numeric>
#include <vector>

#include "cfsim/baseline.hpp"
#include "cfsim/core.hpp"
#include "cfsim/rng.hpp"

namespace cfsim {

struct NelderMeadOptions {
  int max_iter = 4000;
  int restarts = 3;
  double f_tol = 1e-14;
  double initial_step = 0.10;  // relative simplex edge
};

struct NelderMeadResult {
  std::vector<double> x;
  double fx = 0.0;
  bool converged = false;
};

/// Derivative-free simplex minimization (standard reflection / expansion /
/// contraction / shrink coefficients). Each restart rebuilds the simplex
/// around the incumbent to escape degenerate geometry.
inline NelderMeadResult nelder_mead(const std::function<double(const std::vector<double>&)>& f,
                                    std::vector<double> x0, const NelderMeadOptions& opt = {}) {
  const std::size_t n = x0.size();
  NelderMeadResult result;
  result.x = x0;
  result.fx = f(x0);

  for (int round = 0; round <= opt.restarts; ++round) {
    std::vector<std::vector<double>> simplex(n + 1, result.x);
    for (std::size_t i = 0; i < n; ++i) {
      double step = opt.initial_step * std::abs(result.x[i]);
      if (step == 0.0) step = opt.initial_step;
      simplex[i + 1][i] += step / (round + 1.0);
    }
    std::vector<double> fv(n + 1);
    for (std::size_t i = 0; i <= n; ++i) fv[i] = f(simplex[i]);

    for (int iter = 0; iter < opt.max_iter; ++iter) {
      std::vector<std::size_t> order(n + 1);
      std::iota(order.begin(), order.end(), 0u);
      std::sort(order.begin(), order.end(), [&](auto a, auto b) { return fv[a] < fv[b]; });
      const std::size_t best = order[0], worst = order[n], second = order[n - 1];

      if (fv[worst] - fv[best] < opt.f_tol * (1.0 + std::abs(fv[best]))) {
        result.converged = true;
        break;
      }

      std::vector<double> centroid(n, 0.0);
      for (std::size_t i = 0; i <= n; ++i) {
        if (i == worst) continue;
        for (std::size_t d = 0; d < n; ++d) centroid[d] += simplex[i][d] / n;
      }
      auto blend = [&](double coef) {
        std::vector<double> x(n);
        for (std::size_t d = 0; d < n; ++d) {
          x[d] = centroid[d] + coef * (simplex[worst][d] - centroid[d]);
        }
        return x;
      };

      auto reflected = blend(-1.0);
      double fr = f(reflected);
      if (fr < fv[best]) {
        auto expanded = blend(-2.0);
        double fe = f(expanded);
        if (fe < fr) {
          simplex[worst] = std::move(expanded);
          fv[worst] = fe;
        } else {
          simplex[worst] = std::move(reflected);
          fv[worst] = fr;
        }
      } else if (fr < fv[second]) {
        simplex[worst] = std::move(reflected);
        fv[worst] = fr;
      } else {
        auto contracted = blend(fr < fv[worst] ? -0.5 : 0.5);
        double fc = f(contracted);
        if (fc < std::min(fr, fv[worst])) {
          simplex[worst] = std::move(contracted);
          fv[worst] = fc;
        } else {
          for (std::size_t i = 0; i <= n; ++i) {
            if (i == best) continue;
            for (std::size_t d = 0; d < n; ++d) {
              simplex[i][d] = simplex[best][d] + 0.5 * (simplex[i][d] - simplex[best][d]);
            }
            fv[i] = f(simplex[i]);
          }
        }
      }
    }
    std::size_t best = 0;
    for (std::size_t i = 1; i <= n; ++i) {
      if (fv[i] < fv[best]) best = i;
    }
    if (fv[best] < result.fx) {
      result.x = simplex[best];
      result.fx = fv[best];
    }
  }
  return result;
}

struct CalibrationResult {
  IdmParams params;
  double rmse = 0.0;  // m/s^2, on the fitting sample
  bool converged = true;
};

namespace detail {

inline IdmParams clamp_idm(const std::vector<double>& x) {
  auto clamp = [](double v, double lo, double hi) { return std::min(std::max(v, lo), hi); };
  IdmParams p;
  p.v0 = clamp(x[0], 1.0, 80.0);
  p.s0 = clamp(x[1], 0.05, 15.0);
  p.a_max = clamp(x[2], 0.01, 6.0);
  p.b = clamp(x[3], 0.05, 8.0);
  p.T = clamp(x[4], 0.05, 5.0);
  return p;
}

inline std::vector<std::pair<TrafficState, double>> labeled_states(
    const std::vector<Trajectory>& trajs, std::size_t cap, std::uint64_t seed) {
  std::vector<std::pair<TrafficState, double>> all;
  for (const auto& traj : trajs) {
    for (std::size_t i = 0; i + 1 < traj.size(); ++i) {
      if (traj.samples[i].state.r > 0.0) all.emplace_back(traj.samples[i].state, traj.samples[i].accel);
    }
  }
  if (all.size() > cap) {
    Rng rng = make_rng(seed, "calibrate-subsample");
    std::shuffle(all.begin(), all.end(), rng);
    all.resize(cap);
  }
  return all;
}

}  // namespace detail

/// Fit IDM parameters to observed accelerations by MSE, Nelder-Mead from the
/// default (paper-calibrated) parameters.
inline CalibrationResult calibrate_idm(const std::vector<Trajectory>& trajs,
                                       std::size_t max_samples = 50000,
                                       const NelderMeadOptions& opt = {}) {
  auto samples = detail::labeled_states(trajs, max_samples, 20240901ULL);
  if (samples.size() < 1000) {
    throw std::invalid_argument("calibrate_idm: need at least 1000 labeled samples, got " +
                                std::to_string(samples.size()));
  }
  // quadratic out-of-bounds penalty: a hard clamp would flatten the objective
  // at the box faces and stall the simplex there
  auto objective = [&](const std::vector<double>& x) {
    const IdmParams p = detail::clamp_idm(x);
    const double clamped[5] = {p.v0, p.s0, p.a_max, p.b, p.T};
    double penalty = 0.0;
    for (int i = 0; i < 5; ++i) {
      const double d = x[i] - clamped[i];
      penalty += d * d;
    }
    double sse = 0.0;
    for (const auto& [state, accel] : samples) {
      const double e = idm_accel(state, p) - accel;
      sse += e * e;
    }
    return sse / static_cast<double>(samples.size()) + penalty;
  };

  const IdmParams s0;  // paper-calibrated defaults
  const std::vector<std::vector<double>> starts = {
      {s0.v0, s0.s0, s0.a_max, s0.b, s0.T},
      {30.0, 2.0, 1.0, 1.5, 1.0},
      {35.0, 3.0, 0.5, 1.0, 2.0},
  };
  NelderMeadResult fit;
  fit.fx = std::numeric_limits<double>::infinity();
  for (const auto& start : starts) {
    auto candidate = nelder_mead(objective, start, opt);
    if (candidate.fx < fit.fx) fit = std::move(candidate);
  }

  CalibrationResult result;
  result.params = detail::clamp_idm(fit.x);
  double sse = 0.0;  // report the penalty-free residual of the clamped fit
  for (const auto& [state, accel] : samples) {
    const double e = idm_accel(state, result.params) - accel;
    sse += e * e;
  }
  result.rmse = std::sqrt(sse / static_cast<double>(samples.size()));
  result.converged = fit.converged;
  return result;
}

/// Residual acceleration variance w.r.t. a fitted IDM; the Q of Eq-5-style
/// additive noise.
inline double estimate_fluctuation(const std::vector<Trajectory>& trajs, const IdmParams& params,
                                   std::size_t max_samples = 200000) {
  auto samples = detail::labeled_states(trajs, max_samples, 20240902ULL);
  if (samples.empty()) throw std::invalid_argument("estimate_fluctuation: no labeled samples");
  double sse = 0.0;
  for (const auto& [state, accel] : samples) {
    const double e = accel - idm_accel(state, params);
    sse += e * e;
  }
  return sse / static_cast<double>(samples.size());
}

}  // namespace cfsim
