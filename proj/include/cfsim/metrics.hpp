#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "cfsim/core.hpp"
#include "cfsim/sim.hpp"

namespace cfsim {

/// Uniform-bin histogram with normalized probabilities. Out-of-range samples
/// clamp into the edge bins.
struct Histogram {
  std::string name;
  std::vector<double> edges;       // n+1, strictly increasing
  std::vector<std::int64_t> counts;
  std::vector<double> probs;

  std::size_t bins() const { return counts.size(); }
};

inline std::vector<double> uniform_edges(double lo, double hi, int n) {
  if (!(hi > lo) || n < 1) throw std::invalid_argument("uniform_edges: bad range");
  std::vector<double> e(n + 1);
  for (int i = 0; i <= n; ++i) e[i] = lo + (hi - lo) * i / n;
  return e;
}

/// Half-open bins [e_i, e_{i+1}); a sample exactly on an interior edge counts
/// to the right.
inline Histogram build_histogram(const std::vector<double>& samples,
                                 const std::vector<double>& edges, std::string name = "") {
  if (edges.size() < 2) throw std::invalid_argument("build_histogram: need at least 2 edges");
  for (std::size_t i = 1; i < edges.size(); ++i) {
    if (!(edges[i] > edges[i - 1])) {
      throw std::invalid_argument("build_histogram: edges must be strictly increasing");
    }
  }
  if (samples.empty()) throw std::invalid_argument("build_histogram: no samples");
  Histogram h;
  h.name = std::move(name);
  h.edges = edges;
  const int n = static_cast<int>(edges.size()) - 1;
  h.counts.assign(n, 0);
  const double lo = edges.front(), width = (edges.back() - lo) / n;
  for (double x : samples) {
    int bin = static_cast<int>(std::floor((x - lo) / width));
    bin = std::clamp(bin, 0, n - 1);
    ++h.counts[bin];
  }
  h.probs.resize(n);
  for (int i = 0; i < n; ++i) {
    h.probs[i] = static_cast<double>(h.counts[i]) / static_cast<double>(samples.size());
  }
  return h;
}

/// -sum p log q~ with q~ epsilon-smoothed so empty q-bins stay finite.
/// Natural log.
inline double cross_entropy(const Histogram& p, const Histogram& q, double eps = 1e-9) {
  if (p.edges != q.edges) throw std::invalid_argument("cross_entropy: bin edges differ");
  const double n = static_cast<double>(p.bins());
  double h = 0.0;
  for (std::size_t i = 0; i < p.bins(); ++i) {
    if (p.probs[i] == 0.0) continue;
    h -= p.probs[i] * std::log((q.probs[i] + eps) / (1.0 + eps * n));
  }
  return h;
}

inline double entropy(const Histogram& p) { return cross_entropy(p, p); }

/// Time headway: range over follower speed.
inline double thw(const TrafficState& s) {
  if (!(s.v > 0.0)) throw std::domain_error("thw: follower speed must be > 0");
  return s.r / s.v;
}

struct DistributionEdges {
  std::vector<double> speed = uniform_edges(15.0, 40.0, 50);
  std::vector<double> range = uniform_edges(0.0, 120.0, 60);
  std::vector<double> thw = uniform_edges(0.0, 5.0, 50);
};

struct TrafficDistributions {
  Histogram speed, range, thw;
};

/// Pools per-step follower records (front-most vehicles carry no range and
/// are skipped) into speed/range/THW histograms.
inline TrafficDistributions traffic_distributions(const std::vector<MeasurementRow>& log,
                                                  const DistributionEdges& edges = {},
                                                  double burn_in_s = 60.0) {
  std::vector<double> vs, rs, hs;
  for (const auto& row : log) {
    if (row.t < burn_in_s || !std::isfinite(row.r)) continue;
    vs.push_back(row.v);
    rs.push_back(row.r);
    if (row.v > 0.0) hs.push_back(row.r / row.v);
  }
  if (vs.empty()) throw std::invalid_argument("traffic_distributions: empty log after exclusions");
  return {build_histogram(vs, edges.speed, "speed"), build_histogram(rs, edges.range, "range"),
          build_histogram(hs, edges.thw, "thw")};
}

/// Same measurements taken directly from a trajectory corpus (the reference
/// side of a comparison).
inline TrafficDistributions corpus_distributions(const std::vector<Trajectory>& trajs,
                                                 const DistributionEdges& edges = {}) {
  std::vector<double> vs, rs, hs;
  for (const auto& traj : trajs) {
    for (const auto& s : traj.samples) {
      vs.push_back(s.state.v);
      rs.push_back(s.state.r);
      if (s.state.v > 0.0) hs.push_back(s.state.r / s.state.v);
    }
  }
  if (vs.empty()) throw std::invalid_argument("corpus_distributions: empty corpus");
  return {build_histogram(vs, edges.speed, "speed"), build_histogram(rs, edges.range, "range"),
          build_histogram(hs, edges.thw, "thw")};
}

struct RolloutResult {
  // index 0 corresponds to the first predicted step (window end + 1)
  std::vector<double> mean_v_err, mean_a_err;  // averaged over draws
  std::vector<double> max_v_err;               // envelope over draws
};

/// Open-loop rollout: the follower evolves under the model while the leader
/// replays the recorded speed profile. Stochastic models are averaged over
/// n_draws independent repetitions.
inline RolloutResult rollout_error(const DriverModel& model, const Trajectory& traj, int n_draws,
                                   std::uint64_t seed, int window = kDefaultWindow,
                                   double a_min = -8.0, double a_max = 5.0) {
  if (traj.size() < static_cast<std::size_t>(window) + 2) {
    throw std::invalid_argument("rollout_error: trajectory shorter than W + 2");
  }
  const std::size_t horizon = traj.size() - window;
  RolloutResult out;
  out.mean_v_err.assign(horizon, 0.0);
  out.mean_a_err.assign(horizon, 0.0);
  out.max_v_err.assign(horizon, 0.0);

  for (int draw = 0; draw < n_draws; ++draw) {
    Rng rng = make_rng(seed, "rollout", draw);
    StateWindow win = make_window(traj, window - 1, window);
    double v = traj.samples[window - 1].state.v;
    double follower_x = 0.0;
    double leader_x = traj.samples[window - 1].state.r;

    for (std::size_t k = 0; k < horizon; ++k) {
      const std::size_t t = window - 1 + k;
      double a = model.action(win, rng);
      a = std::clamp(a, a_min, a_max);
      a = std::max(a, -v / traj.dt);

      follower_x += v * traj.dt;
      leader_x += traj.samples[t].state.v_l * traj.dt;
      v = v + a * traj.dt;
      const double v_l = traj.samples[t + 1].state.v_l;
      const double r = std::max(leader_x - follower_x, 0.1);
      win.states.erase(win.states.begin());
      win.states.push_back(TrafficState::make(v, v_l, r));

      const double v_err = std::abs(v - traj.samples[t + 1].state.v);
      out.mean_v_err[k] += v_err / n_draws;
      out.mean_a_err[k] += std::abs(a - traj.samples[t].accel) / n_draws;
      out.max_v_err[k] = std::max(out.max_v_err[k], v_err);
    }
  }
  return out;
}

}  // namespace cfsim
