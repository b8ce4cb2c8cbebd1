#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include <json.hpp>

#include "cfsim/baseline.hpp"
#include "cfsim/core.hpp"
#include "cfsim/rng.hpp"

namespace cfsim {

/// Car-following filter: keep stretches at highway speed with a leader in
/// plausible sensing range.
struct FilterCriteria {
  double min_speed = 20.0;     // m/s
  bool require_leader = true;
  double max_range = 120.0;    // m
};

inline bool state_passes(const TrafficState& s, const FilterCriteria& c) {
  if (!(s.v > c.min_speed)) return false;
  if (c.require_leader && !(s.r > 0.0 && s.r <= c.max_range)) return false;
  return true;
}

/// Splits each trajectory at criterion violations and keeps maximal valid
/// segments lasting at least 1 s.
inline std::vector<Trajectory> filter_car_following(const std::vector<Trajectory>& trajs,
                                                    const FilterCriteria& c) {
  std::vector<Trajectory> out;
  for (const auto& traj : trajs) {
    std::size_t start = 0;
    int segment = 0;
    auto emit = [&](std::size_t begin, std::size_t end) {  // [begin, end)
      if (end <= begin) return;
      Trajectory seg;
      seg.dt = traj.dt;
      seg.driver_id = traj.driver_id;
      seg.samples.assign(traj.samples.begin() + begin, traj.samples.begin() + end);
      if (seg.duration() < 1.0) return;
      seg.id = segment == 0 && begin == 0 && end == traj.size()
                   ? traj.id
                   : traj.id + "#" + std::to_string(segment);
      ++segment;
      out.push_back(std::move(seg));
    };
    for (std::size_t i = 0; i < traj.size(); ++i) {
      if (!state_passes(traj.samples[i].state, c)) {
        emit(start, i);
        start = i + 1;
      }
    }
    emit(start, traj.size());
  }
  return out;
}

/// All (window, next-step acceleration) pairs: L - W samples per trajectory
/// of length L, in deterministic order.
inline std::vector<LabeledWindow> make_dataset(const std::vector<Trajectory>& trajs,
                                               int w = kDefaultWindow) {
  if (w < 1) throw std::invalid_argument("make_dataset: window length must be >= 1");
  std::vector<LabeledWindow> out;
  for (const auto& traj : trajs) {
    if (traj.size() < static_cast<std::size_t>(w) + 1) continue;
    for (std::size_t end = w - 1; end + 1 < traj.size(); ++end) {
      out.push_back({make_window(traj, end, w), label_of(traj, end)});
    }
  }
  return out;
}

/// Uniform random split without replacement; both halves keep dataset order.
inline std::pair<std::vector<LabeledWindow>, std::vector<LabeledWindow>> split(
    const std::vector<LabeledWindow>& dataset, double val_fraction, std::uint64_t seed) {
  if (!(val_fraction > 0.0 && val_fraction < 1.0)) {
    throw std::invalid_argument("split: val_fraction must be in (0,1)");
  }
  std::vector<std::size_t> idx(dataset.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng = make_rng(seed, "split");
  std::shuffle(idx.begin(), idx.end(), rng);
  const std::size_t n_val = static_cast<std::size_t>(std::lround(val_fraction * dataset.size()));
  std::vector<bool> in_val(dataset.size(), false);
  for (std::size_t i = 0; i < n_val; ++i) in_val[idx[i]] = true;
  std::pair<std::vector<LabeledWindow>, std::vector<LabeledWindow>> result;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    (in_val[i] ? result.second : result.first).push_back(dataset[i]);
  }
  return result;
}

// ---------------------------------------------------------------------------
// Synthetic naturalistic-driving corpus: a heterogeneous population of noisy
// IDM drivers following randomized leader speed profiles.

/// Truncated-normal sampler for one IDM field.
struct ParamDist {
  double mean = 0.0, stddev = 0.0, min = 0.0, max = 0.0;

  double sample(Rng& rng) const {
    std::normal_distribution<double> n(mean, stddev);
    return std::clamp(n(rng), min, max);
  }
};

inline void to_json(nlohmann::json& j, const ParamDist& d) {
  j = {{"mean", d.mean}, {"stddev", d.stddev}, {"min", d.min}, {"max", d.max}};
}

inline void from_json(const nlohmann::json& j, ParamDist& d) {
  j.at("mean").get_to(d.mean);
  j.at("stddev").get_to(d.stddev);
  j.at("min").get_to(d.min);
  j.at("max").get_to(d.max);
}

/// Distributions the driver population is drawn from, plus the spread of
/// exposure (travel-time) weights.
struct PopulationSpec {
  int n_drivers = 66;
  ParamDist v0{33.0, 2.5, 28.0, 40.0};
  ParamDist s0{2.0, 0.6, 0.8, 4.0};
  ParamDist a_max{0.8, 0.25, 0.3, 1.5};
  ParamDist b{1.5, 0.4, 0.6, 3.0};
  ParamDist T{1.2, 0.35, 0.5, 2.2};
  ParamDist q{0.08, 0.03, 0.01, 0.20};
  double weight_sigma = 0.15;  // lognormal sigma of exposure weights
};

inline void to_json(nlohmann::json& j, const PopulationSpec& s) {
  j = {{"n_drivers", s.n_drivers}, {"v0", s.v0},       {"s0", s.s0},
       {"a_max", s.a_max},         {"b", s.b},         {"T", s.T},
       {"Q", s.q},                 {"weight_sigma", s.weight_sigma}};
}

inline void from_json(const nlohmann::json& j, PopulationSpec& s) {
  j.at("n_drivers").get_to(s.n_drivers);
  j.at("v0").get_to(s.v0);
  j.at("s0").get_to(s.s0);
  j.at("a_max").get_to(s.a_max);
  j.at("b").get_to(s.b);
  j.at("T").get_to(s.T);
  j.at("Q").get_to(s.q);
  j.at("weight_sigma").get_to(s.weight_sigma);
  if (s.n_drivers < 1) throw std::invalid_argument("PopulationSpec: n_drivers must be >= 1");
}

struct SynthPopulation {
  struct Driver {
    std::string id;
    NoisyIdmParams params;
    double weight = 0.0;  // exposure share; all weights sum to 1
  };
  std::vector<Driver> drivers;

  static SynthPopulation sample(const PopulationSpec& spec, std::uint64_t seed) {
    SynthPopulation pop;
    Rng rng = make_rng(seed, "population");
    std::lognormal_distribution<double> wdist(0.0, spec.weight_sigma);
    double wsum = 0.0;
    for (int i = 0; i < spec.n_drivers; ++i) {
      Driver d;
      char buf[16];
      std::snprintf(buf, sizeof(buf), "d%03d", i);
      d.id = buf;
      d.params.idm.v0 = spec.v0.sample(rng);
      d.params.idm.s0 = spec.s0.sample(rng);
      d.params.idm.a_max = spec.a_max.sample(rng);
      d.params.idm.b = spec.b.sample(rng);
      d.params.idm.T = spec.T.sample(rng);
      d.params.q = spec.q.sample(rng);
      d.params.validate();
      d.weight = wdist(rng);
      wsum += d.weight;
      pop.drivers.push_back(std::move(d));
    }
    for (auto& d : pop.drivers) d.weight /= wsum;
    return pop;
  }
};

inline void to_json(nlohmann::json& j, const SynthPopulation::Driver& d) {
  j = {{"id", d.id}, {"params", d.params}, {"weight", d.weight}};
}

inline void from_json(const nlohmann::json& j, SynthPopulation::Driver& d) {
  j.at("id").get_to(d.id);
  j.at("params").get_to(d.params);
  j.at("weight").get_to(d.weight);
  if (!(d.weight > 0.0)) throw std::invalid_argument("SynthPopulation: weights must be positive");
}

inline void to_json(nlohmann::json& j, const SynthPopulation& p) { j = {{"drivers", p.drivers}}; }

inline void from_json(const nlohmann::json& j, SynthPopulation& p) {
  j.at("drivers").get_to(p.drivers);
}

struct GenConfig {
  double total_hours = 2.0;
  double dt = kDefaultDt;
  double min_traj_s = 120.0;
  double max_traj_s = 420.0;
  // Leader speed: Ornstein-Uhlenbeck around a target that re-ramps every
  // retarget_s seconds; tuned so the corpus stays in the highway regime but
  // keeps the leader in motion (every ~30 s slice sees a ramp), and so the
  // slowest drivers (a_max ~0.3) never lag far enough to breach the
  // car-following filter's 120 m range bound.
  double ou_theta = 0.12;       // 1/s
  double ou_sigma = 0.55;       // m/s per sqrt(s)
  double target_low = 24.0;     // m/s
  double target_high = 29.5;    // m/s
  double leader_clamp_low = 21.5;
  double leader_clamp_high = 32.0;
  double retarget_s = 10.0;
  double min_hours_per_driver = 0.0;  // top-up quota after weighted sampling
};

inline void to_json(nlohmann::json& j, const GenConfig& g) {
  j = {{"total_hours", g.total_hours},   {"dt", g.dt},
       {"min_traj_s", g.min_traj_s},     {"max_traj_s", g.max_traj_s},
       {"ou_theta", g.ou_theta},         {"ou_sigma", g.ou_sigma},
       {"target_low", g.target_low},     {"target_high", g.target_high},
       {"leader_clamp_low", g.leader_clamp_low}, {"leader_clamp_high", g.leader_clamp_high},
       {"retarget_s", g.retarget_s},     {"min_hours_per_driver", g.min_hours_per_driver}};
}

inline void from_json(const nlohmann::json& j, GenConfig& g) {
  g = GenConfig{};
  j.at("total_hours").get_to(g.total_hours);
  if (j.contains("dt")) j.at("dt").get_to(g.dt);
  if (j.contains("min_traj_s")) j.at("min_traj_s").get_to(g.min_traj_s);
  if (j.contains("max_traj_s")) j.at("max_traj_s").get_to(g.max_traj_s);
  if (j.contains("ou_theta")) j.at("ou_theta").get_to(g.ou_theta);
  if (j.contains("ou_sigma")) j.at("ou_sigma").get_to(g.ou_sigma);
  if (j.contains("target_low")) j.at("target_low").get_to(g.target_low);
  if (j.contains("target_high")) j.at("target_high").get_to(g.target_high);
  if (j.contains("leader_clamp_low")) j.at("leader_clamp_low").get_to(g.leader_clamp_low);
  if (j.contains("leader_clamp_high")) j.at("leader_clamp_high").get_to(g.leader_clamp_high);
  if (j.contains("retarget_s")) j.at("retarget_s").get_to(g.retarget_s);
  if (j.contains("min_hours_per_driver")) j.at("min_hours_per_driver").get_to(g.min_hours_per_driver);
  if (!(g.total_hours > 0)) throw std::invalid_argument("GenConfig: total_hours must be > 0");
  if (!(g.dt > 0)) throw std::invalid_argument("GenConfig: dt must be > 0");
}

namespace detail {

/// One leader-follower episode. The per-pair RNG makes generation order-free:
/// pair k is identical whether pairs run serially or in parallel.
inline Trajectory simulate_pair(const SynthPopulation::Driver& driver, double duration_s,
                                const GenConfig& g, Rng& rng, const std::string& traj_id) {
  Trajectory traj;
  traj.id = traj_id;
  traj.driver_id = driver.id;
  traj.dt = g.dt;

  std::normal_distribution<double> noise(0.0, 1.0);
  // keep the leader target below the driver's desired speed so the follower
  // can hold the gap
  const double hi = std::max(g.target_low + 0.5, std::min(g.target_high, driver.params.idm.v0 - 2.0));
  std::uniform_real_distribution<double> utarget(std::min(g.target_low, hi - 0.5), hi);

  double target = utarget(rng);
  double v_l = target;
  double v = v_l;
  double leader_x = idm_equilibrium_gap(std::min(v, driver.params.idm.v0 * 0.98), driver.params.idm);
  double follower_x = 0.0;
  double since_retarget = 0.0;

  const std::size_t steps = static_cast<std::size_t>(std::lround(duration_s / g.dt));
  traj.samples.reserve(steps + 1);
  for (std::size_t k = 0; k <= steps; ++k) {
    const double r = leader_x - follower_x;
    const TrafficState state = TrafficState::make(v, v_l, r);

    double a = noisy_idm_accel(state, driver.params, rng);
    double v_next = std::max(v + a * g.dt, 0.0);
    a = (v_next - v) / g.dt;  // label reflects the applied update
    traj.samples.push_back({state, a});

    // leader OU step
    since_retarget += g.dt;
    if (since_retarget >= g.retarget_s) {
      target = utarget(rng);
      since_retarget = 0.0;
    }
    v_l += g.ou_theta * (target - v_l) * g.dt + g.ou_sigma * std::sqrt(g.dt) * noise(rng);
    v_l = std::clamp(v_l, g.leader_clamp_low, g.leader_clamp_high);

    leader_x += state.v_l * g.dt;
    follower_x += v * g.dt;
    v = v_next;
  }
  traj.samples.back().accel = 0.0;  // no next-step speed to difference against
  return traj;
}

}  // namespace detail

/// Synthetic stand-in for a naturalistic driving corpus. Drivers are assigned
/// to episodes by largest-remainder proportional scheduling on the exposure
/// weights (matches the weights tighter than i.i.d. draws and stays
/// deterministic per seed).
inline std::vector<Trajectory> generate_synth_ndd(const SynthPopulation& pop, const GenConfig& g,
                                                  std::uint64_t seed) {
  if (!(g.total_hours > 0)) throw std::invalid_argument("generate_synth_ndd: total_hours must be > 0");
  if (pop.drivers.empty()) throw std::invalid_argument("generate_synth_ndd: empty population");

  std::vector<Trajectory> out;
  std::vector<double> driver_seconds(pop.drivers.size(), 0.0);
  std::vector<std::size_t> driver_pairs(pop.drivers.size(), 0);
  double total = 0.0;
  std::size_t pair = 0;

  auto run_pair = [&](std::size_t d) {
    Rng rng = make_rng(seed, "pair", pair);
    std::uniform_real_distribution<double> udur(g.min_traj_s, g.max_traj_s);
    const double duration = udur(rng);
    auto traj = detail::simulate_pair(pop.drivers[d], duration, g, rng,
                                      pop.drivers[d].id + ":" + std::to_string(pair));
    driver_seconds[d] += traj.duration();
    driver_pairs[d] += 1;
    total += traj.duration();
    out.push_back(std::move(traj));
    ++pair;
  };

  while (total < g.total_hours * 3600.0) {
    // largest remainder: the driver furthest behind its weighted share
    std::size_t best = 0;
    double best_deficit = -std::numeric_limits<double>::infinity();
    for (std::size_t d = 0; d < pop.drivers.size(); ++d) {
      const double deficit =
          pop.drivers[d].weight * static_cast<double>(pair + 1) - static_cast<double>(driver_pairs[d]);
      if (deficit > best_deficit) {
        best_deficit = deficit;
        best = d;
      }
    }
    run_pair(best);
  }
  for (std::size_t d = 0; d < pop.drivers.size(); ++d) {
    while (driver_seconds[d] < g.min_hours_per_driver * 3600.0) run_pair(d);
  }
  return out;
}

}  // namespace cfsim
