#pragma once

#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "cfsim/rng.hpp"

namespace cfsim {

inline constexpr int kDefaultWindow = 10;
inline constexpr double kDefaultDt = 0.1;

/// strtod-based parse: unlike std::stod it accepts subnormal magnitudes
/// instead of throwing out_of_range on the ERANGE underflow.
inline double parse_double(const std::string& s) {
  const char* p = s.c_str();
  char* end = nullptr;
  const double v = std::strtod(p, &end);
  if (end == p) throw std::runtime_error("bad numeric field: " + s);
  return v;
}

/// One time-step car-following observation: follower speed v, leader speed
/// v_l, bumper gap r, range rate rr = v_l - v (positive when the gap opens).
struct TrafficState {
  double v = 0.0;    // m/s
  double v_l = 0.0;  // m/s
  double r = 0.0;    // m
  double rr = 0.0;   // m/s

  static TrafficState make(double v, double v_l, double r) {
    return TrafficState{v, v_l, r, v_l - v};
  }
};

/// The last W states fed to a driver model, oldest first.
struct StateWindow {
  std::vector<TrafficState> states;

  std::size_t size() const { return states.size(); }
  const TrafficState& back() const { return states.back(); }
};

/// Predicted acceleration quantiles, aligned index-for-index with the
/// probability grid that produced them.
struct ActionQuantiles {
  std::vector<double> values;  // m/s^2
};

/// A recorded leader-follower episode at fixed time step dt. The per-sample
/// acceleration is the follower's action label: a_t = (v_{t+1} - v_t)/dt for
/// every interior sample.
struct Trajectory {
  struct Sample {
    TrafficState state;
    double accel = 0.0;  // m/s^2
  };

  std::string id;
  std::string driver_id;
  double dt = kDefaultDt;
  std::vector<Sample> samples;

  std::size_t size() const { return samples.size(); }
  double duration() const {
    return samples.empty() ? 0.0 : (static_cast<double>(samples.size()) - 1.0) * dt;
  }
};

/// A training pair: input window plus the follower acceleration one step
/// after the window's end.
struct LabeledWindow {
  StateWindow window;
  double label = 0.0;  // m/s^2
};

/// Driver-model contract shared by QRLSTM and the IDM baselines. Stochastic
/// models draw from the supplied RNG; deterministic models ignore it.
class DriverModel {
 public:
  virtual ~DriverModel() = default;
  virtual double action(const StateWindow& window, Rng& rng) const = 0;
};

inline StateWindow make_window(const Trajectory& traj, std::size_t end_index,
                               int w = kDefaultWindow) {
  if (end_index >= traj.size() || end_index + 1 < static_cast<std::size_t>(w)) {
    throw std::out_of_range("make_window: trajectory " + traj.id + " too short for window ending at " +
                            std::to_string(end_index));
  }
  StateWindow win;
  win.states.reserve(w);
  for (std::size_t i = end_index + 1 - w; i <= end_index; ++i) {
    win.states.push_back(traj.samples[i].state);
  }
  return win;
}

/// Supervised target paired with make_window(traj, end_index): the action
/// taken at the window's final state, a = (v_{end+1} - v_end)/dt. The last
/// sample has no such forward difference, so it carries no label.
inline double label_of(const Trajectory& traj, std::size_t end_index) {
  if (end_index + 1 >= traj.size()) {
    throw std::out_of_range("label_of: no label past the end of trajectory " + traj.id);
  }
  return traj.samples[end_index].accel;
}

// ---------------------------------------------------------------------------
// Trajectory CSV: header `traj_id,t,v,v_l,r`; rr and a are derived on load.
// A traj_id of the form "<driver>:<n>" carries the driver tag.

inline void write_trajectories_csv(std::ostream& out, const std::vector<Trajectory>& trajs) {
  out << "traj_id,t,v,v_l,r\n";
  char buf[160];
  for (const auto& traj : trajs) {
    for (std::size_t i = 0; i < traj.samples.size(); ++i) {
      const auto& s = traj.samples[i].state;
      std::snprintf(buf, sizeof(buf), "%s,%.4f,%.12g,%.12g,%.12g\n", traj.id.c_str(),
                    static_cast<double>(i) * traj.dt, s.v, s.v_l, s.r);
      out << buf;
    }
  }
}

inline void write_trajectories_csv(const std::string& path, const std::vector<Trajectory>& trajs) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  write_trajectories_csv(out, trajs);
}

inline std::vector<Trajectory> read_trajectories_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("trajectory CSV: empty input");
  if (line.rfind("traj_id,t,v,v_l,r", 0) != 0) {
    throw std::runtime_error("trajectory CSV: unexpected header: " + line);
  }
  std::vector<Trajectory> trajs;
  std::map<std::string, std::size_t> index;
  struct Row {
    double t, v, v_l, r;
  };
  std::map<std::size_t, std::vector<Row>> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string id, field;
    Row row{};
    if (!std::getline(ss, id, ',')) throw std::runtime_error("trajectory CSV: bad line: " + line);
    double* dst[4] = {&row.t, &row.v, &row.v_l, &row.r};
    for (double* d : dst) {
      if (!std::getline(ss, field, ',')) throw std::runtime_error("trajectory CSV: bad line: " + line);
      *d = parse_double(field);
    }
    auto [it, fresh] = index.try_emplace(id, trajs.size());
    if (fresh) {
      Trajectory t;
      t.id = id;
      auto colon = id.find(':');
      if (colon != std::string::npos) t.driver_id = id.substr(0, colon);
      trajs.push_back(std::move(t));
    }
    rows[it->second].push_back(row);
  }
  for (auto& [ti, rs] : rows) {
    Trajectory& traj = trajs[ti];
    if (rs.size() >= 2) traj.dt = rs[1].t - rs[0].t;
    traj.samples.reserve(rs.size());
    for (const auto& r : rs) {
      traj.samples.push_back({TrafficState::make(r.v, r.v_l, r.r), 0.0});
    }
    for (std::size_t i = 0; i + 1 < traj.samples.size(); ++i) {
      traj.samples[i].accel = (traj.samples[i + 1].state.v - traj.samples[i].state.v) / traj.dt;
    }
  }
  return trajs;
}

inline std::vector<Trajectory> read_trajectories_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open: " + path);
  return read_trajectories_csv(in);
}

}  // namespace cfsim
