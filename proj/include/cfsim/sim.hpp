#pragma once

#include <algorithm>
#include <cmath>
#include <deque>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "cfsim/baseline.hpp"
#include "cfsim/core.hpp"
#include "cfsim/rng.hpp"

namespace cfsim {

struct SimConfig {
  double road_length = 4828.0;  // m (3 miles)
  double demand = 1000.0;       // vehicles/hour
  double duration = 3600.0;     // s
  double dt = kDefaultDt;       // s
  int warmup_steps = 9;         // deterministic-IDM steps to fill a window
  std::uint64_t seed = 0;
  double a_min = -8.0;          // m/s^2
  double a_max_phys = 5.0;      // m/s^2
  double min_insert_gap = 25.0; // m
  IdmParams warmup_idm;         // deterministic model used during warmup

  void validate() const {
    if (!(dt > 0)) throw std::invalid_argument("SimConfig: dt must be > 0");
    if (demand < 0) throw std::invalid_argument("SimConfig: demand must be >= 0");
    if (!(road_length > 0)) throw std::invalid_argument("SimConfig: road_length must be > 0");
    warmup_idm.validate();
  }
};

inline void to_json(nlohmann::json& j, const SimConfig& c) {
  j = {{"road_length", c.road_length}, {"demand", c.demand},
       {"duration", c.duration},       {"dt", c.dt},
       {"warmup_steps", c.warmup_steps}, {"seed", c.seed},
       {"a_min", c.a_min},             {"a_max_phys", c.a_max_phys},
       {"min_insert_gap", c.min_insert_gap}, {"warmup_idm", c.warmup_idm}};
}

inline void from_json(const nlohmann::json& j, SimConfig& c) {
  c = SimConfig{};
  j.at("road_length").get_to(c.road_length);
  j.at("demand").get_to(c.demand);
  j.at("duration").get_to(c.duration);
  if (j.contains("dt")) j.at("dt").get_to(c.dt);
  if (j.contains("warmup_steps")) j.at("warmup_steps").get_to(c.warmup_steps);
  if (j.contains("seed")) j.at("seed").get_to(c.seed);
  if (j.contains("a_min")) j.at("a_min").get_to(c.a_min);
  if (j.contains("a_max_phys")) j.at("a_max_phys").get_to(c.a_max_phys);
  if (j.contains("min_insert_gap")) j.at("min_insert_gap").get_to(c.min_insert_gap);
  if (j.contains("warmup_idm")) j.at("warmup_idm").get_to(c.warmup_idm);
  c.validate();
}

/// Driver models available for assignment to spawned vehicles, with exposure
/// weights. Models are owned by the caller and shared read-only.
struct DriverPopulation {
  std::vector<const DriverModel*> models;
  std::vector<std::string> ids;
  std::vector<double> weights;

  void validate() const {
    if (models.empty() || models.size() != ids.size() || models.size() != weights.size()) {
      throw std::invalid_argument("DriverPopulation: inconsistent or empty population");
    }
  }
};

struct MeasurementRow {
  double t = 0.0;
  int vehicle_id = 0;
  int driver_idx = -1;  // index into population ids
  double x = 0.0, v = 0.0;
  double r = std::numeric_limits<double>::quiet_NaN();
  double rr = std::numeric_limits<double>::quiet_NaN();
  double a = 0.0;
};

enum class SimEventType { Spawn, Exit, Collision, BlockedSpawn };

inline const char* to_string(SimEventType t) {
  switch (t) {
    case SimEventType::Spawn: return "spawn";
    case SimEventType::Exit: return "exit";
    case SimEventType::Collision: return "collision";
    case SimEventType::BlockedSpawn: return "blocked_spawn";
  }
  return "?";
}

struct SimEvent {
  SimEventType type;
  double t = 0.0;
  int vehicle_id = -1;
};

struct SimResult {
  std::vector<MeasurementRow> log;
  std::vector<SimEvent> events;
  std::vector<std::string> driver_ids;  // driver_idx -> id
};

/// Single-lane car-following world: ordered vehicles (front-most first),
/// demand-driven spawning, positional-order update.
class Simulation {
 public:
  Simulation(SimConfig cfg, const std::vector<TrafficState>& empirical,
             const DriverPopulation& pop, int window = kDefaultWindow)
      : cfg_(cfg),
        empirical_(&empirical),
        pop_(&pop),
        window_(window),
        spawn_rng_(make_rng(cfg.seed, "spawn")),
        init_rng_(make_rng(cfg.seed, "initialize")) {
    cfg_.validate();
    pop_->validate();
    if (empirical.empty()) throw std::invalid_argument("Simulation: empty empirical source");
  }

  /// Places the first leader-follower pair from an empirical (v_l0, r0, v0)
  /// sample, then advances warmup_steps of deterministic IDM so both windows
  /// are full. The clock is 0 when this returns.
  void initialize() {
    const TrafficState s0 = sample_state(init_rng_);
    Vehicle leader = spawn_vehicle(s0.r, s0.v_l, TrafficState::make(s0.v_l, s0.v_l, 1e9));
    Vehicle follower = spawn_vehicle(0.0, s0.v, s0);
    follower.warmup_left = cfg_.warmup_steps;
    vehicles_ = {std::move(leader), std::move(follower)};
    for (int k = 0; k < cfg_.warmup_steps; ++k) step_impl(false);
    clock_ = 0.0;
  }

  void step() { step_impl(true); }

  /// Binomial spawning at probability demand*dt/3600, blocked while the
  /// rear-most vehicle is within min_insert_gap of the road start.
  void maybe_spawn() {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const double p = std::min(1.0, cfg_.demand * cfg_.dt / 3600.0);
    if (!(u(spawn_rng_) < p)) return;
    if (!vehicles_.empty() && vehicles_.back().x < cfg_.min_insert_gap) {
      result_.events.push_back({SimEventType::BlockedSpawn, clock_, -1});
      return;
    }
    double speed;
    TrafficState init;
    if (vehicles_.empty()) {
      speed = sample_state(spawn_rng_).v;
      init = TrafficState::make(speed, speed, 1e9);
    } else {
      const Vehicle& rear = vehicles_.back();
      speed = rear.v;
      init = TrafficState::make(speed, rear.v, std::max(rear.x, 0.1));
    }
    Vehicle v = spawn_vehicle(0.0, speed, init);
    v.warmup_left = cfg_.warmup_steps;
    result_.events.push_back({SimEventType::Spawn, clock_, v.id});
    vehicles_.push_back(std::move(v));
  }

  SimResult run() {
    initialize();
    const long steps = std::lround(cfg_.duration / cfg_.dt);
    result_.log.reserve(static_cast<std::size_t>(steps) * 4);
    for (long k = 0; k < steps; ++k) {
      step();
      maybe_spawn();
    }
    result_.driver_ids = pop_->ids;
    return std::move(result_);
  }

  double clock() const { return clock_; }
  std::size_t vehicle_count() const { return vehicles_.size(); }
  const std::vector<SimEvent>& events() const { return result_.events; }

  /// Read-only copy of the current world state, front-most vehicle first.
  struct VehicleView {
    int id = 0;
    int driver_idx = 0;
    double x = 0.0, v = 0.0;
    std::vector<TrafficState> window;
  };
  std::vector<VehicleView> snapshot() const {
    std::vector<VehicleView> out;
    out.reserve(vehicles_.size());
    for (const auto& veh : vehicles_) {
      out.push_back({veh.id, veh.driver_idx, veh.x, veh.v,
                     {veh.window.begin(), veh.window.end()}});
    }
    return out;
  }

 private:
  struct Vehicle {
    int id = 0;
    int driver_idx = 0;
    double x = 0.0, v = 0.0;
    std::deque<TrafficState> window;
    Rng rng;
    int warmup_left = 0;
  };

  TrafficState sample_state(Rng& rng) {
    std::uniform_int_distribution<std::size_t> pick(0, empirical_->size() - 1);
    return (*empirical_)[pick(rng)];
  }

  int sample_driver(Rng& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    double total = 0.0;
    for (double w : pop_->weights) total += w;
    double draw = u(rng) * total;
    for (std::size_t i = 0; i < pop_->weights.size(); ++i) {
      draw -= pop_->weights[i];
      if (draw < 0.0) return static_cast<int>(i);
    }
    return static_cast<int>(pop_->weights.size()) - 1;
  }

  Vehicle spawn_vehicle(double x, double v, const TrafficState& init_state) {
    Vehicle veh;
    veh.id = next_id_++;
    veh.driver_idx = sample_driver(spawn_rng_);
    veh.x = x;
    veh.v = v;
    veh.rng = make_rng(cfg_.seed, "vehicle", static_cast<std::uint64_t>(veh.id));
    veh.window.assign(window_, init_state);
    return veh;
  }

  void step_impl(bool record) {
    const std::size_t n = vehicles_.size();
    std::vector<double> accel(n, 0.0);
    StateWindow scratch;
    for (std::size_t i = 0; i < n; ++i) {
      Vehicle& veh = vehicles_[i];
      double a = 0.0;
      if (i > 0) {  // front-most holds constant speed
        if (veh.warmup_left > 0) {
          a = idm_accel(veh.window.back(), cfg_.warmup_idm);
          --veh.warmup_left;
        } else {
          scratch.states.assign(veh.window.begin(), veh.window.end());
          a = pop_->models[veh.driver_idx]->action(scratch, veh.rng);
          if (!std::isfinite(a)) {
            throw std::runtime_error("simulation: non-finite action from vehicle " +
                                     std::to_string(veh.id) + " at t=" + std::to_string(clock_));
          }
        }
        a = std::clamp(a, cfg_.a_min, cfg_.a_max_phys);
        a = std::max(a, -veh.v / cfg_.dt);  // speed stays >= 0
      }
      accel[i] = a;
      if (record) {
        MeasurementRow row;
        row.t = clock_;
        row.vehicle_id = veh.id;
        row.driver_idx = veh.driver_idx;
        row.x = veh.x;
        row.v = veh.v;
        if (i > 0) {
          row.r = veh.window.back().r;
          row.rr = veh.window.back().rr;
        }
        row.a = a;
        result_.log.push_back(row);
      }
    }

    for (std::size_t i = 0; i < n; ++i) {
      Vehicle& veh = vehicles_[i];
      veh.x += veh.v * cfg_.dt;
      veh.v += accel[i] * cfg_.dt;
      // the v >= 0 bound is enforced through the action, so rounding can
      // leave a +/- subnormal residue near a standstill; flush it to zero
      if (veh.v < 1e-12) veh.v = 0.0;
    }

    while (!vehicles_.empty() && vehicles_.front().x > cfg_.road_length) {
      result_.events.push_back({SimEventType::Exit, clock_, vehicles_.front().id});
      vehicles_.erase(vehicles_.begin());
    }

    for (std::size_t i = 1; i < vehicles_.size(); ++i) {
      Vehicle& veh = vehicles_[i];
      const Vehicle& lead = vehicles_[i - 1];
      double r = lead.x - veh.x;
      if (r <= 0.0) {
        result_.events.push_back({SimEventType::Collision, clock_, veh.id});
        veh.x = lead.x - 0.1;
        veh.v = lead.v;
        r = 0.1;
      }
      veh.window.push_back(TrafficState::make(veh.v, lead.v, r));
      if (static_cast<int>(veh.window.size()) > window_) veh.window.pop_front();
    }
    clock_ += cfg_.dt;
  }

  SimConfig cfg_;
  const std::vector<TrafficState>* empirical_;
  const DriverPopulation* pop_;
  int window_;
  Rng spawn_rng_, init_rng_;
  std::vector<Vehicle> vehicles_;  // front-most first
  SimResult result_;
  double clock_ = 0.0;
  int next_id_ = 0;
};

inline SimResult run_simulation(const SimConfig& cfg, const std::vector<TrafficState>& empirical,
                                const DriverPopulation& pop, int window = kDefaultWindow) {
  Simulation sim(cfg, empirical, pop, window);
  return sim.run();
}

// ---------------------------------------------------------------------------
// Log serialization: measurement CSV + JSON-lines events.

inline void write_measurement_csv(std::ostream& out, const SimResult& result) {
  out << "t,vehicle_id,driver_id,x,v,r,rr,a\n";
  char buf[224];
  for (const auto& row : result.log) {
    const char* did = row.driver_idx >= 0 ? result.driver_ids[row.driver_idx].c_str() : "";
    std::snprintf(buf, sizeof(buf), "%.1f,%d,%s,%.9g,%.9g,%.9g,%.9g,%.9g\n", row.t, row.vehicle_id,
                  did, row.x, row.v, row.r, row.rr, row.a);
    out << buf;
  }
}

inline void write_measurement_csv(const std::string& path, const SimResult& result) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  write_measurement_csv(out, result);
}

inline std::vector<MeasurementRow> read_measurement_csv(std::istream& in,
                                                        std::vector<std::string>& driver_ids) {
  std::string line;
  if (!std::getline(in, line) || line.rfind("t,vehicle_id,driver_id", 0) != 0) {
    throw std::runtime_error("measurement CSV: bad header");
  }
  std::vector<MeasurementRow> rows;
  std::map<std::string, int> id_index;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string f;
    MeasurementRow row;
    std::getline(ss, f, ',');
    row.t = parse_double(f);
    std::getline(ss, f, ',');
    row.vehicle_id = std::stoi(f);
    std::getline(ss, f, ',');
    if (!f.empty()) {
      auto [it, fresh] = id_index.try_emplace(f, static_cast<int>(driver_ids.size()));
      if (fresh) driver_ids.push_back(f);
      row.driver_idx = it->second;
    }
    double* dst[5] = {&row.x, &row.v, &row.r, &row.rr, &row.a};
    for (double* d : dst) {
      std::getline(ss, f, ',');
      *d = parse_double(f);
    }
    rows.push_back(row);
  }
  return rows;
}

inline void write_events_jsonl(const std::string& path, const SimResult& result) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  for (const auto& e : result.events) {
    nlohmann::json j{{"type", to_string(e.type)}, {"t", e.t}, {"vehicle_id", e.vehicle_id}};
    out << j.dump() << '\n';
  }
}

}  // namespace cfsim
