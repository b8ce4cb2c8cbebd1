#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "cfsim/calibrate.hpp"
#include "cfsim/data.hpp"
#include "cfsim/metrics.hpp"
#include "cfsim/nn/train.hpp"
#include "cfsim/sim.hpp"

namespace cfsim::nn {

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"hidden", c.hidden},         {"learning_rate", c.learning_rate},
       {"batch_size", c.batch_size}, {"max_epochs", c.max_epochs},
       {"patience", c.patience},     {"val_fraction", c.val_fraction},
       {"clip_norm", c.clip_norm}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  c = TrainConfig{};
  if (j.contains("hidden")) j.at("hidden").get_to(c.hidden);
  if (j.contains("learning_rate")) j.at("learning_rate").get_to(c.learning_rate);
  if (j.contains("batch_size")) j.at("batch_size").get_to(c.batch_size);
  if (j.contains("max_epochs")) j.at("max_epochs").get_to(c.max_epochs);
  if (j.contains("patience")) j.at("patience").get_to(c.patience);
  if (j.contains("val_fraction")) j.at("val_fraction").get_to(c.val_fraction);
  if (j.contains("clip_norm")) j.at("clip_norm").get_to(c.clip_norm);
  c.validate();
}

}  // namespace cfsim::nn

namespace cfsim {

/// Full pipeline configuration. One global seed; every stage derives its own
/// sub-seed by name.
struct ExperimentConfig {
  std::uint64_t seed = 42;
  std::filesystem::path data_dir = "data";
  std::filesystem::path model_dir = "models";
  std::filesystem::path out_dir = "out";
  PopulationSpec population;
  GenConfig generator;
  nn::TrainConfig train;
  SimConfig sim;
  std::vector<double> demands = {500.0, 1000.0, 2000.0};
  std::vector<std::uint64_t> sim_seeds = {0, 1, 2};
  FilterCriteria filter;
  double kde_bandwidth = kDefaultBandwidth;
  double min_driver_hours = 2.0;
  std::size_t max_pooled_samples = 150000;
  int rollout_trajectories = 20;
  int rollout_draws = 100;
};

inline void to_json(nlohmann::json& j, const FilterCriteria& c) {
  j = {{"min_speed", c.min_speed}, {"require_leader", c.require_leader}, {"max_range", c.max_range}};
}

inline void from_json(const nlohmann::json& j, FilterCriteria& c) {
  c = FilterCriteria{};
  if (j.contains("min_speed")) j.at("min_speed").get_to(c.min_speed);
  if (j.contains("require_leader")) j.at("require_leader").get_to(c.require_leader);
  if (j.contains("max_range")) j.at("max_range").get_to(c.max_range);
  if (c.min_speed < 0) throw std::invalid_argument("FilterCriteria: min_speed must be >= 0");
}

inline void to_json(nlohmann::json& j, const ExperimentConfig& c) {
  j = {{"seed", c.seed},
       {"data_dir", c.data_dir.string()},
       {"model_dir", c.model_dir.string()},
       {"out_dir", c.out_dir.string()},
       {"population", c.population},
       {"generator", c.generator},
       {"train", c.train},
       {"sim", c.sim},
       {"demands", c.demands},
       {"sim_seeds", c.sim_seeds},
       {"filter", c.filter},
       {"kde_bandwidth", c.kde_bandwidth},
       {"min_driver_hours", c.min_driver_hours},
       {"max_pooled_samples", c.max_pooled_samples},
       {"rollout_trajectories", c.rollout_trajectories},
       {"rollout_draws", c.rollout_draws}};
}

inline void from_json(const nlohmann::json& j, ExperimentConfig& c) {
  c = ExperimentConfig{};
  auto field = [&](const char* name, auto& dst) {
    if (!j.contains(name)) return;
    try {
      j.at(name).get_to(dst);
    } catch (const std::exception& e) {
      throw std::invalid_argument(std::string("config field '") + name + "': " + e.what());
    }
  };
  field("seed", c.seed);
  std::string s;
  if (j.contains("data_dir")) { j.at("data_dir").get_to(s); c.data_dir = s; }
  if (j.contains("model_dir")) { j.at("model_dir").get_to(s); c.model_dir = s; }
  if (j.contains("out_dir")) { j.at("out_dir").get_to(s); c.out_dir = s; }
  field("population", c.population);
  field("generator", c.generator);
  field("train", c.train);
  field("sim", c.sim);
  field("demands", c.demands);
  field("sim_seeds", c.sim_seeds);
  field("filter", c.filter);
  field("kde_bandwidth", c.kde_bandwidth);
  field("min_driver_hours", c.min_driver_hours);
  field("max_pooled_samples", c.max_pooled_samples);
  field("rollout_trajectories", c.rollout_trajectories);
  field("rollout_draws", c.rollout_draws);
  if (!(c.kde_bandwidth > 0)) throw std::invalid_argument("config field 'kde_bandwidth': must be > 0");
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config: " + path.string());
  nlohmann::json j;
  in >> j;
  return j.get<ExperimentConfig>();
}

namespace detail {

inline std::filesystem::path corpus_path(const ExperimentConfig& c) { return c.data_dir / "corpus.csv"; }
inline std::filesystem::path manifest_path(const ExperimentConfig& c) {
  return c.data_dir / "manifest.json";
}
inline std::filesystem::path model_path(const ExperimentConfig& c, const std::string& name) {
  return c.model_dir / ("qrlstm_" + name + ".json");
}
inline std::filesystem::path idm_path(const ExperimentConfig& c) {
  return c.model_dir / "idm_calibrated.json";
}
inline std::string sim_tag(const std::string& model_set, double demand, std::uint64_t seed) {
  char buf[96];
  std::snprintf(buf, sizeof(buf), "%s_%d_%llu", model_set.c_str(), static_cast<int>(demand),
                static_cast<unsigned long long>(seed));
  return buf;
}

inline SynthPopulation load_manifest_population(const ExperimentConfig& c) {
  std::ifstream in(manifest_path(c));
  if (!in) throw std::runtime_error("cannot open manifest: " + manifest_path(c).string());
  nlohmann::json j;
  in >> j;
  return j.at("population_realized").get<SynthPopulation>();
}

inline std::map<std::string, std::vector<Trajectory>> by_driver(std::vector<Trajectory> trajs) {
  std::map<std::string, std::vector<Trajectory>> groups;
  for (auto& t : trajs) groups[t.driver_id].push_back(std::move(t));
  return groups;
}

inline std::vector<TrafficState> empirical_pool(const std::vector<Trajectory>& trajs,
                                                std::size_t cap, std::uint64_t seed) {
  std::vector<TrafficState> states;
  for (const auto& t : trajs) {
    for (const auto& s : t.samples) states.push_back(s.state);
  }
  if (states.size() > cap) {
    Rng rng = make_rng(seed, "empirical-pool");
    std::shuffle(states.begin(), states.end(), rng);
    states.resize(cap);
  }
  return states;
}

}  // namespace detail

/// gen-data: write the synthetic corpus plus a manifest recording the exact
/// realized population (the ground truth for later checks).
inline void cmd_gen_data(const ExperimentConfig& cfg) {
  std::filesystem::create_directories(cfg.data_dir);
  auto pop = SynthPopulation::sample(cfg.population, derive_seed(cfg.seed, "population-sample"));
  auto trajs = generate_synth_ndd(pop, cfg.generator, derive_seed(cfg.seed, "gen-data"));
  write_trajectories_csv(detail::corpus_path(cfg).string(), trajs);
  nlohmann::json manifest{{"seed", cfg.seed},
                          {"population_spec", cfg.population},
                          {"population_realized", pop},
                          {"generator", cfg.generator},
                          {"n_trajectories", trajs.size()}};
  std::ofstream out(detail::manifest_path(cfg));
  if (!out) throw std::runtime_error("cannot write manifest");
  out << manifest.dump(1) << '\n';
}

struct TrainSummary {
  std::vector<std::string> trained;
  std::vector<std::string> skipped;  // not enough data
};

inline void write_loss_history(const std::filesystem::path& path,
                               const std::vector<nn::EpochStats>& history) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
  out << "epoch,train_loss,val_loss\n";
  for (std::size_t e = 0; e < history.size(); ++e) {
    out << e << ',' << history[e].train_loss << ',' << history[e].val_loss << '\n';
  }
}

/// train: one QRLSTM per driver with enough data, plus one pooled "mixed"
/// model. Drivers under the data threshold are skipped with a warning.
inline TrainSummary cmd_train(const ExperimentConfig& cfg, std::ostream& diag) {
  std::filesystem::create_directories(cfg.model_dir);
  std::filesystem::create_directories(cfg.out_dir);
  auto corpus = read_trajectories_csv(detail::corpus_path(cfg).string());
  auto filtered = filter_car_following(corpus, cfg.filter);
  corpus.clear();
  auto groups = detail::by_driver(std::move(filtered));

  const QuantileGrid grid = default_grid();
  TrainSummary summary;
  std::vector<LabeledWindow> pooled;
  int driver_no = 0;
  for (auto& [driver, trajs] : groups) {
    double seconds = 0.0;
    for (const auto& t : trajs) seconds += t.duration();
    auto dataset = make_dataset(trajs);
    trajs.clear();
    if (seconds < cfg.min_driver_hours * 3600.0) {
      diag << "warning: driver " << driver << " has " << seconds / 3600.0
           << " h after filtering, below the " << cfg.min_driver_hours << " h threshold; skipped\n";
      summary.skipped.push_back(driver);
      for (auto& s : dataset) pooled.push_back(std::move(s));
      continue;
    }
    nn::TrainConfig tc = cfg.train;
    tc.seed = derive_seed(cfg.seed, "train-driver", driver_no++);
    auto result = nn::train(dataset, grid, tc);
    nn::QrlstmModel model{std::move(result.weights), grid, cfg.kde_bandwidth};
    nn::save_model(detail::model_path(cfg, driver).string(), model);
    write_loss_history(cfg.out_dir / ("loss_" + driver + ".csv"), result.history);
    summary.trained.push_back(driver);
    for (auto& s : dataset) pooled.push_back(std::move(s));
  }
  if (summary.trained.empty()) {
    throw std::runtime_error("cmd_train: no driver has enough data (threshold " +
                             std::to_string(cfg.min_driver_hours) + " h)");
  }

  if (pooled.size() > cfg.max_pooled_samples) {
    Rng rng = make_rng(cfg.seed, "pooled-subsample");
    std::shuffle(pooled.begin(), pooled.end(), rng);
    pooled.resize(cfg.max_pooled_samples);
  }
  nn::TrainConfig tc = cfg.train;
  tc.seed = derive_seed(cfg.seed, "train-mixed");
  auto result = nn::train(pooled, grid, tc);
  nn::save_model(detail::model_path(cfg, "mixed").string(),
                 nn::QrlstmModel{std::move(result.weights), grid, cfg.kde_bandwidth});
  write_loss_history(cfg.out_dir / "loss_mixed.csv", result.history);
  return summary;
}

/// calibrate: pooled IDM fit plus residual fluctuation strength.
inline CalibrationResult cmd_calibrate(const ExperimentConfig& cfg) {
  std::filesystem::create_directories(cfg.model_dir);
  auto corpus = read_trajectories_csv(detail::corpus_path(cfg).string());
  auto filtered = filter_car_following(corpus, cfg.filter);
  auto result = calibrate_idm(filtered);
  const double q = estimate_fluctuation(filtered, result.params);
  nlohmann::json j{{"idm", result.params},
                   {"Q", q},
                   {"fit_rmse", result.rmse},
                   {"converged", result.converged}};
  std::ofstream out(detail::idm_path(cfg));
  if (!out) throw std::runtime_error("cannot write " + detail::idm_path(cfg).string());
  out << j.dump(1) << '\n';
  return result;
}

inline NoisyIdmParams load_calibrated(const ExperimentConfig& cfg) {
  std::ifstream in(detail::idm_path(cfg));
  if (!in) throw std::runtime_error("cannot open " + detail::idm_path(cfg).string() +
                                    " (run calibrate first)");
  nlohmann::json j;
  in >> j;
  NoisyIdmParams p;
  p.idm = j.at("idm").get<IdmParams>();
  p.q = j.at("Q").get<double>();
  return p;
}

/// Owns the loaded driver models behind a DriverPopulation view.
struct LoadedPopulation {
  std::vector<std::unique_ptr<nn::QrlstmModel>> models;
  std::vector<std::unique_ptr<DriverModel>> drivers;
  DriverPopulation view;
};

inline LoadedPopulation load_driver_population(const ExperimentConfig& cfg,
                                               const std::string& model_set) {
  LoadedPopulation pop;
  if (model_set == "qrlstm") {
    auto realized = detail::load_manifest_population(cfg);
    for (const auto& d : realized.drivers) {
      const auto path = detail::model_path(cfg, d.id);
      if (!std::filesystem::exists(path)) continue;  // skipped at training time
      pop.models.push_back(std::make_unique<nn::QrlstmModel>(nn::load_model(path.string())));
      pop.drivers.push_back(std::make_unique<nn::QrlstmDriver>(pop.models.back().get()));
      pop.view.models.push_back(pop.drivers.back().get());
      pop.view.ids.push_back(d.id);
      pop.view.weights.push_back(d.weight);
    }
    if (pop.view.models.empty()) {
      throw std::runtime_error("load_driver_population: no trained qrlstm models found");
    }
  } else if (model_set == "idm" || model_set == "noisy_idm") {
    auto params = load_calibrated(cfg);
    if (model_set == "idm") {
      pop.drivers.push_back(std::make_unique<IdmDriver>(params.idm));
    } else {
      pop.drivers.push_back(std::make_unique<NoisyIdmDriver>(params));
    }
    pop.view.models.push_back(pop.drivers.back().get());
    pop.view.ids.push_back(model_set);
    pop.view.weights.push_back(1.0);
  } else {
    throw std::invalid_argument("unknown model set '" + model_set +
                                "' (expected qrlstm | idm | noisy_idm)");
  }
  return pop;
}

/// simulate: one (measurement, event) log pair per configured demand level
/// and simulation seed.
inline void cmd_simulate(const ExperimentConfig& cfg, const std::string& model_set) {
  std::filesystem::create_directories(cfg.out_dir);
  auto corpus = read_trajectories_csv(detail::corpus_path(cfg).string());
  auto filtered = filter_car_following(corpus, cfg.filter);
  corpus.clear();
  auto empirical = detail::empirical_pool(filtered, 100000, cfg.seed);
  filtered.clear();
  auto pop = load_driver_population(cfg, model_set);

  for (double demand : cfg.demands) {
    for (std::uint64_t sim_seed : cfg.sim_seeds) {
      SimConfig sc = cfg.sim;
      sc.demand = demand;
      sc.seed = derive_seed(cfg.seed, "simulate-" + detail::sim_tag(model_set, demand, sim_seed));
      auto result = run_simulation(sc, empirical, pop.view);
      const auto tag = detail::sim_tag(model_set, demand, sim_seed);
      write_measurement_csv((cfg.out_dir / ("sim_" + tag + ".csv")).string(), result);
      write_events_jsonl((cfg.out_dir / ("events_" + tag + ".jsonl")).string(), result);
    }
  }
}

struct CrossEntropyRow {
  std::string model_set;
  double speed = 0.0, range = 0.0, thw = 0.0;
};

inline void write_histogram_csv(const std::filesystem::path& path, const Histogram& h) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
  out << "bin_lo,bin_hi,count,prob\n";
  for (std::size_t i = 0; i < h.bins(); ++i) {
    out << h.edges[i] << ',' << h.edges[i + 1] << ',' << h.counts[i] << ',' << h.probs[i] << '\n';
  }
}

/// evaluate: cross-entropy table of each simulated model set against the
/// reference corpus, distribution CSVs, and open-loop rollout errors.
inline std::vector<CrossEntropyRow> cmd_evaluate(const ExperimentConfig& cfg) {
  std::filesystem::create_directories(cfg.out_dir);
  auto corpus = read_trajectories_csv(detail::corpus_path(cfg).string());
  auto filtered = filter_car_following(corpus, cfg.filter);
  corpus.clear();
  const DistributionEdges edges;
  auto reference = corpus_distributions(filtered, edges);
  for (const auto* h : {&reference.speed, &reference.range, &reference.thw}) {
    write_histogram_csv(cfg.out_dir / ("dist_reference_" + h->name + ".csv"), *h);
  }

  std::vector<CrossEntropyRow> report;
  for (const std::string model_set : {"qrlstm", "noisy_idm"}) {
    std::vector<double> vs, rs, hs;
    for (double demand : cfg.demands) {
      for (std::uint64_t sim_seed : cfg.sim_seeds) {
        const auto tag = detail::sim_tag(model_set, demand, sim_seed);
        const auto path = cfg.out_dir / ("sim_" + tag + ".csv");
        std::ifstream in(path);
        if (!in) throw std::runtime_error("missing simulation log " + path.string() +
                                          " (run simulate first)");
        std::vector<std::string> ids;
        for (const auto& row : read_measurement_csv(in, ids)) {
          if (row.t < 60.0 || !std::isfinite(row.r)) continue;
          vs.push_back(row.v);
          rs.push_back(row.r);
          if (row.v > 0) hs.push_back(row.r / row.v);
        }
      }
    }
    TrafficDistributions dist{build_histogram(vs, edges.speed, "speed"),
                              build_histogram(rs, edges.range, "range"),
                              build_histogram(hs, edges.thw, "thw")};
    for (const auto* h : {&dist.speed, &dist.range, &dist.thw}) {
      write_histogram_csv(cfg.out_dir / ("dist_" + model_set + "_" + h->name + ".csv"), *h);
    }
    report.push_back({model_set, cross_entropy(reference.speed, dist.speed),
                      cross_entropy(reference.range, dist.range),
                      cross_entropy(reference.thw, dist.thw)});
  }

  {
    std::ofstream out(cfg.out_dir / "report.csv");
    out << "model,speed,range,thw\n";
    for (const auto& row : report) {
      out << row.model_set << ',' << row.speed << ',' << row.range << ',' << row.thw << '\n';
    }
    nlohmann::json j = nlohmann::json::array();
    for (const auto& row : report) {
      j.push_back({{"model", row.model_set},
                   {"speed", row.speed},
                   {"range", row.range},
                   {"thw", row.thw}});
    }
    std::ofstream jout(cfg.out_dir / "report.json");
    jout << j.dump(1) << '\n';
  }

  // Rollout comparison on the longest trajectories per driver with a model.
  {
    auto calibrated = load_calibrated(cfg);
    NoisyIdmDriver idm_driver(calibrated);
    std::sort(filtered.begin(), filtered.end(),
              [](const auto& a, const auto& b) { return a.size() > b.size(); });
    std::ofstream out(cfg.out_dir / "rollout.csv");
    out << "traj_id,model,step,mean_v_err,mean_a_err\n";
    int used = 0;
    for (const auto& traj : filtered) {
      if (used >= cfg.rollout_trajectories) break;
      const auto path = detail::model_path(cfg, traj.driver_id);
      if (traj.size() < kDefaultWindow + 2 || !std::filesystem::exists(path)) continue;
      auto model = nn::load_model(path.string());
      nn::QrlstmDriver driver(&model);
      const auto q = rollout_error(driver, traj, cfg.rollout_draws,
                                   derive_seed(cfg.seed, "rollout-q", used));
      const auto b = rollout_error(idm_driver, traj, cfg.rollout_draws,
                                   derive_seed(cfg.seed, "rollout-b", used));
      for (std::size_t k = 0; k < q.mean_v_err.size(); ++k) {
        out << traj.id << ",qrlstm," << k << ',' << q.mean_v_err[k] << ',' << q.mean_a_err[k] << '\n';
        out << traj.id << ",noisy_idm," << k << ',' << b.mean_v_err[k] << ',' << b.mean_a_err[k]
            << '\n';
      }
      ++used;
    }
  }
  return report;
}

}  // namespace cfsim
