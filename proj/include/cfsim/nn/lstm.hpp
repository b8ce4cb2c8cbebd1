#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "cfsim/core.hpp"
#include "cfsim/density.hpp"
#include "cfsim/quantile.hpp"
#include "cfsim/rng.hpp"

namespace cfsim::nn {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

inline constexpr int kInputSize = 4;  // v, v_l, r, rr

struct GateParams {
  Mat wx;  // H x 4
  Mat wh;  // H x H
  Vec b;   // H
};

/// All trainable parameters of the QRLSTM plus the per-feature normalization
/// stats and input envelope baked in at training time. Inputs are clamped to
/// [feat_lo, feat_hi] before normalization so states far outside the training
/// support (huge gaps, crawling speeds) map to the nearest seen state instead
/// of saturating the gates with garbage.
struct LstmWeights {
  int hidden = 32;
  int n_outputs = 19;
  GateParams gi, gf, go, gc;  // input, forget, output, cell-candidate
  Mat head_w;                 // |P| x H
  Vec head_b;                 // |P|
  Vec feat_mean, feat_std;    // 4 each
  Vec feat_lo, feat_hi;       // 4 each, training-set min/max per feature
};

namespace detail {

template <typename W, typename Fn>
void for_each_trainable(W& w, Fn&& fn) {
  for (auto* g : {&w.gi, &w.gf, &w.go, &w.gc}) {
    fn(g->wx);
    fn(g->wh);
    fn(g->b);
  }
  fn(w.head_w);
  fn(w.head_b);
}

inline std::vector<std::pair<double*, std::ptrdiff_t>> trainable_blocks(LstmWeights& w) {
  std::vector<std::pair<double*, std::ptrdiff_t>> out;
  for_each_trainable(w, [&](auto& m) { out.emplace_back(m.data(), m.size()); });
  return out;
}

}  // namespace detail

inline std::ptrdiff_t param_count(const LstmWeights& w) {
  std::ptrdiff_t n = 0;
  detail::for_each_trainable(const_cast<LstmWeights&>(w), [&](auto& m) { n += m.size(); });
  return n;
}

inline Vec flatten(const LstmWeights& w) {
  Vec out(param_count(w));
  std::ptrdiff_t at = 0;
  detail::for_each_trainable(const_cast<LstmWeights&>(w), [&](auto& m) {
    out.segment(at, m.size()) = Eigen::Map<const Vec>(m.data(), m.size());
    at += m.size();
  });
  return out;
}

inline void unflatten(const Vec& flat, LstmWeights& w) {
  if (flat.size() != param_count(w)) throw std::invalid_argument("unflatten: size mismatch");
  std::ptrdiff_t at = 0;
  detail::for_each_trainable(w, [&](auto& m) {
    Eigen::Map<Vec>(m.data(), m.size()) = flat.segment(at, m.size());
    at += m.size();
  });
}

inline LstmWeights zero_like(const LstmWeights& w) {
  LstmWeights z = w;
  detail::for_each_trainable(z, [](auto& m) { m.setZero(); });
  return z;
}

/// Matrices uniform in [-1/sqrt(H), 1/sqrt(H)], forget-gate bias 1.0,
/// identity normalization. Deterministic per seed.
inline LstmWeights init_weights(int hidden, int n_outputs, std::uint64_t seed) {
  if (hidden < 1 || n_outputs < 1) throw std::invalid_argument("init_weights: sizes must be >= 1");
  LstmWeights w;
  w.hidden = hidden;
  w.n_outputs = n_outputs;
  const double bound = 1.0 / std::sqrt(static_cast<double>(hidden));
  Rng rng(seed);
  std::uniform_real_distribution<double> u(-bound, bound);
  for (auto* g : {&w.gi, &w.gf, &w.go, &w.gc}) {
    g->wx = Mat::NullaryExpr(hidden, kInputSize, [&] { return u(rng); });
    g->wh = Mat::NullaryExpr(hidden, hidden, [&] { return u(rng); });
    g->b = Vec::Zero(hidden);
  }
  w.gf.b.setConstant(1.0);
  w.head_w = Mat::NullaryExpr(n_outputs, hidden, [&] { return u(rng); });
  w.head_b = Vec::Zero(n_outputs);
  w.feat_mean = Vec::Zero(kInputSize);
  w.feat_std = Vec::Ones(kInputSize);
  w.feat_lo = Vec::Constant(kInputSize, -1e300);  // no clamp until trained
  w.feat_hi = Vec::Constant(kInputSize, 1e300);
  return w;
}

/// Z-score stats and min/max envelope over every state of every window in the
/// training set.
inline void set_normalization(LstmWeights& w, const std::vector<LabeledWindow>& dataset) {
  Vec mean = Vec::Zero(kInputSize), m2 = Vec::Zero(kInputSize);
  Vec lo = Vec::Constant(kInputSize, 1e300), hi = Vec::Constant(kInputSize, -1e300);
  double n = 0.0;
  for (const auto& s : dataset) {
    for (const auto& st : s.window.states) {
      const double x[kInputSize] = {st.v, st.v_l, st.r, st.rr};
      n += 1.0;
      for (int k = 0; k < kInputSize; ++k) {
        const double d = x[k] - mean[k];
        mean[k] += d / n;
        m2[k] += d * (x[k] - mean[k]);
        lo[k] = std::min(lo[k], x[k]);
        hi[k] = std::max(hi[k], x[k]);
      }
    }
  }
  if (n < 2.0) throw std::invalid_argument("set_normalization: need at least 2 states");
  w.feat_mean = mean;
  for (int k = 0; k < kInputSize; ++k) {
    w.feat_std[k] = std::max(std::sqrt(m2[k] / (n - 1.0)), 1e-8);
  }
  w.feat_lo = lo;
  w.feat_hi = hi;
}

/// Per-step activations saved for backpropagation through time.
struct ForwardCache {
  std::vector<Mat> x;                        // T of 4 x B (normalized)
  std::vector<Mat> i, f, o, g, c, tc, h;     // T of H x B
  Mat y;                                     // |P| x B
};

inline void forward_batch(const LstmWeights& w, const std::vector<const StateWindow*>& windows,
                          ForwardCache& cache) {
  const int batch = static_cast<int>(windows.size());
  if (batch == 0) throw std::invalid_argument("forward_batch: empty batch");
  const int steps = static_cast<int>(windows[0]->size());
  const int hid = w.hidden;

  auto resize_all = [&](std::vector<Mat>& v, int rows) {
    v.resize(steps);
    for (auto& m : v) m.resize(rows, batch);
  };
  resize_all(cache.x, kInputSize);
  for (auto* v : {&cache.i, &cache.f, &cache.o, &cache.g, &cache.c, &cache.tc, &cache.h}) {
    resize_all(*v, hid);
  }

  for (int n = 0; n < batch; ++n) {
    if (static_cast<int>(windows[n]->size()) != steps) {
      throw std::invalid_argument("forward_batch: ragged window lengths");
    }
    for (int t = 0; t < steps; ++t) {
      const auto& st = windows[n]->states[t];
      const double raw[kInputSize] = {st.v, st.v_l, st.r, st.rr};
      for (int k = 0; k < kInputSize; ++k) {
        const double x = std::clamp(raw[k], w.feat_lo[k], w.feat_hi[k]);
        cache.x[t](k, n) = (x - w.feat_mean[k]) / w.feat_std[k];
      }
    }
  }

  Mat h_prev = Mat::Zero(hid, batch), c_prev = Mat::Zero(hid, batch);
  auto sigmoid = [](double z) { return 1.0 / (1.0 + std::exp(-z)); };
  for (int t = 0; t < steps; ++t) {
    cache.i[t] = ((w.gi.wx * cache.x[t] + w.gi.wh * h_prev).colwise() + w.gi.b).unaryExpr(sigmoid);
    cache.f[t] = ((w.gf.wx * cache.x[t] + w.gf.wh * h_prev).colwise() + w.gf.b).unaryExpr(sigmoid);
    cache.o[t] = ((w.go.wx * cache.x[t] + w.go.wh * h_prev).colwise() + w.go.b).unaryExpr(sigmoid);
    cache.g[t] = ((w.gc.wx * cache.x[t] + w.gc.wh * h_prev).colwise() + w.gc.b).array().tanh();
    cache.c[t] = cache.f[t].cwiseProduct(c_prev) + cache.i[t].cwiseProduct(cache.g[t]);
    cache.tc[t] = cache.c[t].array().tanh();
    cache.h[t] = cache.o[t].cwiseProduct(cache.tc[t]);
    h_prev = cache.h[t];
    c_prev = cache.c[t];
  }
  cache.y = (w.head_w * cache.h[steps - 1]).colwise() + w.head_b;
}

/// Raw (unsorted) quantile predictions for one window. Pure function of
/// (weights, window); zero initial hidden and cell state.
inline ActionQuantiles forward(const LstmWeights& w, const StateWindow& window) {
  thread_local ForwardCache cache;
  forward_batch(w, {&window}, cache);
  ActionQuantiles q;
  q.values.assign(cache.y.data(), cache.y.data() + w.n_outputs);
  return q;
}

// ---------------------------------------------------------------------------
// Serialization: versioned JSON, bit-exact for finite doubles.

inline constexpr const char* kModelSchema = "qrlstm-v1";

namespace detail {

inline nlohmann::json mat_to_json(const Mat& m) {
  std::vector<double> flat(m.size());
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) flat[r * m.cols() + c] = m(r, c);
  }
  return flat;
}

inline Mat mat_from_json(const nlohmann::json& j, Eigen::Index rows, Eigen::Index cols,
                         const std::string& field) {
  auto flat = j.at(field).get<std::vector<double>>();
  if (static_cast<Eigen::Index>(flat.size()) != rows * cols) {
    throw std::runtime_error("load_model: field '" + field + "' has " + std::to_string(flat.size()) +
                             " entries, expected " + std::to_string(rows * cols));
  }
  Mat m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) {
      const double v = flat[r * cols + c];
      if (!std::isfinite(v)) throw std::runtime_error("load_model: non-finite entry in '" + field + "'");
      m(r, c) = v;
    }
  }
  return m;
}

inline Vec vec_from_json(const nlohmann::json& j, Eigen::Index n, const std::string& field) {
  return mat_from_json(j, n, 1, field);
}

}  // namespace detail

/// A trained model bundle: weights, the quantile grid they predict, and the
/// KDE bandwidth used when sampling actions.
struct QrlstmModel {
  LstmWeights weights;
  QuantileGrid grid = default_grid();
  double bandwidth = kDefaultBandwidth;
};

inline nlohmann::json model_to_json(const QrlstmModel& m) {
  const auto& w = m.weights;
  nlohmann::json j;
  j["schema"] = kModelSchema;
  j["hidden"] = w.hidden;
  j["n_outputs"] = w.n_outputs;
  j["probs"] = m.grid.probs;
  j["kde_bandwidth"] = m.bandwidth;
  j["feat_mean"] = detail::mat_to_json(w.feat_mean);
  j["feat_std"] = detail::mat_to_json(w.feat_std);
  j["feat_lo"] = detail::mat_to_json(w.feat_lo);
  j["feat_hi"] = detail::mat_to_json(w.feat_hi);
  const char* names[4] = {"i", "f", "o", "c"};
  const GateParams* gates[4] = {&w.gi, &w.gf, &w.go, &w.gc};
  for (int k = 0; k < 4; ++k) {
    j[std::string("wx_") + names[k]] = detail::mat_to_json(gates[k]->wx);
    j[std::string("wh_") + names[k]] = detail::mat_to_json(gates[k]->wh);
    j[std::string("b_") + names[k]] = detail::mat_to_json(gates[k]->b);
  }
  j["head_w"] = detail::mat_to_json(w.head_w);
  j["head_b"] = detail::mat_to_json(w.head_b);
  return j;
}

inline QrlstmModel model_from_json(const nlohmann::json& j) {
  if (!j.contains("schema") || j.at("schema") != kModelSchema) {
    throw std::runtime_error("load_model: unsupported schema version (field 'schema')");
  }
  const int hidden = j.at("hidden").get<int>();
  const int n_outputs = j.at("n_outputs").get<int>();
  if (hidden < 1) throw std::runtime_error("load_model: invalid field 'hidden'");
  auto probs = j.at("probs").get<std::vector<double>>();
  if (static_cast<int>(probs.size()) != n_outputs) {
    throw std::runtime_error("load_model: 'probs' length " + std::to_string(probs.size()) +
                             " does not match 'n_outputs' " + std::to_string(n_outputs));
  }
  QrlstmModel m{LstmWeights{}, QuantileGrid(probs), j.at("kde_bandwidth").get<double>()};
  if (!(m.bandwidth > 0.0)) throw std::runtime_error("load_model: invalid field 'kde_bandwidth'");
  auto& w = m.weights;
  w.hidden = hidden;
  w.n_outputs = n_outputs;
  w.feat_mean = detail::vec_from_json(j, kInputSize, "feat_mean");
  w.feat_std = detail::vec_from_json(j, kInputSize, "feat_std");
  for (int k = 0; k < kInputSize; ++k) {
    if (!(w.feat_std[k] > 0.0)) throw std::runtime_error("load_model: non-positive entry in 'feat_std'");
  }
  w.feat_lo = detail::vec_from_json(j, kInputSize, "feat_lo");
  w.feat_hi = detail::vec_from_json(j, kInputSize, "feat_hi");
  for (int k = 0; k < kInputSize; ++k) {
    if (!(w.feat_lo[k] <= w.feat_hi[k])) {
      throw std::runtime_error("load_model: 'feat_lo' exceeds 'feat_hi'");
    }
  }
  const char* names[4] = {"i", "f", "o", "c"};
  GateParams* gates[4] = {&w.gi, &w.gf, &w.go, &w.gc};
  for (int k = 0; k < 4; ++k) {
    gates[k]->wx = detail::mat_from_json(j, hidden, kInputSize, std::string("wx_") + names[k]);
    gates[k]->wh = detail::mat_from_json(j, hidden, hidden, std::string("wh_") + names[k]);
    gates[k]->b = detail::vec_from_json(j, hidden, std::string("b_") + names[k]);
  }
  w.head_w = detail::mat_from_json(j, n_outputs, hidden, "head_w");
  w.head_b = detail::vec_from_json(j, n_outputs, "head_b");
  return m;
}

inline void save_model(const std::string& path, const QrlstmModel& m) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_model: cannot open " + path);
  out << model_to_json(m).dump(1) << '\n';
}

inline QrlstmModel load_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_model: cannot open " + path);
  nlohmann::json j;
  in >> j;
  return model_from_json(j);
}

/// Stochastic driver backed by a trained model: predict quantiles, repair
/// crossings, sample from the Gaussian-mixture KDE over them.
class QrlstmDriver : public DriverModel {
 public:
  explicit QrlstmDriver(const QrlstmModel* model) : model_(model) {}

  double action(const StateWindow& window, Rng& rng) const override {
    ActionQuantiles q = enforce_monotone(forward(model_->weights, window));
    for (double v : q.values) {
      if (!std::isfinite(v)) throw std::runtime_error("QrlstmDriver: non-finite model output");
    }
    return kde_sample(KdeModel(std::move(q.values), model_->bandwidth), rng);
  }

  const QrlstmModel& model() const { return *model_; }

 private:
  const QrlstmModel* model_;
};

}  // namespace cfsim::nn
