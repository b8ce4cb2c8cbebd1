#pragma once

#include <algorithm>
#include <numeric>
#include <vector>

#include "cfsim/nn/lstm.hpp"
#include "cfsim/quantile.hpp"

namespace cfsim::nn {

struct TrainConfig {
  int hidden = 32;
  double learning_rate = 1e-3;
  int batch_size = 64;
  int max_epochs = 50;
  int patience = 10;           // epochs without validation improvement
  double val_fraction = 0.05;
  std::uint64_t seed = 0;
  double clip_norm = 5.0;

  void validate() const {
    if (!(learning_rate > 0)) throw std::invalid_argument("TrainConfig: learning_rate must be > 0");
    if (!(val_fraction > 0 && val_fraction < 1)) {
      throw std::invalid_argument("TrainConfig: val_fraction must be in (0,1)");
    }
    if (batch_size < 1 || max_epochs < 1 || hidden < 1) {
      throw std::invalid_argument("TrainConfig: batch_size, max_epochs, hidden must be >= 1");
    }
  }
};

struct EpochStats {
  double train_loss = 0.0;
  double val_loss = 0.0;
};

struct TrainResult {
  LstmWeights weights;  // best-validation checkpoint
  std::vector<EpochStats> history;
};

/// Mean pinball loss and full BPTT gradient for one forwarded batch.
inline double backward_batch(const LstmWeights& w, const ForwardCache& cache,
                             const std::vector<double>& labels, const QuantileGrid& grid,
                             LstmWeights& grads) {
  const int batch = static_cast<int>(labels.size());
  const int steps = static_cast<int>(cache.h.size());
  const int np = w.n_outputs;

  double loss = 0.0;
  Mat dy(np, batch);
  const double scale = 1.0 / (static_cast<double>(batch) * np);
  for (int n = 0; n < batch; ++n) {
    for (int j = 0; j < np; ++j) {
      loss += pinball(grid.probs[j], labels[n], cache.y(j, n));
      dy(j, n) = pinball_grad(grid.probs[j], labels[n], cache.y(j, n)) * scale;
    }
  }
  loss *= scale;

  detail::for_each_trainable(grads, [](auto& m) { m.setZero(); });
  grads.head_w.noalias() = dy * cache.h[steps - 1].transpose();
  grads.head_b = dy.rowwise().sum();

  Mat dh = w.head_w.transpose() * dy;
  Mat dc = Mat::Zero(w.hidden, batch);
  const Mat zero = Mat::Zero(w.hidden, batch);
  for (int t = steps - 1; t >= 0; --t) {
    const Mat& c_prev = t > 0 ? cache.c[t - 1] : zero;
    const Mat& h_prev = t > 0 ? cache.h[t - 1] : zero;

    dc.array() += dh.array() * cache.o[t].array() * (1.0 - cache.tc[t].array().square());
    Mat dpre_o = dh.cwiseProduct(cache.tc[t]).array() *
                 cache.o[t].array() * (1.0 - cache.o[t].array());
    Mat dpre_f = dc.cwiseProduct(c_prev).array() *
                 cache.f[t].array() * (1.0 - cache.f[t].array());
    Mat dpre_i = dc.cwiseProduct(cache.g[t]).array() *
                 cache.i[t].array() * (1.0 - cache.i[t].array());
    Mat dpre_g = dc.cwiseProduct(cache.i[t]).array() * (1.0 - cache.g[t].array().square());

    const GateParams* gates[4] = {&w.gi, &w.gf, &w.go, &w.gc};
    GateParams* dgates[4] = {&grads.gi, &grads.gf, &grads.go, &grads.gc};
    const Mat* dpres[4] = {&dpre_i, &dpre_f, &dpre_o, &dpre_g};
    dh.setZero();
    for (int k = 0; k < 4; ++k) {
      dgates[k]->wx.noalias() += *dpres[k] * cache.x[t].transpose();
      dgates[k]->wh.noalias() += *dpres[k] * h_prev.transpose();
      dgates[k]->b += dpres[k]->rowwise().sum();
      dh.noalias() += gates[k]->wh.transpose() * *dpres[k];
    }
    dc = dc.cwiseProduct(cache.f[t]);
  }
  return loss;
}

inline double evaluate_loss(const LstmWeights& w, const std::vector<LabeledWindow>& data,
                            const std::vector<std::size_t>& indices, const QuantileGrid& grid) {
  if (indices.empty()) throw std::invalid_argument("evaluate_loss: empty index set");
  ForwardCache cache;
  double total = 0.0;
  const std::size_t chunk = 512;
  for (std::size_t at = 0; at < indices.size(); at += chunk) {
    const std::size_t n = std::min(chunk, indices.size() - at);
    std::vector<const StateWindow*> windows(n);
    for (std::size_t k = 0; k < n; ++k) windows[k] = &data[indices[at + k]].window;
    forward_batch(w, windows, cache);
    for (std::size_t k = 0; k < n; ++k) {
      const double y = data[indices[at + k]].label;
      for (int j = 0; j < w.n_outputs; ++j) total += pinball(grid.probs[j], y, cache.y(j, k));
    }
  }
  return total / (static_cast<double>(indices.size()) * grid.size());
}

/// Minibatch Adam on the mean pinball loss. Returns the weights with the
/// lowest validation loss seen, with strict per-epoch history.
inline TrainResult train(const std::vector<LabeledWindow>& dataset, const QuantileGrid& grid,
                         const TrainConfig& config) {
  config.validate();
  if (dataset.empty()) throw std::invalid_argument("train: empty dataset");
  for (const auto& s : dataset) {
    if (!std::isfinite(s.label)) throw std::invalid_argument("train: non-finite label");
  }

  Rng rng = make_rng(config.seed, "train");
  std::vector<std::size_t> indices(dataset.size());
  std::iota(indices.begin(), indices.end(), std::size_t{0});
  std::shuffle(indices.begin(), indices.end(), rng);
  std::size_t n_val = static_cast<std::size_t>(std::lround(config.val_fraction * dataset.size()));
  n_val = std::min(n_val, dataset.size() - 1);
  std::vector<std::size_t> val_idx(indices.begin(), indices.begin() + n_val);
  std::vector<std::size_t> train_idx(indices.begin() + n_val, indices.end());

  LstmWeights w = init_weights(config.hidden, static_cast<int>(grid.size()),
                               derive_seed(config.seed, "init"));
  {
    std::vector<LabeledWindow> train_view;
    train_view.reserve(train_idx.size());
    for (auto i : train_idx) train_view.push_back(dataset[i]);
    set_normalization(w, train_view);
  }

  LstmWeights grads = zero_like(w), m1 = zero_like(w), m2 = zero_like(w);
  const double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  long adam_t = 0;

  TrainResult result;
  result.weights = w;
  double best_val = std::numeric_limits<double>::infinity();
  int stale = 0;
  ForwardCache cache;

  for (int epoch = 0; epoch < config.max_epochs; ++epoch) {
    std::shuffle(train_idx.begin(), train_idx.end(), rng);
    double train_total = 0.0;
    std::size_t seen = 0;
    for (std::size_t at = 0, batch_no = 0; at < train_idx.size(); at += config.batch_size, ++batch_no) {
      const std::size_t n = std::min<std::size_t>(config.batch_size, train_idx.size() - at);
      std::vector<const StateWindow*> windows(n);
      std::vector<double> labels(n);
      for (std::size_t k = 0; k < n; ++k) {
        windows[k] = &dataset[train_idx[at + k]].window;
        labels[k] = dataset[train_idx[at + k]].label;
      }
      forward_batch(w, windows, cache);
      const double loss = backward_batch(w, cache, labels, grid, grads);
      if (!std::isfinite(loss)) {
        throw std::runtime_error("train: non-finite loss at epoch " + std::to_string(epoch) +
                                 ", batch " + std::to_string(batch_no));
      }
      train_total += loss * n;
      seen += n;

      double sq = 0.0;
      detail::for_each_trainable(grads, [&](auto& g) { sq += g.squaredNorm(); });
      const double norm = std::sqrt(sq);
      if (norm > config.clip_norm) {
        const double s = config.clip_norm / norm;
        detail::for_each_trainable(grads, [&](auto& g) { g *= s; });
      }

      ++adam_t;
      const double corr = config.learning_rate *
                          std::sqrt(1.0 - std::pow(beta2, adam_t)) / (1.0 - std::pow(beta1, adam_t));
      auto wb = detail::trainable_blocks(w);
      auto gb = detail::trainable_blocks(grads);
      auto mb = detail::trainable_blocks(m1);
      auto vb = detail::trainable_blocks(m2);
      for (std::size_t blk = 0; blk < wb.size(); ++blk) {
        for (std::ptrdiff_t i = 0; i < wb[blk].second; ++i) {
          double& m = mb[blk].first[i];
          double& v = vb[blk].first[i];
          const double g = gb[blk].first[i];
          m = beta1 * m + (1.0 - beta1) * g;
          v = beta2 * v + (1.0 - beta2) * g * g;
          wb[blk].first[i] -= corr * m / (std::sqrt(v) + eps);
        }
      }
    }

    EpochStats stats;
    stats.train_loss = train_total / static_cast<double>(seen);
    stats.val_loss = val_idx.empty() ? stats.train_loss : evaluate_loss(w, dataset, val_idx, grid);
    result.history.push_back(stats);

    if (stats.val_loss < best_val) {
      best_val = stats.val_loss;
      result.weights = w;
      stale = 0;
    } else if (++stale >= config.patience) {
      break;
    }
  }
  return result;
}

/// Max relative error between the analytic BPTT gradient and central finite
/// differences, over every trainable parameter.
inline double gradient_check(const LstmWeights& weights, const LabeledWindow& sample,
                             const QuantileGrid& grid, double step = 1e-5) {
  LstmWeights w = weights;
  ForwardCache cache;
  std::vector<const StateWindow*> windows{&sample.window};
  const std::vector<double> labels{sample.label};

  forward_batch(w, windows, cache);
  LstmWeights grads = zero_like(w);
  backward_batch(w, cache, labels, grid, grads);
  const Vec analytic = flatten(grads);

  // loss plus the residual signs, so coordinates whose perturbation crosses a
  // pinball kink (where the subgradient jumps) can be excluded
  auto loss_at = [&](const Vec& flat, std::vector<int>& signs) {
    unflatten(flat, w);
    forward_batch(w, windows, cache);
    double total = 0.0;
    signs.resize(grid.size());
    for (std::size_t j = 0; j < grid.size(); ++j) {
      total += pinball(grid.probs[j], sample.label, cache.y(j, 0));
      signs[j] = sample.label - cache.y(j, 0) >= 0.0 ? 1 : -1;
    }
    return total / static_cast<double>(grid.size());
  };

  Vec flat = flatten(weights);
  double worst = 0.0;
  std::vector<int> signs_up, signs_down;
  for (Eigen::Index k = 0; k < flat.size(); ++k) {
    const double orig = flat[k];
    flat[k] = orig + step;
    const double up = loss_at(flat, signs_up);
    flat[k] = orig - step;
    const double down = loss_at(flat, signs_down);
    flat[k] = orig;
    if (signs_up != signs_down) continue;  // non-differentiable across the step
    const double numeric = (up - down) / (2.0 * step);
    const double rel = std::abs(analytic[k] - numeric) /
                       std::max({std::abs(analytic[k]), std::abs(numeric), 1e-6});
    worst = std::max(worst, rel);
  }
  return worst;
}

}  // namespace cfsim::nn
