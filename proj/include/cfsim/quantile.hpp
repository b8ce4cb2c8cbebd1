#pragma once

#include <algorithm>
#include <stdexcept>
#include <vector>

#include "cfsim/core.hpp"

namespace cfsim {

/// Strictly increasing quantile probabilities in (0,1).
struct QuantileGrid {
  std::vector<double> probs;

  explicit QuantileGrid(std::vector<double> p) : probs(std::move(p)) {
    if (probs.empty()) throw std::invalid_argument("QuantileGrid: empty");
    double prev = 0.0;
    for (double q : probs) {
      if (!(q > prev && q < 1.0)) {
        throw std::invalid_argument("QuantileGrid: probabilities must be strictly increasing in (0,1)");
      }
      prev = q;
    }
  }

  std::size_t size() const { return probs.size(); }
};

/// {0.05, 0.10, ..., 0.95}
inline QuantileGrid default_grid() {
  std::vector<double> p(19);
  for (int i = 0; i < 19; ++i) p[i] = 0.05 * (i + 1);
  return QuantileGrid(std::move(p));
}

/// Asymmetric piecewise-linear loss whose minimizer is the p-quantile:
/// p*(y - yhat) on the >= 0 branch, (p-1)*(y - yhat) otherwise.
inline double pinball(double p, double y, double y_hat) {
  const double d = y - y_hat;
  return d >= 0.0 ? p * d : (p - 1.0) * d;
}

/// Derivative of pinball w.r.t. the prediction; the kink at y == yhat takes
/// the >= branch (slope -p).
inline double pinball_grad(double p, double y, double y_hat) {
  return (y - y_hat) >= 0.0 ? -p : 1.0 - p;
}

/// Mean pinball loss over all (sample, quantile) pairs.
inline double batch_pinball(const std::vector<double>& labels,
                            const std::vector<ActionQuantiles>& predictions,
                            const QuantileGrid& grid) {
  if (labels.size() != predictions.size()) {
    throw std::invalid_argument("batch_pinball: labels/predictions length mismatch");
  }
  if (labels.empty()) throw std::invalid_argument("batch_pinball: empty batch");
  double total = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (predictions[i].values.size() != grid.size()) {
      throw std::invalid_argument("batch_pinball: prediction length != |P|");
    }
    for (std::size_t j = 0; j < grid.size(); ++j) {
      total += pinball(grid.probs[j], labels[i], predictions[i].values[j]);
    }
  }
  return total / (static_cast<double>(labels.size()) * static_cast<double>(grid.size()));
}

/// Quantile-crossing repair: sort ascending. Idempotent, value-preserving.
inline ActionQuantiles enforce_monotone(ActionQuantiles q) {
  std::sort(q.values.begin(), q.values.end());
  return q;
}

}  // namespace cfsim
