#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "cfsim/rng.hpp"

namespace cfsim {

inline constexpr double kDefaultBandwidth = 0.75;  // m/s^2

inline double normal_pdf(double z) {
  static const double inv_sqrt_2pi = 0.3989422804014326779;
  return inv_sqrt_2pi * std::exp(-0.5 * z * z);
}

inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

/// Gaussian KDE over a predicted quantile set: an equally weighted mixture of
/// |P| normals with common bandwidth B.
struct KdeModel {
  std::vector<double> centers;  // m/s^2
  double bandwidth = kDefaultBandwidth;

  KdeModel(std::vector<double> c, double b = kDefaultBandwidth)
      : centers(std::move(c)), bandwidth(b) {
    if (centers.empty()) throw std::invalid_argument("KdeModel: no centers");
    if (!(bandwidth > 0.0)) throw std::invalid_argument("KdeModel: bandwidth must be > 0");
    for (double v : centers) {
      if (!std::isfinite(v)) throw std::invalid_argument("KdeModel: non-finite center");
    }
  }
};

inline double kde_pdf(const KdeModel& m, double y) {
  double s = 0.0;
  for (double c : m.centers) s += normal_pdf((y - c) / m.bandwidth);
  return s / (m.bandwidth * static_cast<double>(m.centers.size()));
}

inline double kde_cdf(const KdeModel& m, double y) {
  double s = 0.0;
  for (double c : m.centers) s += normal_cdf((y - c) / m.bandwidth);
  return s / static_cast<double>(m.centers.size());
}

/// Exact mixture draw: uniform center choice plus a scaled normal.
inline double kde_sample(const KdeModel& m, Rng& rng) {
  std::uniform_int_distribution<std::size_t> pick(0, m.centers.size() - 1);
  std::normal_distribution<double> noise(0.0, 1.0);
  return m.centers[pick(rng)] + m.bandwidth * noise(rng);
}

}  // namespace cfsim
