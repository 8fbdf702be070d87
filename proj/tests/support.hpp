#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "skyalign/skyalign.hpp"

namespace support {

using namespace skyalign;

struct GradCase {
  ModelParams params;
  TrainBatch batch;
  LossConfig loss;
};

inline GradCase draw_grad_case(std::mt19937_64& rng, OrientationMode mode) {
  auto uni = [&rng](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };
  std::normal_distribution<double> nd;
  std::uniform_real_distribution<double> u01(0.0, 1.0);

  GradCase c;
  const int n = uni(2, 4);
  const int m = uni(1, 6);
  const int h = uni(2, 8);
  const int e = uni(2, 8);
  c.loss.bins = uni(2, 8);
  c.loss.orientation_mode = mode;
  c.loss.smoothing = u01(rng) * 0.3;
  c.loss.trainable_temperature = u01(rng) < 0.5;
  c.loss.orientation_weight = 0.5;

  Rng init_rng(rng());
  c.params = init(init_rng, m, h, e, head_outputs_for(c.loss), 0.05 + u01(rng));
  for (auto* v : {&c.params.b1, &c.params.b2, &c.params.head_b})
    for (Eigen::Index i = 0; i < v->size(); ++i) (*v)(i) = 0.3 * nd(rng);

  auto& b = c.batch;
  b.sat_inputs.resize(n, m + 2);
  b.drone_inputs.resize(n, m + 2);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < m + 2; ++j) {
      b.sat_inputs(i, j) = nd(rng);
      b.drone_inputs(i, j) = nd(rng);
    }
  }
  const int keep = uni(0, n - 1);
  for (int i = 0; i < n; ++i) {
    const bool masked = i != keep && u01(rng) < 0.3;
    b.building_ids.push_back("b" + std::to_string(i));
    b.mask.push_back(masked);
    const double az = 360.0 * u01(rng);
    b.orientation_bins.push_back(masked ? -1 : bin_of(az, LabelConfig{c.loss.bins}));
    b.orientation_deg.push_back(masked ? std::numeric_limits<double>::quiet_NaN() : az);
    b.sat_rotation_deg.push_back(0.0);
    b.drone_true_azimuth_deg.push_back(az);
  }
  return c;
}

// Central differences are only valid away from ReLU kinks.
inline constexpr double kKinkMargin = 1e-3;

inline double min_abs_preactivation(const GradCase& c) {
  return std::min(encode_traced(c.params, c.batch.sat_inputs).pre_relu.cwiseAbs().minCoeff(),
                  encode_traced(c.params, c.batch.drone_inputs).pre_relu.cwiseAbs().minCoeff());
}

// Small random instance: N <= 4, every width <= 8, random mask with at least
// one unmasked row, nonzero biases, no pre-activation within kKinkMargin of 0.
inline GradCase random_grad_case(std::mt19937_64& rng, OrientationMode mode) {
  for (;;) {
    auto c = draw_grad_case(rng, mode);
    if (min_abs_preactivation(c) >= kKinkMargin) return c;
  }
}

// |analytic - numeric| <= max(abs_floor, rel * max(|analytic|, |numeric|)).
inline bool grad_close(double analytic, double numeric, double rel = 1e-4, double abs_floor = 1e-7) {
  return std::abs(analytic - numeric) <= std::max(abs_floor, rel * std::max(std::abs(analytic), std::abs(numeric)));
}

struct GradReport {
  std::size_t coords = 0;
  std::size_t bad = 0;
  double worst_rel = 0.0;
};

inline GradReport check_gradients(const GradCase& c, double h = 1e-5) {
  const auto analytic = forward_backward(c.params, c.batch, c.loss);
  const auto a = oracle::flatten(analytic.grads, c.loss.trainable_temperature);
  const auto num = oracle::numeric_gradient(
      c.params, [&](const ModelParams& p) { return forward_backward(p, c.batch, c.loss).total; }, h,
      c.loss.trainable_temperature);
  GradReport r;
  r.coords = a.size();
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!grad_close(a[i], num[i])) ++r.bad;
    const double scale = std::max({std::abs(a[i]), std::abs(num[i]), 1e-7 / 1e-4});
    r.worst_rel = std::max(r.worst_rel, std::abs(a[i] - num[i]) / scale);
  }
  return r;
}

inline std::string slurp(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("skyalign_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace support
