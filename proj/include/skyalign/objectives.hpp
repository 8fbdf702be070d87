#pragma once

#include <Eigen/Core>

#include <cmath>
#include <numbers>
#include <string>
#include <string_view>
#include <vector>

#include "skyalign/common.hpp"
#include "skyalign/matrix.hpp"

// Contrastive and orientation losses with analytic gradients.
namespace skyalign {

enum class OrientationMode { classification, regression, none };

inline std::string_view to_string(OrientationMode m) {
  switch (m) {
    case OrientationMode::classification: return "classification";
    case OrientationMode::regression: return "regression";
    case OrientationMode::none: return "none";
  }
  return "none";
}

inline OrientationMode parse_orientation_mode(std::string_view s) {
  if (s == "classification") return OrientationMode::classification;
  if (s == "regression") return OrientationMode::regression;
  if (s == "none") return OrientationMode::none;
  throw ConfigError("unknown orientation_mode '" + std::string(s) + "'");
}

struct LossConfig {
  double smoothing = 0.1;
  double temperature = 0.07;
  bool trainable_temperature = false;
  OrientationMode orientation_mode = OrientationMode::classification;
  double orientation_weight = 0.5;  // contrastive : orientation = 2 : 1
  int bins = 8;

  void validate() const {
    if (!(smoothing >= 0.0 && smoothing < 1.0)) throw ConfigError("smoothing must be in [0,1)");
    if (!(temperature > 0.0)) throw ConfigError("temperature must be > 0");
    if (!(orientation_weight >= 0.0)) throw ConfigError("orientation_weight must be >= 0");
    if (bins < 2) throw ConfigError("bins must be >= 2");
  }
};

namespace detail {

inline std::size_t count_unmasked(const std::vector<bool>& mask) {
  std::size_t n = 0;
  for (bool m : mask) n += m ? 0 : 1;
  return n;
}

// Softmax-CE of one logit vector (strided view) against the smoothed one-hot
// target q_j = eps/n + (1-eps)[j == target]. Writes (p - q) * scale into grad.
template <typename Logits, typename Grad>
double smoothed_ce(const Logits& logits, Eigen::Index target, double eps, double scale, Grad&& grad) {
  const auto n = logits.size();
  const double mx = logits.maxCoeff();
  double z = 0.0;
  for (Eigen::Index j = 0; j < n; ++j) z += std::exp(logits(j) - mx);
  const double lse = mx + std::log(z);
  const double off = eps / static_cast<double>(n);
  double loss = 0.0;
  for (Eigen::Index j = 0; j < n; ++j) {
    const double q = off + (j == target ? 1.0 - eps : 0.0);
    loss += q * (lse - logits(j));
    grad(j) += scale * (std::exp(logits(j) - lse) - q);
  }
  return loss;
}

}  // namespace detail

struct InfoNceResult {
  double loss = 0.0;
  MatrixXdR grad_sat;
  MatrixXdR grad_drone;
  double grad_temperature = 0.0;
};

// Symmetric InfoNCE over the in-batch similarity matrix
// S = drone * sat^T / tau. Unmasked rows act as anchors in both directions;
// every row, masked or not, stays in all softmax denominators. The loss is the
// mean over the 2U anchor terms.
inline InfoNceResult infonce_with_grad(const MatrixXdR& emb_sat, const MatrixXdR& emb_drone,
                                       const std::vector<bool>& mask, double tau, double eps) {
  const auto n = emb_sat.rows();
  if (emb_drone.rows() != n || emb_drone.cols() != emb_sat.cols() ||
      static_cast<Eigen::Index>(mask.size()) != n) {
    throw DimMismatch("infonce: embedding or mask shapes differ");
  }
  const std::size_t unmasked = detail::count_unmasked(mask);
  if (unmasked == 0) throw AllMasked("infonce: every row is masked");

  const MatrixXdR cos = emb_drone * emb_sat.transpose();
  const MatrixXdR logits = cos / tau;
  MatrixXdR g = MatrixXdR::Zero(n, n);  // dL/dlogits
  const double scale = 1.0 / (2.0 * static_cast<double>(unmasked));

  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (mask[i]) continue;
    auto grow = g.row(i);
    total += detail::smoothed_ce(logits.row(i), i, eps, scale, grow);
    auto gcol = g.col(i);
    total += detail::smoothed_ce(logits.col(i), i, eps, scale, gcol);
  }

  InfoNceResult out;
  out.loss = total * scale;
  const MatrixXdR gc = g / tau;  // dL/dcos
  out.grad_drone = gc * emb_sat;
  out.grad_sat = gc.transpose() * emb_drone;
  out.grad_temperature = -(g.array() * logits.array()).sum() / tau;
  return out;
}

inline double infonce(const MatrixXdR& emb_sat, const MatrixXdR& emb_drone,
                      const std::vector<bool>& mask, double tau, double eps) {
  return infonce_with_grad(emb_sat, emb_drone, mask, tau, eps).loss;
}

struct OrientationResult {
  double loss = 0.0;
  MatrixXdR grad;  // d loss / d (logits or predictions), same shape as the input
};

// Mean smoothed CE over unmasked rows; 0 (with zero gradient) when all rows
// are masked.
inline OrientationResult orientation_ce_with_grad(const MatrixXdR& logits, const std::vector<int>& labels,
                                                  const std::vector<bool>& mask, double eps) {
  const auto n = logits.rows();
  if (static_cast<Eigen::Index>(labels.size()) != n || static_cast<Eigen::Index>(mask.size()) != n) {
    throw DimMismatch("orientation_ce: label/mask count differs from logits rows");
  }
  OrientationResult out{0.0, MatrixXdR::Zero(n, logits.cols())};
  const std::size_t unmasked = detail::count_unmasked(mask);
  if (unmasked == 0) return out;
  const double scale = 1.0 / static_cast<double>(unmasked);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (mask[i]) continue;
    if (labels[i] < 0 || labels[i] >= logits.cols()) {
      throw DataError("orientation_ce: label out of range");
    }
    auto grow = out.grad.row(i);
    out.loss += detail::smoothed_ce(logits.row(i), labels[i], eps, scale, grow);
  }
  out.loss *= scale;
  return out;
}

inline double orientation_ce(const MatrixXdR& logits, const std::vector<int>& labels,
                             const std::vector<bool>& mask, double eps) {
  return orientation_ce_with_grad(logits, labels, mask, eps).loss;
}

// Mean over unmasked rows of ||pred - (cos theta, sin theta)||^2.
inline OrientationResult orientation_mse_with_grad(const MatrixXdR& pred,
                                                   const std::vector<double>& azimuth_deg,
                                                   const std::vector<bool>& mask) {
  const auto n = pred.rows();
  if (pred.cols() != 2 || static_cast<Eigen::Index>(azimuth_deg.size()) != n ||
      static_cast<Eigen::Index>(mask.size()) != n) {
    throw DimMismatch("orientation_mse: expected N x 2 predictions with N targets");
  }
  OrientationResult out{0.0, MatrixXdR::Zero(n, 2)};
  const std::size_t unmasked = detail::count_unmasked(mask);
  if (unmasked == 0) return out;
  const double scale = 1.0 / static_cast<double>(unmasked);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (mask[i]) continue;
    const double rad = azimuth_deg[i] * std::numbers::pi / 180.0;
    const double dc = pred(i, 0) - std::cos(rad);
    const double ds = pred(i, 1) - std::sin(rad);
    out.loss += dc * dc + ds * ds;
    out.grad(i, 0) = 2.0 * dc * scale;
    out.grad(i, 1) = 2.0 * ds * scale;
  }
  out.loss *= scale;
  return out;
}

inline double orientation_mse(const MatrixXdR& pred, const std::vector<double>& azimuth_deg,
                              const std::vector<bool>& mask) {
  return orientation_mse_with_grad(pred, azimuth_deg, mask).loss;
}

inline double joint(double contrastive, double orientation, const LossConfig& cfg) {
  if (cfg.orientation_mode == OrientationMode::none) return contrastive;
  return contrastive + cfg.orientation_weight * orientation;
}

}  // namespace skyalign
