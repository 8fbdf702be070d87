#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <istream>
#include <ostream>
#include <random>
#include <vector>

#include "skyalign/binary_io.hpp"
#include "skyalign/common.hpp"
#include "skyalign/dataset.hpp"
#include "skyalign/matrix.hpp"
#include "skyalign/objectives.hpp"

// Weight-shared two-layer encoder with unit-norm outputs, plus a linear
// orientation head over [sat_embedding, drone_embedding].
namespace skyalign {

struct ModelParams {
  MatrixXdR w1;           // hidden x input
  Eigen::VectorXd b1;     // hidden
  MatrixXdR w2;           // embed x hidden
  Eigen::VectorXd b2;     // embed
  MatrixXdR head_w;       // head_outputs x 2*embed
  Eigen::VectorXd head_b; // head_outputs
  double temperature = 0.07;

  Eigen::Index input_dim() const { return w1.cols(); }
  Eigen::Index hidden_dim() const { return w1.rows(); }
  Eigen::Index embed_dim() const { return w2.rows(); }
  Eigen::Index head_outputs() const { return head_w.rows(); }

  // Visits every tensor in checkpoint declaration order; `decay` marks weight
  // matrices (as opposed to biases).
  template <typename Self, typename Fn>
  static void for_each_tensor(Self& self, Fn&& fn) {
    fn(self.w1.template reshaped<Eigen::RowMajor>(), true);
    fn(self.b1.reshaped(), false);
    fn(self.w2.template reshaped<Eigen::RowMajor>(), true);
    fn(self.b2.reshaped(), false);
    fn(self.head_w.template reshaped<Eigen::RowMajor>(), true);
    fn(self.head_b.reshaped(), false);
  }

  static ModelParams zeros_like(const ModelParams& p) {
    ModelParams z;
    z.w1 = MatrixXdR::Zero(p.w1.rows(), p.w1.cols());
    z.b1 = Eigen::VectorXd::Zero(p.b1.size());
    z.w2 = MatrixXdR::Zero(p.w2.rows(), p.w2.cols());
    z.b2 = Eigen::VectorXd::Zero(p.b2.size());
    z.head_w = MatrixXdR::Zero(p.head_w.rows(), p.head_w.cols());
    z.head_b = Eigen::VectorXd::Zero(p.head_b.size());
    z.temperature = 0.0;
    return z;
  }

  bool operator==(const ModelParams& o) const {
    return w1 == o.w1 && b1 == o.b1 && w2 == o.w2 && b2 == o.b2 && head_w == o.head_w &&
           head_b == o.head_b && temperature == o.temperature;
  }
};

// Same shape as ModelParams; `temperature` holds dL/dtau (zero when tau is fixed).
using Gradients = ModelParams;

inline int head_outputs_for(const LossConfig& cfg) {
  return cfg.orientation_mode == OrientationMode::regression ? 2 : cfg.bins;
}

// Xavier-uniform weights, zero biases. `latent_dim` excludes the two
// orientation components, so the encoder input is latent_dim + 2 wide.
inline ModelParams init(Rng& rng, int latent_dim, int hidden, int embed, int head_outputs,
                        double temperature = 0.07) {
  if (latent_dim < 1 || hidden < 1 || embed < 1 || head_outputs < 1) {
    throw ConfigError("model dimensions must be >= 1");
  }
  auto xavier = [&rng](Eigen::Index rows, Eigen::Index cols) {
    const double s = std::sqrt(6.0 / static_cast<double>(rows + cols));
    std::uniform_real_distribution<double> dist(-s, s);
    MatrixXdR m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
      for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = dist(rng);
    return m;
  };
  ModelParams p;
  p.w1 = xavier(hidden, latent_dim + 2);
  p.b1 = Eigen::VectorXd::Zero(hidden);
  p.w2 = xavier(embed, hidden);
  p.b2 = Eigen::VectorXd::Zero(embed);
  p.head_w = xavier(head_outputs, 2 * embed);
  p.head_b = Eigen::VectorXd::Zero(head_outputs);
  p.temperature = temperature;
  return p;
}

// Intermediate activations of one encoder pass, kept for the backward pass.
struct EncoderTrace {
  MatrixXdR pre_relu;  // N x hidden
  MatrixXdR hidden;    // N x hidden
  Eigen::VectorXd norms;
  MatrixXdR output;    // N x embed, unit rows
};

// Each row is encoded independently with the same matrix-vector path, so a
// row's embedding never depends on which other rows share the call.
inline EncoderTrace encode_traced(const ModelParams& p, const MatrixXdR& x) {
  if (x.cols() != p.input_dim()) throw DimMismatch("encode: input width differs from model");
  const auto n = x.rows();
  EncoderTrace t;
  t.pre_relu.resize(n, p.hidden_dim());
  t.hidden.resize(n, p.hidden_dim());
  t.norms.resize(n);
  t.output.resize(n, p.embed_dim());
  Eigen::VectorXd a(p.hidden_dim());
  Eigen::VectorXd u(p.embed_dim());
  for (Eigen::Index i = 0; i < n; ++i) {
    a.noalias() = p.w1 * x.row(i).transpose();
    a += p.b1;
    t.pre_relu.row(i) = a.transpose();
    const Eigen::VectorXd h = a.cwiseMax(0.0);
    t.hidden.row(i) = h.transpose();
    u.noalias() = p.w2 * h;
    u += p.b2;
    const double norm = u.norm();
    if (!(norm >= 1e-12)) throw NormDegenerate("encode: embedding norm below 1e-12");
    t.norms(i) = norm;
    t.output.row(i) = (u / norm).transpose();
  }
  return t;
}

inline MatrixXdR encode(const ModelParams& p, const MatrixXdR& x) {
  return encode_traced(p, x).output;
}

// Row i of the result is head_w * [sat_i ; drone_i] + head_b.
inline MatrixXdR orientation_logits(const ModelParams& p, const MatrixXdR& emb_sat,
                                    const MatrixXdR& emb_drone) {
  if (emb_sat.rows() != emb_drone.rows()) throw DimMismatch("orientation_logits: row counts differ");
  const auto e = p.embed_dim();
  if (emb_sat.cols() != e || emb_drone.cols() != e) throw DimMismatch("orientation_logits: width");
  MatrixXdR logits = emb_sat * p.head_w.leftCols(e).transpose();
  logits.noalias() += emb_drone * p.head_w.rightCols(e).transpose();
  logits.rowwise() += p.head_b.transpose();
  return logits;
}

namespace detail {

// Backpropagates dL/d(output) through normalization, the second layer and the
// relu into `g`.
inline void encoder_backward(const ModelParams& p, const MatrixXdR& x, const EncoderTrace& t,
                             const MatrixXdR& grad_out, Gradients& g) {
  const Eigen::VectorXd radial = (t.output.array() * grad_out.array()).rowwise().sum();
  MatrixXdR grad_u = grad_out - (t.output.array().colwise() * radial.array()).matrix();
  grad_u.array().colwise() /= t.norms.array();
  g.w2.noalias() += grad_u.transpose() * t.hidden;
  g.b2 += grad_u.colwise().sum().transpose();
  MatrixXdR grad_a = grad_u * p.w2;
  grad_a.array() *= (t.pre_relu.array() > 0.0).cast<double>();
  g.w1.noalias() += grad_a.transpose() * x;
  g.b1 += grad_a.colwise().sum().transpose();
}

}  // namespace detail

struct StepResult {
  double total = 0.0;
  double contrastive = 0.0;
  double orientation = 0.0;
  Gradients grads;
};

// total = InfoNCE + weight * orientation loss, with exact gradients for every
// parameter. The head receives no gradient when the orientation mode is `none`.
inline StepResult forward_backward(const ModelParams& p, const TrainBatch& batch, const LossConfig& cfg) {
  const auto sat = encode_traced(p, batch.sat_inputs);
  const auto drone = encode_traced(p, batch.drone_inputs);

  StepResult r;
  r.grads = ModelParams::zeros_like(p);
  auto nce = infonce_with_grad(sat.output, drone.output, batch.mask, p.temperature, cfg.smoothing);
  r.contrastive = nce.loss;
  MatrixXdR grad_sat = std::move(nce.grad_sat);
  MatrixXdR grad_drone = std::move(nce.grad_drone);
  if (cfg.trainable_temperature) r.grads.temperature = nce.grad_temperature;

  if (cfg.orientation_mode != OrientationMode::none) {
    if (cfg.orientation_mode == OrientationMode::classification &&
        p.head_outputs() != cfg.bins) {
      throw DimMismatch("classification head must have one output per bin");
    }
    if (cfg.orientation_mode == OrientationMode::regression && p.head_outputs() != 2) {
      throw DimMismatch("regression head must have two outputs");
    }
    const MatrixXdR logits = orientation_logits(p, sat.output, drone.output);
    OrientationResult o = cfg.orientation_mode == OrientationMode::classification
                              ? orientation_ce_with_grad(logits, batch.orientation_bins, batch.mask,
                                                         cfg.smoothing)
                              : orientation_mse_with_grad(logits, batch.orientation_deg, batch.mask);
    r.orientation = o.loss;
    const MatrixXdR g_logits = cfg.orientation_weight * o.grad;
    const auto e = p.embed_dim();
    r.grads.head_w.leftCols(e).noalias() += g_logits.transpose() * sat.output;
    r.grads.head_w.rightCols(e).noalias() += g_logits.transpose() * drone.output;
    r.grads.head_b += g_logits.colwise().sum().transpose();
    grad_sat.noalias() += g_logits * p.head_w.leftCols(e);
    grad_drone.noalias() += g_logits * p.head_w.rightCols(e);
  }
  r.total = joint(r.contrastive, r.orientation, cfg);

  detail::encoder_backward(p, batch.sat_inputs, sat, grad_sat, r.grads);
  detail::encoder_backward(p, batch.drone_inputs, drone, grad_drone, r.grads);
  return r;
}

// ---------------------------------------------------------------------------
// CKP1 checkpoints: dims (m, h, e, head outputs) then every tensor as f32.

inline constexpr std::uint32_t kCheckpointVersion = 1;

inline void write_checkpoint(std::ostream& os, const ModelParams& p) {
  binio::write_magic(os, "CKP1");
  binio::write_le<std::uint32_t>(os, kCheckpointVersion);
  binio::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(p.input_dim() - 2));
  binio::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(p.hidden_dim()));
  binio::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(p.embed_dim()));
  binio::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(p.head_outputs()));
  ModelParams::for_each_tensor(p, [&os](const auto& t, bool) {
    for (Eigen::Index i = 0; i < t.size(); ++i) binio::write_le<float>(os, static_cast<float>(t(i)));
  });
  binio::write_le<float>(os, static_cast<float>(p.temperature));
}

inline ModelParams read_checkpoint(std::istream& is) {
  binio::expect_magic(is, "CKP1");
  const auto version = binio::read_le<std::uint32_t>(is);
  if (version != kCheckpointVersion) throw FormatError("unsupported checkpoint version");
  const auto m = binio::read_le<std::uint32_t>(is);
  const auto h = binio::read_le<std::uint32_t>(is);
  const auto e = binio::read_le<std::uint32_t>(is);
  const auto b = binio::read_le<std::uint32_t>(is);
  if (m < 1 || h < 1 || e < 1 || b < 1 || m > (1u << 20) || h > (1u << 20) || e > (1u << 20) ||
      b > (1u << 20)) {
    throw FormatError("implausible checkpoint dimensions");
  }
  ModelParams p;
  p.w1.resize(h, m + 2);
  p.b1.resize(h);
  p.w2.resize(e, h);
  p.b2.resize(e);
  p.head_w.resize(b, 2 * e);
  p.head_b.resize(b);
  ModelParams::for_each_tensor(p, [&is](auto t, bool) {
    for (Eigen::Index i = 0; i < t.size(); ++i) t(i) = binio::read_le<float>(is);
  });
  p.temperature = binio::read_le<float>(is);
  if (!(p.temperature > 0.0)) throw FormatError("checkpoint temperature must be > 0");
  return p;
}

}  // namespace skyalign
