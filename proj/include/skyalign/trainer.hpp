#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "skyalign/common.hpp"
#include "skyalign/csv.hpp"
#include "skyalign/dataset.hpp"
#include "skyalign/model.hpp"
#include "skyalign/objectives.hpp"

// AdamW with a warmup + cosine schedule driving the joint objective.
namespace skyalign {

struct TrainConfig {
  double peak_lr = 4e-5;
  double warmup_frac = 0.10;
  int epochs = 1;
  int batch_size = 64;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;
  double rotation_prob = 0.3;
  int hidden_dim = 64;
  int embed_dim = 64;
  LossConfig loss;

  void validate() const {
    if (!(peak_lr >= 0.0) || !std::isfinite(peak_lr)) throw ConfigError("peak_lr must be >= 0");
    if (!(warmup_frac >= 0.0 && warmup_frac < 1.0)) throw ConfigError("warmup_frac must be in [0,1)");
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (batch_size < 2) throw ConfigError("batch_size must be >= 2");
    if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be >= 0");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
      throw ConfigError("betas must be in [0,1)");
    }
    if (!(adam_eps > 0.0)) throw ConfigError("adam_eps must be > 0");
    if (!(rotation_prob >= 0.0 && rotation_prob <= 1.0)) throw ConfigError("rotation_prob must be in [0,1]");
    if (hidden_dim < 1 || embed_dim < 1) throw ConfigError("model dimensions must be >= 1");
    loss.validate();
  }
};

// Linear warmup over the first round(warmup_frac * total) steps, then a half
// cosine down to zero at total_steps.
inline double lr_at(long long step, long long total_steps, const TrainConfig& cfg) {
  const auto warmup = static_cast<long long>(std::llround(cfg.warmup_frac * static_cast<double>(total_steps)));
  if (step < warmup) return cfg.peak_lr * static_cast<double>(step) / static_cast<double>(warmup);
  const double span = static_cast<double>(std::max<long long>(1, total_steps - warmup));
  return cfg.peak_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * static_cast<double>(step - warmup) / span));
}

struct OptimizerState {
  ModelParams first_moment;
  ModelParams second_moment;
  long long step = 0;

  static OptimizerState for_params(const ModelParams& p) {
    return {ModelParams::zeros_like(p), ModelParams::zeros_like(p), 0};
  }
};

// Decoupled-weight-decay Adam on one flat tensor. `step` is the 1-based index
// of this update (bias correction uses beta^step).
inline void adamw_update(std::span<double> theta, std::span<const double> grad, std::span<double> m,
                         std::span<double> v, long long step, double lr, const TrainConfig& cfg,
                         bool decay) {
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
  const double wd = decay ? cfg.weight_decay : 0.0;
  for (std::size_t i = 0; i < theta.size(); ++i) {
    m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * grad[i];
    v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
    const double m_hat = m[i] / c1;
    const double v_hat = v[i] / c2;
    theta[i] -= lr * (m_hat / (std::sqrt(v_hat) + cfg.adam_eps) + wd * theta[i]);
  }
}

inline constexpr double kMinTemperature = 1e-4;

// Weight decay applies to weight matrices only; biases and temperature are
// updated without it. Temperature moves only when it has a gradient.
inline void adamw_step(ModelParams& params, const Gradients& grads, OptimizerState& state, double lr,
                       const TrainConfig& cfg, bool update_temperature = false) {
  ++state.step;
  auto flat = [](auto&& expr) {
    return std::span<double>(expr.nestedExpression().data(), static_cast<std::size_t>(expr.size()));
  };
  auto cflat = [](auto&& expr) {
    return std::span<const double>(expr.nestedExpression().data(), static_cast<std::size_t>(expr.size()));
  };
  std::vector<std::span<double>> p, m, v;
  std::vector<std::span<const double>> g;
  std::vector<bool> decay;
  ModelParams::for_each_tensor(params, [&](auto t, bool d) { p.push_back(flat(t)); decay.push_back(d); });
  ModelParams::for_each_tensor(grads, [&](auto t, bool) { g.push_back(cflat(t)); });
  ModelParams::for_each_tensor(state.first_moment, [&](auto t, bool) { m.push_back(flat(t)); });
  ModelParams::for_each_tensor(state.second_moment, [&](auto t, bool) { v.push_back(flat(t)); });
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i].size() != g[i].size()) throw DimMismatch("adamw_step: gradient shape differs");
    adamw_update(p[i], g[i], m[i], v[i], state.step, lr, cfg, decay[i]);
  }
  if (update_temperature) {
    adamw_update(std::span<double>(&params.temperature, 1), std::span<const double>(&grads.temperature, 1),
                 std::span<double>(&state.first_moment.temperature, 1),
                 std::span<double>(&state.second_moment.temperature, 1), state.step, lr, cfg, false);
    params.temperature = std::max(params.temperature, kMinTemperature);
  }
}

struct TrainLogRow {
  long long step = 0;
  double lr = 0.0;
  double loss_total = 0.0;
  double loss_contrastive = 0.0;
  double loss_orientation = 0.0;

  bool operator==(const TrainLogRow&) const = default;
};

struct TrainLog {
  std::vector<TrainLogRow> rows;
  long long total_steps = 0;
  long long skipped_steps = 0;  // batches with no unmasked row

  bool operator==(const TrainLog&) const = default;
};

inline void write_train_log(std::ostream& os, const TrainLog& log) {
  os << "step,lr,loss_total,loss_contrastive,loss_orientation\n";
  for (const auto& r : log.rows) {
    os << r.step << ',' << csv::format_double(r.lr) << ',' << csv::format_double(r.loss_total) << ','
       << csv::format_double(r.loss_contrastive) << ',' << csv::format_double(r.loss_orientation) << '\n';
  }
}

struct TrainResult {
  ModelParams initial;
  ModelParams params;
  TrainLog log;
};

// Stream indices split one run seed into independent generators.
inline constexpr std::uint64_t kInitStream = 0;
inline constexpr std::uint64_t kSamplerStream = 1;
inline constexpr std::uint64_t kRotationStream = 2;

inline ModelParams init_for(const TrainConfig& cfg, std::size_t input_dim) {
  Rng rng = make_substream(cfg.seed, kInitStream);
  return init(rng, static_cast<int>(input_dim) - 2, cfg.hidden_dim, cfg.embed_dim,
              head_outputs_for(cfg.loss), cfg.loss.temperature);
}

// epochs * ceil(buildings / batch_size) steps of
// sample -> aligned rotation -> forward/backward -> AdamW.
inline TrainResult train(const TrainConfig& cfg, const Dataset& ds) {
  cfg.validate();
  if (ds.buildings().empty()) throw DataError("train: empty dataset");
  if (ds.bins() != cfg.loss.bins) {
    throw ConfigError("train: dataset labels use " + std::to_string(ds.bins()) + " bins, loss expects " +
                      std::to_string(cfg.loss.bins));
  }
  const LabelConfig label_cfg{cfg.loss.bins};
  const int batch_size = cfg.batch_size;

  TrainResult out;
  out.initial = init_for(cfg, ds.input_dim());
  out.params = out.initial;
  OptimizerState opt = OptimizerState::for_params(out.params);
  Rng sampler_rng = make_substream(cfg.seed, kSamplerStream);
  Rng rotation_rng = make_substream(cfg.seed, kRotationStream);
  BatchSampler sampler;

  const auto per_epoch = static_cast<long long>(sampler.batches_per_epoch(ds.buildings().size(), batch_size));
  const long long total = per_epoch * cfg.epochs;
  out.log.total_steps = total;
  for (long long step = 0; step < total; ++step) {
    TrainBatch batch = sampler.sample_batch(sampler_rng, ds, batch_size);
    batch = apply_aligned_rotation(std::move(batch), rotation_rng, cfg.rotation_prob, label_cfg);
    const double lr = lr_at(step, total, cfg);
    if (std::find(batch.mask.begin(), batch.mask.end(), false) == batch.mask.end()) {
      ++out.log.skipped_steps;
      continue;
    }
    StepResult r = forward_backward(out.params, batch, cfg.loss);
    bool finite = std::isfinite(r.total) && std::isfinite(r.grads.temperature);
    ModelParams::for_each_tensor(r.grads, [&finite](const auto& t, bool) { finite = finite && t.allFinite(); });
    if (!finite) {
      throw NumericError("non-finite loss or gradient at step " + std::to_string(step) +
                         " (contrastive=" + std::to_string(r.contrastive) +
                         ", orientation=" + std::to_string(r.orientation) + ")");
    }
    out.log.rows.push_back({step, lr, r.total, r.contrastive, r.orientation});
    adamw_step(out.params, r.grads, opt, lr, cfg, cfg.loss.trainable_temperature);
  }
  return out;
}

}  // namespace skyalign
