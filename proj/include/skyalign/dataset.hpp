#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <numbers>
#include <numeric>
#include <string>
#include <vector>

#include "skyalign/binary_io.hpp"
#include "skyalign/common.hpp"
#include "skyalign/matrix.hpp"
#include "skyalign/pose_geometry.hpp"

// Synthetic cross-view features with known orientation, the one-drone-view-
// per-building batch sampler, and the aligned satellite rotation augmentation.
namespace skyalign {

struct GenConfig {
  int n_buildings = 200;
  int views_per_building = 10;
  int latent_dim = 32;
  double noise_sigma = 0.5;
  double fail_prob = 0.1;
  std::uint64_t seed = 1;
  int bins = 8;

  void validate() const {
    if (n_buildings < 2) throw ConfigError("n_buildings must be >= 2");
    if (views_per_building < 1) throw ConfigError("views_per_building must be >= 1");
    if (latent_dim < 1) throw ConfigError("latent_dim must be >= 1");
    if (!(noise_sigma >= 0.0)) throw ConfigError("noise_sigma must be >= 0");
    if (!(fail_prob >= 0.0 && fail_prob <= 1.0)) throw ConfigError("fail_prob must be in [0,1]");
    LabelConfig{bins};
  }
};

// input = [latent + sigma * noise ; cos(angle), sin(angle)], where angle is
// the true azimuth for drones and the current rotation for satellites and
// noise ~ N(0, I/m).
struct ViewFeature {
  std::string view_id;
  std::string building_id;
  ViewKind kind = ViewKind::drone;
  std::vector<float> input;
  double azimuth_deg = 0.0;
  bool masked = false;
};

struct GeneratedData {
  std::vector<ViewFeature> features;
  std::vector<PoseRecord> manifest;
};

inline constexpr double kDroneRadiusM = 100.0;
inline constexpr double kDroneAltitudeM = 50.0;
inline constexpr double kBuildingSpacingM = 1000.0;

inline double deg2rad(double deg) { return deg * std::numbers::pi / 180.0; }

inline std::string building_name(int b) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "b%05d", b);
  return buf;
}

// Each building draws from its own substream keyed by (seed, building index),
// so buildings can be generated in any order.
inline GeneratedData generate(const GenConfig& cfg) {
  cfg.validate();
  GeneratedData out;
  const int m = cfg.latent_dim;
  for (int b = 0; b < cfg.n_buildings; ++b) {
    Rng rng = make_substream(cfg.seed, static_cast<std::uint64_t>(b));
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> uniform(0.0, 1.0);

    std::vector<double> latent(m);
    double norm2 = 0.0;
    do {
      norm2 = 0.0;
      for (auto& v : latent) {
        v = normal(rng);
        norm2 += v * v;
      }
    } while (norm2 < 1e-24);
    for (auto& v : latent) v /= std::sqrt(norm2);

    // Noise coordinates have variance sigma^2 / m, so sigma is the expected
    // noise-to-signal norm ratio against the unit latent.
    const double noise_scale = cfg.noise_sigma / std::sqrt(static_cast<double>(m));
    auto make_input = [&](double angle_deg) {
      std::vector<float> input(m + 2);
      for (int j = 0; j < m; ++j) {
        input[j] = static_cast<float>(latent[j] + noise_scale * normal(rng));
      }
      input[m] = static_cast<float>(std::cos(deg2rad(angle_deg)));
      input[m + 1] = static_cast<float>(std::sin(deg2rad(angle_deg)));
      return input;
    };

    const std::string bid = building_name(b);
    const Vec3 center{kBuildingSpacingM * (b % 100), kBuildingSpacingM * (b / 100), 0.0};

    out.features.push_back({bid + "_sat", bid, ViewKind::satellite, make_input(0.0), 0.0, false});
    out.manifest.push_back({bid + "_sat", bid, ViewKind::satellite, center, PoseStatus::ok});

    for (int v = 0; v < cfg.views_per_building; ++v) {
      const double drawn = 360.0 * uniform(rng);
      const bool failed = uniform(rng) < cfg.fail_prob;
      const Vec3 pos{center.x + kDroneRadiusM * std::sin(deg2rad(drawn)),
                     center.y + kDroneRadiusM * std::cos(deg2rad(drawn)), kDroneAltitudeM};
      // The true azimuth is re-derived from the emitted position so label
      // generation on the manifest reproduces it bit for bit.
      const double azimuth = relative_azimuth(center, pos);
      char vid[16];
      std::snprintf(vid, sizeof(vid), "_d%03d", v);
      out.features.push_back(
          {bid + vid, bid, ViewKind::drone, make_input(azimuth), azimuth, failed});
      out.manifest.push_back(
          {bid + vid, bid, ViewKind::drone, pos, failed ? PoseStatus::failed : PoseStatus::ok});
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Training view of the data: features joined with manifest-derived labels.

struct Building {
  std::string id;
  std::size_t satellite = 0;
  std::vector<std::size_t> drones;
};

class Dataset {
 public:
  static Dataset assemble(std::vector<ViewFeature> features, const std::vector<PoseRecord>& manifest,
                          const LabelConfig& cfg) {
    Dataset ds;
    ds.bins_ = cfg.bins();
    std::map<std::string, std::string> building_of;
    for (const auto& rec : manifest) building_of[rec.view_id] = rec.building_id;

    std::map<std::string, OrientationLabel> label_of;
    for (auto& l : generate_labels(manifest, cfg)) label_of.emplace(l.view_id, std::move(l));

    std::map<std::string, std::size_t> building_index;
    ds.labels_.resize(features.size());
    for (std::size_t i = 0; i < features.size(); ++i) {
      auto& f = features[i];
      const auto it = building_of.find(f.view_id);
      if (it == building_of.end()) {
        throw ManifestError("view '" + f.view_id + "' missing from manifest");
      }
      if (!f.building_id.empty() && f.building_id != it->second) {
        throw ManifestError("view '" + f.view_id + "' building mismatch");
      }
      f.building_id = it->second;
      if (i == 0) ds.input_dim_ = f.input.size();
      if (f.input.size() != ds.input_dim_ || ds.input_dim_ < 3) {
        throw DimMismatch("feature '" + f.view_id + "' has inconsistent dimension");
      }
      auto [bit, inserted] = building_index.emplace(f.building_id, ds.buildings_.size());
      if (inserted) ds.buildings_.push_back({f.building_id, features.size(), {}});
      auto& bld = ds.buildings_[bit->second];
      if (f.kind == ViewKind::satellite) {
        if (bld.satellite != features.size()) {
          throw ManifestError("building '" + bld.id + "' has two satellite features");
        }
        bld.satellite = i;
      } else {
        const auto lab = label_of.find(f.view_id);
        if (lab == label_of.end()) throw ManifestError("no label for '" + f.view_id + "'");
        ds.labels_[i] = lab->second;
        bld.drones.push_back(i);
      }
    }
    for (const auto& bld : ds.buildings_) {
      if (bld.satellite == features.size()) {
        throw ManifestError("building '" + bld.id + "' has no satellite feature");
      }
      if (bld.drones.empty()) throw ManifestError("building '" + bld.id + "' has no drone views");
    }
    ds.views_ = std::move(features);
    return ds;
  }

  static Dataset from_generated(const GeneratedData& data, const LabelConfig& cfg) {
    return assemble(data.features, data.manifest, cfg);
  }

  const std::vector<ViewFeature>& views() const { return views_; }
  const std::vector<Building>& buildings() const { return buildings_; }
  const OrientationLabel& label(std::size_t view) const { return labels_[view]; }
  std::size_t input_dim() const { return input_dim_; }
  int bins() const { return bins_; }

 private:
  std::vector<ViewFeature> views_;
  std::vector<Building> buildings_;
  std::vector<OrientationLabel> labels_;
  std::size_t input_dim_ = 0;
  int bins_ = 0;
};

// Row i of both input matrices comes from building_ids[i]. Masked rows carry
// bin -1 and a NaN orientation.
struct TrainBatch {
  MatrixXdR sat_inputs;
  MatrixXdR drone_inputs;
  std::vector<std::string> building_ids;
  std::vector<int> orientation_bins;
  std::vector<double> orientation_deg;  // pseudo azimuth relative to the current satellite rotation
  std::vector<bool> mask;
  // Ground truth kept for oracle checks only; never read by the loss.
  std::vector<double> sat_rotation_deg;
  std::vector<double> drone_true_azimuth_deg;

  std::size_t size() const { return building_ids.size(); }
};

// Shuffles buildings once per epoch and hands them out in consecutive chunks,
// so each building appears exactly once per ceil(n / N) batches. The final
// chunk of an epoch may be shorter than N.
class BatchSampler {
 public:
  TrainBatch sample_batch(Rng& rng, const Dataset& ds, int batch_size) {
    const auto n = ds.buildings().size();
    if (batch_size < 1) throw ConfigError("batch size must be >= 1");
    if (static_cast<std::size_t>(batch_size) > n) {
      throw BatchTooLarge("batch size " + std::to_string(batch_size) + " exceeds " +
                          std::to_string(n) + " buildings");
    }
    if (cursor_ >= order_.size() || order_.size() != n) {
      order_.resize(n);
      std::iota(order_.begin(), order_.end(), std::size_t{0});
      std::shuffle(order_.begin(), order_.end(), rng);
      cursor_ = 0;
    }
    const std::size_t take = std::min<std::size_t>(batch_size, n - cursor_);
    const auto dim = static_cast<Eigen::Index>(ds.input_dim());

    TrainBatch batch;
    batch.sat_inputs.resize(static_cast<Eigen::Index>(take), dim);
    batch.drone_inputs.resize(static_cast<Eigen::Index>(take), dim);
    for (std::size_t r = 0; r < take; ++r) {
      const auto& bld = ds.buildings()[order_[cursor_ + r]];
      std::uniform_int_distribution<std::size_t> pick(0, bld.drones.size() - 1);
      const std::size_t drone = bld.drones[pick(rng)];
      const auto& sat_view = ds.views()[bld.satellite];
      const auto& drone_view = ds.views()[drone];
      for (Eigen::Index j = 0; j < dim; ++j) {
        batch.sat_inputs(static_cast<Eigen::Index>(r), j) = sat_view.input[j];
        batch.drone_inputs(static_cast<Eigen::Index>(r), j) = drone_view.input[j];
      }
      const auto& label = ds.label(drone);
      batch.building_ids.push_back(bld.id);
      batch.mask.push_back(label.masked);
      batch.orientation_bins.push_back(label.masked ? -1 : *label.bin);
      batch.orientation_deg.push_back(label.masked ? std::numeric_limits<double>::quiet_NaN()
                                                   : *label.azimuth_deg);
      batch.sat_rotation_deg.push_back(sat_view.azimuth_deg);
      batch.drone_true_azimuth_deg.push_back(drone_view.azimuth_deg);
    }
    cursor_ += take;
    return batch;
  }

  std::size_t batches_per_epoch(std::size_t n_buildings, int batch_size) const {
    return (n_buildings + batch_size - 1) / batch_size;
  }

 private:
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
};

// Rotates row `row`'s satellite view clockwise by k bin widths and adjusts its
// label to match. Masked rows rotate their features but keep the sentinel.
inline void rotate_batch_row(TrainBatch& batch, std::size_t row, int k, const LabelConfig& cfg) {
  const auto r = static_cast<Eigen::Index>(row);
  const auto dim = batch.sat_inputs.cols();
  const double rotation = normalize_deg(batch.sat_rotation_deg[row] + k * cfg.bin_width_deg());
  batch.sat_rotation_deg[row] = rotation;
  batch.sat_inputs(r, dim - 2) = std::cos(deg2rad(rotation));
  batch.sat_inputs(r, dim - 1) = std::sin(deg2rad(rotation));
  if (!batch.mask[row]) {
    batch.orientation_bins[row] = rotate_label(batch.orientation_bins[row], k, cfg);
    batch.orientation_deg[row] = normalize_deg(batch.orientation_deg[row] + k * cfg.bin_width_deg());
  }
}

// Per row, with probability p, rotate the satellite by a uniform k in
// {1, ..., b-1} bin widths.
inline TrainBatch apply_aligned_rotation(TrainBatch batch, Rng& rng, double p,
                                         const LabelConfig& cfg) {
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  std::uniform_int_distribution<int> steps(1, cfg.bins() - 1);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    if (coin(rng) < p) rotate_batch_row(batch, i, steps(rng), cfg);
  }
  return batch;
}

// ---------------------------------------------------------------------------
// FEA1 feature files.

inline void write_features(std::ostream& os, const std::vector<ViewFeature>& features) {
  const std::uint32_t dim = features.empty() ? 0 : static_cast<std::uint32_t>(features[0].input.size());
  binio::write_magic(os, "FEA1");
  binio::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(features.size()));
  binio::write_le<std::uint32_t>(os, dim);
  for (const auto& f : features) {
    if (f.input.size() != dim) throw DimMismatch("feature '" + f.view_id + "' dimension differs");
    binio::write_id(os, f.view_id);
    binio::write_le<std::uint8_t>(os, static_cast<std::uint8_t>(f.kind));
    for (float v : f.input) binio::write_le<float>(os, v);
    binio::write_le<float>(os, static_cast<float>(f.azimuth_deg));
    binio::write_le<std::uint8_t>(os, f.masked ? 1 : 0);
  }
}

// building_id is not part of the file; join with the manifest to recover it.
inline std::vector<ViewFeature> read_features(std::istream& is) {
  binio::expect_magic(is, "FEA1");
  const auto count = binio::read_le<std::uint32_t>(is);
  const auto dim = binio::read_le<std::uint32_t>(is);
  std::vector<ViewFeature> out;
  out.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    ViewFeature f;
    f.view_id = binio::read_id(is);
    const auto kind = binio::read_le<std::uint8_t>(is);
    if (kind > 1) throw FormatError("bad view kind byte");
    f.kind = static_cast<ViewKind>(kind);
    f.input.resize(dim);
    for (auto& v : f.input) v = binio::read_le<float>(is);
    f.azimuth_deg = binio::read_le<float>(is);
    f.masked = binio::read_le<std::uint8_t>(is) != 0;
    out.push_back(std::move(f));
  }
  return out;
}

}  // namespace skyalign
