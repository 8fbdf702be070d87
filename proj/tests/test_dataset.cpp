#include <gtest/gtest.h>

#include <map>
#include <set>
#include <sstream>

#include "skyalign/dataset.hpp"

using namespace skyalign;

namespace {

GenConfig small_cfg(std::uint64_t seed = 7) {
  GenConfig c;
  c.n_buildings = 2;
  c.views_per_building = 3;
  c.latent_dim = 4;
  c.noise_sigma = 0.0;
  c.fail_prob = 0.0;
  c.seed = seed;
  return c;
}

}  // namespace

TEST(Generate, CountsAndLayout) {
  const auto d = generate(small_cfg());
  ASSERT_EQ(d.features.size(), 8u);
  ASSERT_EQ(d.manifest.size(), 8u);
  int sats = 0;
  for (const auto& f : d.features) {
    EXPECT_EQ(f.input.size(), 6u);
    if (f.kind == ViewKind::satellite) {
      ++sats;
      EXPECT_EQ(f.azimuth_deg, 0.0);
      EXPECT_FLOAT_EQ(f.input[4], 1.0f);
      EXPECT_FLOAT_EQ(f.input[5], 0.0f);
    }
  }
  EXPECT_EQ(sats, 2);
  for (const auto& r : d.manifest) {
    if (r.kind == ViewKind::drone) {
      EXPECT_DOUBLE_EQ(r.position.z, kDroneAltitudeM);
    }
  }
}

TEST(Generate, SigmaZeroLabelsRoundTrip) {
  const auto d = generate(small_cfg());
  const LabelConfig lc{8};
  const auto labels = generate_labels(d.manifest, lc);
  std::map<std::string, const ViewFeature*> by_id;
  for (const auto& f : d.features) by_id[f.view_id] = &f;
  ASSERT_EQ(labels.size(), 6u);
  for (const auto& l : labels) {
    ASSERT_FALSE(l.masked);
    EXPECT_EQ(*l.bin, bin_of(by_id.at(l.view_id)->azimuth_deg, lc));
    EXPECT_EQ(*l.azimuth_deg, by_id.at(l.view_id)->azimuth_deg);
  }
  // With sigma = 0 the latent block is exactly the building latent.
  const auto& s = d.features[0];
  const auto& dr = d.features[1];
  for (int j = 0; j < 4; ++j) EXPECT_EQ(s.input[j], dr.input[j]);
  double n2 = 0.0;
  for (int j = 0; j < 4; ++j) n2 += double(s.input[j]) * s.input[j];
  EXPECT_NEAR(n2, 1.0, 1e-6);
}

TEST(Generate, AllFailedMasksEveryDroneLabel) {
  auto c = small_cfg();
  c.fail_prob = 1.0;
  const auto d = generate(c);
  for (const auto& l : generate_labels(d.manifest, LabelConfig{8})) EXPECT_TRUE(l.masked);
}

TEST(Generate, DefaultConfigMaskedCountIsBinomial) {
  GenConfig c;  // 200 buildings x 10 views, fail_prob 0.1, seed 1
  const auto d = generate(c);
  EXPECT_EQ(d.features.size(), 2200u);
  const auto labels = generate_labels(d.manifest, LabelConfig{8});
  const auto masked = std::count_if(labels.begin(), labels.end(), [](const auto& l) { return l.masked; });
  EXPECT_GE(masked, 140);
  EXPECT_LE(masked, 260);
}

TEST(Generate, DeterministicPerSeed) {
  GenConfig c;
  c.n_buildings = 5;
  c.noise_sigma = 0.5;
  const auto a = generate(c);
  const auto b = generate(c);
  c.seed = 2;
  const auto other = generate(c);
  ASSERT_EQ(a.features.size(), b.features.size());
  for (std::size_t i = 0; i < a.features.size(); ++i) EXPECT_EQ(a.features[i].input, b.features[i].input);
  EXPECT_NE(a.features[0].input, other.features[0].input);
}

TEST(Generate, NoiseNormMatchesSigma) {
  GenConfig c;
  c.n_buildings = 50;
  c.latent_dim = 32;
  c.noise_sigma = 0.5;
  c.fail_prob = 0.0;
  const auto noisy = generate(c);
  c.noise_sigma = 0.0;
  const auto clean = generate(c);
  double sq = 0.0;
  for (std::size_t i = 0; i < noisy.features.size(); ++i) {
    for (int j = 0; j < 32; ++j) {
      const double d = double(noisy.features[i].input[j]) - clean.features[i].input[j];
      sq += d * d;
    }
  }
  // Mean squared noise norm is sigma^2 = 0.25.
  EXPECT_NEAR(sq / noisy.features.size(), 0.25, 0.02);
}

TEST(Generate, RejectsBadConfig) {
  auto c = small_cfg();
  c.n_buildings = 1;
  EXPECT_THROW(generate(c), ConfigError);
  c = small_cfg();
  c.fail_prob = 1.5;
  EXPECT_THROW(generate(c), ConfigError);
  c = small_cfg();
  c.views_per_building = 0;
  EXPECT_THROW(generate(c), ConfigError);
}

TEST(FeatureFile, RoundTrip) {
  GenConfig c = small_cfg();
  c.noise_sigma = 0.3;
  c.fail_prob = 0.5;
  const auto d = generate(c);
  std::stringstream ss;
  write_features(ss, d.features);
  const auto back = read_features(ss);
  ASSERT_EQ(back.size(), d.features.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    EXPECT_EQ(back[i].view_id, d.features[i].view_id);
    EXPECT_EQ(back[i].kind, d.features[i].kind);
    EXPECT_EQ(back[i].input, d.features[i].input);
    EXPECT_EQ(back[i].masked, d.features[i].masked);
    EXPECT_FLOAT_EQ(float(back[i].azimuth_deg), float(d.features[i].azimuth_deg));
  }
  std::stringstream bad("FEAX");
  EXPECT_THROW(read_features(bad), DataError);
}

namespace {

Dataset make_dataset(int buildings, int views, double fail_prob = 0.0, std::uint64_t seed = 3, int bins = 8) {
  GenConfig c;
  c.n_buildings = buildings;
  c.views_per_building = views;
  c.latent_dim = 4;
  c.fail_prob = fail_prob;
  c.seed = seed;
  c.bins = bins;
  return Dataset::from_generated(generate(c), LabelConfig{bins});
}

}  // namespace

TEST(Sampler, DistinctBuildingsAndAlignedRows) {
  const auto ds = make_dataset(20, 4);
  BatchSampler s;
  Rng rng(1);
  for (int t = 0; t < 30; ++t) {
    const auto b = s.sample_batch(rng, ds, 6);
    std::set<std::string> ids(b.building_ids.begin(), b.building_ids.end());
    EXPECT_EQ(ids.size(), b.size());
    for (std::size_t i = 0; i < b.size(); ++i) {
      const auto& bld = *std::find_if(ds.buildings().begin(), ds.buildings().end(),
                                      [&](const Building& x) { return x.id == b.building_ids[i]; });
      const auto& sat = ds.views()[bld.satellite].input;
      for (std::size_t j = 0; j < sat.size(); ++j) EXPECT_EQ(b.sat_inputs(i, j), double(sat[j]));
    }
  }
}

TEST(Sampler, EpochPartitionsBuildings) {
  const auto ds = make_dataset(23, 3);
  BatchSampler s;
  Rng rng(5);
  const int n = 5;
  const auto per_epoch = s.batches_per_epoch(23, n);
  ASSERT_EQ(per_epoch, 5u);
  for (int epoch = 0; epoch < 4; ++epoch) {
    std::multiset<std::string> seen;
    for (std::size_t b = 0; b < per_epoch; ++b) {
      const auto batch = s.sample_batch(rng, ds, n);
      seen.insert(batch.building_ids.begin(), batch.building_ids.end());
    }
    EXPECT_EQ(seen.size(), 23u);
    for (const auto& bld : ds.buildings()) EXPECT_EQ(seen.count(bld.id), 1u);
  }
}

TEST(Sampler, FullBatchCoversEveryBuilding) {
  const auto ds = make_dataset(12, 2);
  BatchSampler s;
  Rng rng(9);
  const auto b = s.sample_batch(rng, ds, 12);
  EXPECT_EQ(std::set<std::string>(b.building_ids.begin(), b.building_ids.end()).size(), 12u);
}

TEST(Sampler, BatchTooLarge) {
  const auto ds = make_dataset(4, 2);
  BatchSampler s;
  Rng rng(1);
  EXPECT_THROW(s.sample_batch(rng, ds, 5), BatchTooLarge);
}

TEST(Sampler, DeterministicForSeed) {
  const auto ds = make_dataset(15, 4, 0.3);
  BatchSampler s1, s2;
  Rng r1(11), r2(11);
  for (int t = 0; t < 10; ++t) {
    const auto a = s1.sample_batch(r1, ds, 4);
    const auto b = s2.sample_batch(r2, ds, 4);
    EXPECT_EQ(a.building_ids, b.building_ids);
    EXPECT_EQ(a.drone_inputs, b.drone_inputs);
    EXPECT_EQ(a.orientation_bins, b.orientation_bins);
  }
}

TEST(Sampler, MaskedRowsCarrySentinel) {
  const auto ds = make_dataset(30, 3, 0.5);
  BatchSampler s;
  Rng rng(2);
  int masked = 0;
  for (int t = 0; t < 20; ++t) {
    const auto b = s.sample_batch(rng, ds, 10);
    for (std::size_t i = 0; i < b.size(); ++i) {
      if (b.mask[i]) {
        ++masked;
        EXPECT_EQ(b.orientation_bins[i], -1);
      } else {
        EXPECT_GE(b.orientation_bins[i], 0);
      }
    }
  }
  EXPECT_GT(masked, 0);
}

// Pooled chi-square over every drone view: each building's drone pick is
// uniform over its views. 20 buildings x 5 views gives 100 cells with 20 fixed
// row totals, so 80 degrees of freedom; the 0.99 quantile of chi2(80) is
// 112.329.
TEST(Sampler, DroneViewSelectionIsUniform) {
  const auto ds = make_dataset(20, 5);
  BatchSampler s;
  Rng rng(2024);
  const int epochs = 10000;
  std::map<std::string, int> drone_of_row;
  std::map<std::pair<std::string, int>, long> counts;
  std::map<std::string, std::vector<std::vector<float>>> drone_inputs;
  for (const auto& b : ds.buildings()) {
    for (auto d : b.drones) drone_inputs[b.id].push_back(ds.views()[d].input);
  }
  for (int e = 0; e < epochs; ++e) {
    for (std::size_t k = 0; k < s.batches_per_epoch(20, 5); ++k) {
      const auto batch = s.sample_batch(rng, ds, 5);
      for (std::size_t i = 0; i < batch.size(); ++i) {
        const auto& cands = drone_inputs[batch.building_ids[i]];
        int which = -1;
        for (std::size_t c = 0; c < cands.size(); ++c) {
          bool same = true;
          for (std::size_t j = 0; j < cands[c].size() && same; ++j) same = batch.drone_inputs(i, j) == cands[c][j];
          if (same) which = static_cast<int>(c);
        }
        ASSERT_GE(which, 0);
        ++counts[{batch.building_ids[i], which}];
      }
    }
  }
  double chi2 = 0.0;
  const double expected = epochs / 5.0;
  for (const auto& [key, n] : counts) chi2 += (n - expected) * (n - expected) / expected;
  EXPECT_EQ(counts.size(), 100u);
  EXPECT_LT(chi2, 112.329);
}

TEST(AlignedRotation, ZeroProbabilityIsIdentity) {
  const auto ds = make_dataset(10, 3, 0.2);
  BatchSampler s;
  Rng rng(1), rot(2);
  const auto b = s.sample_batch(rng, ds, 8);
  const auto r = apply_aligned_rotation(b, rot, 0.0, LabelConfig{8});
  EXPECT_EQ(r.sat_inputs, b.sat_inputs);
  EXPECT_EQ(r.orientation_bins, b.orientation_bins);
}

TEST(AlignedRotation, ForcedSingleStep) {
  TrainBatch b;
  b.sat_inputs = MatrixXdR::Zero(2, 4);
  b.sat_inputs(0, 2) = 1.0;
  b.sat_inputs(1, 2) = 1.0;
  b.drone_inputs = MatrixXdR::Zero(2, 4);
  b.building_ids = {"a", "b"};
  b.orientation_bins = {1, -1};
  b.orientation_deg = {100.0, std::nan("")};
  b.mask = {false, true};
  b.sat_rotation_deg = {0.0, 0.0};
  b.drone_true_azimuth_deg = {100.0, 10.0};
  const LabelConfig lc{4};
  rotate_batch_row(b, 0, 1, lc);
  rotate_batch_row(b, 1, 1, lc);
  EXPECT_NEAR(b.sat_inputs(0, 2), 0.0, 1e-15);
  EXPECT_DOUBLE_EQ(b.sat_inputs(0, 3), 1.0);
  EXPECT_EQ(b.orientation_bins[0], 2);
  EXPECT_EQ(b.orientation_bins[1], -1);
  EXPECT_DOUBLE_EQ(b.sat_rotation_deg[1], 90.0);
}

TEST(AlignedRotation, MaskedRowsKeepSentinelUnderFullProbability) {
  const auto ds = make_dataset(20, 3, 1.0);
  BatchSampler s;
  Rng rng(1), rot(3);
  const auto r = apply_aligned_rotation(s.sample_batch(rng, ds, 10), rot, 1.0, LabelConfig{8});
  for (std::size_t i = 0; i < r.size(); ++i) {
    EXPECT_EQ(r.orientation_bins[i], -1);
    EXPECT_NE(r.sat_rotation_deg[i], 0.0);
  }
}

// The label's meaning: the drone's azimuth measured in the rotated satellite
// frame falls inside the label's bin.
TEST(AlignedRotation, LabelsStaySound) {
  for (int bins : {4, 8, 16, 32}) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      const auto ds = make_dataset(40, 4, 0.2, seed, bins);
      const LabelConfig lc{bins};
      BatchSampler s;
      Rng rng(seed), rot(seed + 100);
      for (double p : {0.0, 0.3, 1.0}) {
        for (int t = 0; t < 10; ++t) {
          const auto b = apply_aligned_rotation(s.sample_batch(rng, ds, 16), rot, p, lc);
          for (std::size_t i = 0; i < b.size(); ++i) {
            if (b.mask[i]) continue;
            const double rel = normalize_deg(b.drone_true_azimuth_deg[i] + b.sat_rotation_deg[i]);
            EXPECT_EQ(bin_of(rel, lc), b.orientation_bins[i]) << "b=" << bins << " seed=" << seed;
          }
        }
      }
    }
  }
}

TEST(AlignedRotation, RotationRateMatchesProbability) {
  const auto ds = make_dataset(64, 2);
  BatchSampler s;
  Rng rng(1), rot(7);
  long rotated = 0, total = 0;
  for (int t = 0; t < 500; ++t) {
    const auto b = apply_aligned_rotation(s.sample_batch(rng, ds, 64), rot, 0.3, LabelConfig{8});
    for (double r : b.sat_rotation_deg) rotated += r != 0.0;
    total += static_cast<long>(b.size());
  }
  // 32000 Bernoulli(0.3) draws: sd ~ 0.0026.
  EXPECT_NEAR(double(rotated) / total, 0.3, 0.013);
}

TEST(DatasetAssemble, RejectsInconsistentInputs) {
  GenConfig c = small_cfg();
  auto d = generate(c);
  auto manifest = d.manifest;
  manifest.pop_back();
  EXPECT_THROW(Dataset::assemble(d.features, manifest, LabelConfig{8}), ManifestError);
  auto feats = d.features;
  feats[1].input.pop_back();
  EXPECT_THROW(Dataset::assemble(feats, d.manifest, LabelConfig{8}), DimMismatch);
}
