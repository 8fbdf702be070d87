#pragma once

#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "skyalign/dataset.hpp"
#include "skyalign/model.hpp"
#include "skyalign/retrieval.hpp"
#include "skyalign/trainer.hpp"

// End-to-end runs: generate train/test worlds, train, embed, and score
// Drone2Sat retrieval on held-out buildings. Also the ablation sweeps.
namespace skyalign {

// Encodes every view of the requested kind (all views when kind is empty).
inline EmbeddingSet embed_views(const ModelParams& params, const std::vector<ViewFeature>& views,
                                std::optional<ViewKind> kind = std::nullopt) {
  std::vector<const ViewFeature*> picked;
  for (const auto& v : views) {
    if (!kind || v.kind == *kind) picked.push_back(&v);
  }
  MatrixXdR x(static_cast<Eigen::Index>(picked.size()), params.input_dim());
  std::vector<std::string> ids;
  ids.reserve(picked.size());
  for (std::size_t i = 0; i < picked.size(); ++i) {
    if (static_cast<Eigen::Index>(picked[i]->input.size()) != params.input_dim()) {
      throw DimMismatch("view '" + picked[i]->view_id + "' width differs from model input");
    }
    for (Eigen::Index j = 0; j < params.input_dim(); ++j) x(static_cast<Eigen::Index>(i), j) = picked[i]->input[j];
    ids.push_back(picked[i]->view_id);
  }
  const MatrixXdR emb = encode(params, x);
  std::vector<float> data(static_cast<std::size_t>(emb.size()));
  for (Eigen::Index i = 0; i < emb.rows(); ++i)
    for (Eigen::Index j = 0; j < emb.cols(); ++j) data[i * emb.cols() + j] = static_cast<float>(emb(i, j));
  return EmbeddingSet(std::move(ids), std::move(data), static_cast<std::size_t>(params.embed_dim()));
}

// Drone view -> satellite view of the same building.
inline std::vector<std::pair<std::string, std::string>> drone_to_sat_pairs(const std::vector<ViewFeature>& views) {
  std::map<std::string, std::string> sat_of;
  for (const auto& v : views)
    if (v.kind == ViewKind::satellite) sat_of[v.building_id] = v.view_id;
  std::vector<std::pair<std::string, std::string>> pairs;
  for (const auto& v : views) {
    if (v.kind != ViewKind::drone) continue;
    const auto it = sat_of.find(v.building_id);
    if (it == sat_of.end()) throw ManifestError("building '" + v.building_id + "' has no satellite view");
    pairs.emplace_back(v.view_id, it->second);
  }
  return pairs;
}

inline std::vector<std::pair<std::string, std::string>> sat_to_drone_pairs(const std::vector<ViewFeature>& views) {
  auto pairs = drone_to_sat_pairs(views);
  for (auto& [a, b] : pairs) std::swap(a, b);
  return pairs;
}

inline RelevanceMap to_relevance(const std::vector<std::pair<std::string, std::string>>& pairs) {
  RelevanceMap rel;
  for (const auto& [q, g] : pairs) rel[q].insert(g);
  return rel;
}

struct ExperimentConfig {
  GenConfig gen;
  TrainConfig train;
  SearchOptions search;
};

// Test worlds use buildings disjoint from training: same generator settings,
// different seed.
inline constexpr std::uint64_t kTestSeedOffset = 0x9e3779b97f4a7c15ull;

struct TrialResult {
  Metrics drone2sat;
  TrainLog log;
};

inline Metrics evaluate_drone2sat(const ModelParams& params, const GeneratedData& test, const SearchOptions& search) {
  const auto gallery = embed_views(params, test.features, ViewKind::satellite);
  const auto queries = embed_views(params, test.features, ViewKind::drone);
  return evaluate(queries, gallery, to_relevance(drone_to_sat_pairs(test.features)), {1, 5, 10}, search);
}

inline TrialResult run_trial(ExperimentConfig cfg, std::uint64_t seed) {
  cfg.gen.seed = seed;
  cfg.gen.bins = cfg.train.loss.bins;
  cfg.train.seed = seed;
  const auto train_data = generate(cfg.gen);
  GenConfig test_gen = cfg.gen;
  test_gen.seed = seed + kTestSeedOffset;
  const auto test_data = generate(test_gen);

  const auto ds = Dataset::from_generated(train_data, LabelConfig{cfg.train.loss.bins});
  auto trained = train(cfg.train, ds);
  return {evaluate_drone2sat(trained.params, test_data, cfg.search), std::move(trained.log)};
}

struct AblationRow {
  std::string setting;
  std::uint64_t seed = 0;
  double r1 = 0.0, r5 = 0.0, r10 = 0.0, ap = 0.0;
};

struct AblationSummary {
  std::vector<AblationRow> runs;
  std::vector<AblationRow> means;  // one per setting, in sweep order

  double mean_r1(const std::string& setting) const {
    for (const auto& r : means)
      if (r.setting == setting) return r.r1;
    throw ConfigError("no ablation setting '" + setting + "'");
  }
};

namespace detail {

template <typename Apply>
AblationSummary sweep(const ExperimentConfig& base, const std::vector<std::string>& settings,
                      const std::vector<std::uint64_t>& seeds, Apply&& apply) {
  AblationSummary s;
  for (const auto& setting : settings) {
    ExperimentConfig cfg = base;
    apply(setting, cfg);
    AblationRow mean{setting, 0};
    for (auto seed : seeds) {
      const auto r = run_trial(cfg, seed);
      AblationRow row{setting, seed, r.drone2sat.recall_at(1), r.drone2sat.recall_at(5), r.drone2sat.recall_at(10),
                      r.drone2sat.mean_ap};
      mean.r1 += row.r1 / seeds.size();
      mean.r5 += row.r5 / seeds.size();
      mean.r10 += row.r10 / seeds.size();
      mean.ap += row.ap / seeds.size();
      s.runs.push_back(row);
    }
    s.means.push_back(mean);
  }
  return s;
}

}  // namespace detail

// Orientation granularity sweep: no orientation head, then classification
// over each bin count.
inline AblationSummary ablate_bins(const ExperimentConfig& base, const std::vector<std::uint64_t>& seeds,
                                   const std::vector<int>& bins = {4, 8, 16, 32}) {
  std::vector<std::string> settings{"none"};
  for (int b : bins) settings.push_back("b=" + std::to_string(b));
  return detail::sweep(base, settings, seeds, [](const std::string& setting, ExperimentConfig& cfg) {
    if (setting == "none") {
      cfg.train.loss.orientation_mode = OrientationMode::none;
    } else {
      cfg.train.loss.orientation_mode = OrientationMode::classification;
      cfg.train.loss.bins = std::stoi(setting.substr(2));
    }
  });
}

inline AblationSummary ablate_dim(const ExperimentConfig& base, const std::vector<std::uint64_t>& seeds,
                                  const std::vector<int>& dims = {32, 64, 128}) {
  std::vector<std::string> settings;
  for (int d : dims) settings.push_back("e=" + std::to_string(d));
  return detail::sweep(base, settings, seeds, [](const std::string& setting, ExperimentConfig& cfg) {
    cfg.train.embed_dim = std::stoi(setting.substr(2));
  });
}

inline void write_ablation(std::ostream& os, const AblationSummary& s) {
  os << "setting,seed,r1,r5,r10,ap\n";
  auto line = [&os](const AblationRow& r, const std::string& seed) {
    os << r.setting << ',' << seed << ',' << csv::format_double(r.r1) << ',' << csv::format_double(r.r5) << ','
       << csv::format_double(r.r10) << ',' << csv::format_double(r.ap) << '\n';
  };
  for (const auto& r : s.runs) line(r, std::to_string(r.seed));
  for (const auto& r : s.means) line(r, "mean");
}

}  // namespace skyalign
