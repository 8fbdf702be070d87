#pragma once

#include <algorithm>
#include <numeric>
#include <ostream>
#include <tuple>
#include <string>
#include <unordered_map>
#include <vector>

#include "skyalign/common.hpp"
#include "skyalign/csv.hpp"
#include "skyalign/retrieval.hpp"

// Multi-model score fusion over a shared query/gallery id space.
namespace skyalign {

// Dense query x gallery similarity matrix, row-major.
struct ScoreTable {
  std::vector<std::string> query_ids;
  std::vector<std::string> gallery_ids;
  std::vector<double> scores;

  double at(std::size_t q, std::size_t g) const { return scores[q * gallery_ids.size() + g]; }
};

inline ScoreTable score_table(const EmbeddingSet& gallery, const EmbeddingSet& queries,
                              const SearchOptions& opts = {}) {
  ScoreTable t{queries.ids(), gallery.ids(), std::vector<double>(queries.size() * gallery.size())};
  const std::size_t ng = gallery.size();
  detail::scan_scores(gallery, queries, opts,
                      [&](std::size_t q0, std::size_t q1, std::size_t g0, std::size_t g1, const float* s) {
                        for (std::size_t q = q0; q < q1; ++q)
                          for (std::size_t g = g0; g < g1; ++g) t.scores[q * ng + g] = s[(q - q0) * (g1 - g0) + g - g0];
                      });
  return t;
}

enum class Fusion { score_mean, reciprocal_rank };

inline constexpr double kReciprocalRankOffset = 60.0;

namespace detail {

// Full descending ranking of one score row; ties by ascending gallery id.
inline std::vector<std::size_t> rank_row(const std::vector<double>& row, const std::vector<std::string>& ids) {
  std::vector<std::size_t> order(row.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (row[a] != row[b]) return row[a] > row[b];
    return ids[a] < ids[b];
  });
  return order;
}

inline std::vector<std::size_t> permutation_to(const std::vector<std::string>& reference,
                                               const std::vector<std::string>& other, const char* what) {
  if (reference.size() != other.size()) throw IdMismatch(std::string("ensemble: ") + what + " counts differ");
  std::unordered_map<std::string, std::size_t> pos;
  for (std::size_t i = 0; i < other.size(); ++i) pos.emplace(other[i], i);
  std::vector<std::size_t> perm(reference.size());
  for (std::size_t i = 0; i < reference.size(); ++i) {
    const auto it = pos.find(reference[i]);
    if (it == pos.end()) throw IdMismatch(std::string("ensemble: ") + what + " id '" + reference[i] + "' missing");
    perm[i] = it->second;
  }
  return perm;
}

}  // namespace detail

// Fused score = weighted mean of per-model scores (or weighted reciprocal-rank
// sum), then a full re-ranking per query. Query order follows the first table.
inline std::vector<RankedList> ensemble(const std::vector<ScoreTable>& tables, const std::vector<double>& weights,
                                        Fusion fusion = Fusion::score_mean) {
  if (tables.size() < 2) throw ConfigError("ensemble: need at least two score tables");
  if (weights.size() != tables.size()) throw ConfigError("ensemble: one weight per score table required");
  const double wsum = std::accumulate(weights.begin(), weights.end(), 0.0);
  if (!(wsum > 0.0) || std::any_of(weights.begin(), weights.end(), [](double w) { return !(w >= 0.0); })) {
    throw ConfigError("ensemble: weights must be >= 0 with a positive sum");
  }
  const auto& ref = tables.front();
  const std::size_t nq = ref.query_ids.size();
  const std::size_t ng = ref.gallery_ids.size();
  std::vector<std::vector<std::size_t>> qperm, gperm;
  for (const auto& t : tables) {
    if (t.scores.size() != t.query_ids.size() * t.gallery_ids.size()) {
      throw DimMismatch("ensemble: score table is not query x gallery");
    }
    qperm.push_back(detail::permutation_to(ref.query_ids, t.query_ids, "query"));
    gperm.push_back(detail::permutation_to(ref.gallery_ids, t.gallery_ids, "gallery"));
  }

  std::vector<RankedList> out;
  out.reserve(nq);
  std::vector<double> fused(ng);
  std::vector<double> row(ng);
  for (std::size_t q = 0; q < nq; ++q) {
    std::fill(fused.begin(), fused.end(), 0.0);
    for (std::size_t m = 0; m < tables.size(); ++m) {
      const auto& t = tables[m];
      for (std::size_t g = 0; g < ng; ++g) row[g] = t.at(qperm[m][q], gperm[m][g]);
      if (fusion == Fusion::score_mean) {
        for (std::size_t g = 0; g < ng; ++g) fused[g] += weights[m] * row[g];
      } else {
        const auto order = detail::rank_row(row, ref.gallery_ids);
        for (std::size_t r = 0; r < order.size(); ++r) {
          fused[order[r]] += weights[m] / (kReciprocalRankOffset + static_cast<double>(r + 1));
        }
      }
    }
    if (fusion == Fusion::score_mean) {
      for (auto& f : fused) f /= wsum;
    }
    RankedList list{ref.query_ids[q], {}, {}};
    for (std::size_t g : detail::rank_row(fused, ref.gallery_ids)) {
      list.gallery_ids.push_back(ref.gallery_ids[g]);
      list.scores.push_back(static_cast<float>(fused[g]));
    }
    out.push_back(std::move(list));
  }
  return out;
}

inline void write_score_table(std::ostream& os, const ScoreTable& t) {
  os << "query_id,gallery_id,score\n";
  for (std::size_t q = 0; q < t.query_ids.size(); ++q) {
    for (std::size_t g = 0; g < t.gallery_ids.size(); ++g) {
      os << t.query_ids[q] << ',' << t.gallery_ids[g] << ',' << csv::format_double(t.at(q, g)) << '\n';
    }
  }
}

// Every (query, gallery) pair must appear exactly once.
inline ScoreTable parse_score_table(const std::vector<std::string>& lines) {
  std::vector<std::string> qids, gids;
  std::unordered_map<std::string, std::size_t> qpos, gpos;
  std::vector<std::tuple<std::size_t, std::size_t, double>> entries;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const auto line = csv::trim(lines[i]);
    if (line.empty() || (i == 0 && line == "query_id,gallery_id,score")) continue;
    const auto f = csv::split(line);
    if (f.size() != 3) throw FormatError("scores line " + std::to_string(i + 1) + ": expected 3 fields");
    const std::string q(csv::trim(f[0]));
    const std::string g(csv::trim(f[1]));
    if (qpos.emplace(q, qids.size()).second) qids.push_back(q);
    if (gpos.emplace(g, gids.size()).second) gids.push_back(g);
    entries.emplace_back(qpos[q], gpos[g], csv::parse_double(f[2]));
  }
  ScoreTable t{qids, gids, std::vector<double>(qids.size() * gids.size(), 0.0)};
  std::vector<bool> seen(t.scores.size(), false);
  for (const auto& [q, g, s] : entries) {
    const std::size_t k = q * gids.size() + g;
    if (seen[k]) throw FormatError("scores: duplicate pair " + qids[q] + "," + gids[g]);
    seen[k] = true;
    t.scores[k] = s;
  }
  if (std::find(seen.begin(), seen.end(), false) != seen.end()) {
    throw FormatError("scores: table is missing query/gallery pairs");
  }
  return t;
}

}  // namespace skyalign
