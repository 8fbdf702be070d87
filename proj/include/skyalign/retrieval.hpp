#pragma once

#if defined(__AVX2__) && defined(__FMA__)
#include <immintrin.h>
#define SKYALIGN_HAVE_AVX2 1
#endif

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <istream>
#include <map>
#include <numeric>
#include <ostream>
#include <set>
#include <span>
#include <string>
#include <thread>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "skyalign/binary_io.hpp"
#include "skyalign/common.hpp"
#include "skyalign/csv.hpp"

// Exact brute-force cosine retrieval and the Recall@K / AP metrics.
namespace skyalign {

// Rows are unit-norm embeddings; ids are unique.
class EmbeddingSet {
 public:
  EmbeddingSet() = default;

  // Rows are re-normalized to unit length.
  EmbeddingSet(std::vector<std::string> ids, std::vector<float> data, std::size_t dim)
      : ids_(std::move(ids)), data_(std::move(data)), dim_(dim) {
    if (dim_ == 0) throw DimMismatch("embedding dimension must be >= 1");
    if (data_.size() != ids_.size() * dim_) throw DimMismatch("embedding data size != count * dim");
    std::unordered_set<std::string> seen;
    for (const auto& id : ids_) {
      if (!seen.insert(id).second) throw DataError("duplicate embedding id '" + id + "'");
    }
    normalize();
  }

  std::size_t size() const { return ids_.size(); }
  bool empty() const { return ids_.empty(); }
  std::size_t dim() const { return dim_; }
  const std::vector<std::string>& ids() const { return ids_; }
  std::span<const float> row(std::size_t i) const { return {data_.data() + i * dim_, dim_}; }
  const float* data() const { return data_.data(); }

 private:
  void normalize() {
    for (std::size_t i = 0; i < ids_.size(); ++i) {
      float* r = data_.data() + i * dim_;
      double n2 = 0.0;
      for (std::size_t j = 0; j < dim_; ++j) n2 += static_cast<double>(r[j]) * r[j];
      if (!(n2 > 0.0) || !std::isfinite(n2)) {
        throw NumericError("embedding '" + ids_[i] + "' has zero or non-finite norm");
      }
      const double inv = 1.0 / std::sqrt(n2);
      for (std::size_t j = 0; j < dim_; ++j) r[j] = static_cast<float>(r[j] * inv);
    }
  }

  std::vector<std::string> ids_;
  std::vector<float> data_;
  std::size_t dim_ = 0;
};

inline void write_embeddings(std::ostream& os, const EmbeddingSet& set) {
  binio::write_magic(os, "EMB1");
  binio::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(set.size()));
  binio::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(set.dim()));
  for (std::size_t i = 0; i < set.size(); ++i) {
    for (float v : set.row(i)) binio::write_le<float>(os, v);
  }
  for (const auto& id : set.ids()) binio::write_id(os, id);
}

inline EmbeddingSet read_embeddings(std::istream& is) {
  binio::expect_magic(is, "EMB1");
  const auto count = binio::read_le<std::uint32_t>(is);
  const auto dim = binio::read_le<std::uint32_t>(is);
  std::vector<float> data(static_cast<std::size_t>(count) * dim);
  for (auto& v : data) v = binio::read_le<float>(is);
  std::vector<std::string> ids(count);
  for (auto& id : ids) id = binio::read_id(is);
  return EmbeddingSet(std::move(ids), std::move(data), dim);
}

// Keeps the first d coordinates and re-normalizes.
inline EmbeddingSet truncate_dim(const EmbeddingSet& set, std::size_t d) {
  if (d < 1 || d > set.dim()) {
    throw DimTooLarge("cannot truncate dimension " + std::to_string(set.dim()) + " to " + std::to_string(d));
  }
  std::vector<float> data(set.size() * d);
  for (std::size_t i = 0; i < set.size(); ++i) {
    std::copy_n(set.row(i).begin(), d, data.begin() + static_cast<std::ptrdiff_t>(i * d));
  }
  return EmbeddingSet(set.ids(), std::move(data), d);
}

struct RankedList {
  std::string query_id;
  std::vector<std::string> gallery_ids;  // best first
  std::vector<float> scores;             // non-increasing
};

struct SearchOptions {
  std::size_t gallery_block = 256;
  std::size_t query_block = 64;
  unsigned threads = 1;
};

namespace detail {

// Fused where the hardware has FMA, so the compiler cannot contract some
// call sites and not others.
inline float madd(float a, float b, float c) {
#if defined(__FMA__)
  return std::fma(a, b, c);
#else
  return a * b + c;
#endif
}

#if SKYALIGN_HAVE_AVX2
inline float hsum(__m256 v) {
  const __m128 lo = _mm256_castps256_ps128(v);
  const __m128 hi = _mm256_extractf128_ps(v, 1);
  __m128 s = _mm_add_ps(lo, hi);
  s = _mm_add_ps(s, _mm_movehl_ps(s, s));
  s = _mm_add_ss(s, _mm_shuffle_ps(s, s, 0x55));
  return _mm_cvtss_f32(s);
}
#endif

// Dot products of Q query rows against G gallery rows. Every (query, gallery)
// pair goes through the identical sequence of operations whatever Q and G
// are, so a score never depends on tiling, blocking or thread count.
template <int Q, int G>
inline void dot_tile(const float* const* q, const float* const* g, std::size_t dim, float* out,
                     std::size_t out_stride) {
  std::size_t d = 0;
  float sums[Q][G];
#if SKYALIGN_HAVE_AVX2
  __m256 acc[Q][G];
  for (int i = 0; i < Q; ++i)
    for (int j = 0; j < G; ++j) acc[i][j] = _mm256_setzero_ps();
  for (; d + 8 <= dim; d += 8) {
    __m256 gv[G];
    for (int j = 0; j < G; ++j) gv[j] = _mm256_loadu_ps(g[j] + d);
    for (int i = 0; i < Q; ++i) {
      const __m256 qv = _mm256_loadu_ps(q[i] + d);
      for (int j = 0; j < G; ++j) acc[i][j] = _mm256_fmadd_ps(qv, gv[j], acc[i][j]);
    }
  }
  for (int i = 0; i < Q; ++i)
    for (int j = 0; j < G; ++j) sums[i][j] = hsum(acc[i][j]);
#else
  for (int i = 0; i < Q; ++i)
    for (int j = 0; j < G; ++j) sums[i][j] = 0.0f;
#endif
  for (; d < dim; ++d) {
    for (int i = 0; i < Q; ++i)
      for (int j = 0; j < G; ++j) sums[i][j] = madd(q[i][d], g[j][d], sums[i][j]);
  }
  for (int i = 0; i < Q; ++i)
    for (int j = 0; j < G; ++j) out[i * out_stride + j] = sums[i][j];
}

inline constexpr int kTileQ = 4;
inline constexpr int kTileG = 3;

template <int Q>
inline void dot_tile_g(const float* const* q, const float* const* g, int gn, std::size_t dim, float* out,
                       std::size_t stride) {
  switch (gn) {
    case 3: dot_tile<Q, 3>(q, g, dim, out, stride); break;
    case 2: dot_tile<Q, 2>(q, g, dim, out, stride); break;
    default: dot_tile<Q, 1>(q, g, dim, out, stride); break;
  }
}

inline void dot_tile_any(const float* const* q, int qn, const float* const* g, int gn, std::size_t dim,
                         float* out, std::size_t stride) {
  switch (qn) {
    case 4: dot_tile_g<4>(q, g, gn, dim, out, stride); break;
    case 3: dot_tile_g<3>(q, g, gn, dim, out, stride); break;
    case 2: dot_tile_g<2>(q, g, gn, dim, out, stride); break;
    default: dot_tile_g<1>(q, g, gn, dim, out, stride); break;
  }
}

inline float dot(std::span<const float> a, std::span<const float> b) {
  const float* pa = a.data();
  const float* pb = b.data();
  float out = 0.0f;
  dot_tile<1, 1>(&pa, &pb, a.size(), &out, 1);
  return out;
}

// Scores every query against every gallery row, one (query block, gallery
// block) rectangle at a time. `consume(q0, q1, g0, g1, scores)` receives a
// row-major (q1-q0) x (g1-g0) buffer. Query blocks are distributed over
// worker threads; each query block is visited by exactly one thread, in
// ascending gallery order.
template <typename Consume>
void scan_scores(const EmbeddingSet& gallery, const EmbeddingSet& queries, const SearchOptions& opts,
                 Consume&& consume) {
  if (gallery.dim() != queries.dim()) {
    throw DimMismatch("gallery dim " + std::to_string(gallery.dim()) + " != query dim " +
                      std::to_string(queries.dim()));
  }
  const std::size_t gb = std::max<std::size_t>(1, opts.gallery_block);
  const std::size_t qb = std::max<std::size_t>(1, opts.query_block);
  const std::size_t nq = queries.size();
  const std::size_t ng = gallery.size();
  const std::size_t dim = gallery.dim();
  const std::size_t n_blocks = (nq + qb - 1) / qb;
  std::atomic<std::size_t> next{0};

  auto worker = [&]() {
    std::vector<float> buf(qb * gb);
    while (true) {
      const std::size_t blk = next.fetch_add(1);
      if (blk >= n_blocks) return;
      const std::size_t q0 = blk * qb;
      const std::size_t q1 = std::min(nq, q0 + qb);
      for (std::size_t g0 = 0; g0 < ng; g0 += gb) {
        const std::size_t g1 = std::min(ng, g0 + gb);
        const std::size_t stride = g1 - g0;
        for (std::size_t qi = q0; qi < q1; qi += kTileQ) {
          const int qn = static_cast<int>(std::min<std::size_t>(kTileQ, q1 - qi));
          const float* qp[kTileQ];
          for (int t = 0; t < qn; ++t) qp[t] = queries.row(qi + t).data();
          for (std::size_t gi = g0; gi < g1; gi += kTileG) {
            const int gn = static_cast<int>(std::min<std::size_t>(kTileG, g1 - gi));
            const float* gp[kTileG];
            for (int t = 0; t < gn; ++t) gp[t] = gallery.row(gi + t).data();
            dot_tile_any(qp, qn, gp, gn, dim, buf.data() + (qi - q0) * stride + (gi - g0), stride);
          }
        }
        consume(q0, q1, g0, g1, static_cast<const float*>(buf.data()));
      }
    }
  };

  const unsigned threads = std::max(1u, std::min<unsigned>(opts.threads, static_cast<unsigned>(n_blocks)));
  if (threads <= 1) {
    worker();
    return;
  }
  std::vector<std::jthread> pool;
  pool.reserve(threads);
  for (unsigned t = 0; t < threads; ++t) pool.emplace_back(worker);
}

// Position of each gallery id in ascending id order; breaks score ties.
inline std::vector<std::uint32_t> id_order(const std::vector<std::string>& ids) {
  std::vector<std::uint32_t> idx(ids.size());
  std::iota(idx.begin(), idx.end(), 0u);
  std::sort(idx.begin(), idx.end(), [&ids](auto a, auto b) { return ids[a] < ids[b]; });
  std::vector<std::uint32_t> rank(ids.size());
  for (std::uint32_t r = 0; r < idx.size(); ++r) rank[idx[r]] = r;
  return rank;
}

struct Candidate {
  float score;
  std::uint32_t index;
};

// Higher score first, then ascending gallery id.
struct Better {
  const std::vector<std::uint32_t>* tie;
  bool operator()(const Candidate& a, const Candidate& b) const {
    if (a.score != b.score) return a.score > b.score;
    return (*tie)[a.index] < (*tie)[b.index];
  }
};

// Bounded best-k selection. The heap top is the worst retained candidate.
class TopK {
 public:
  TopK(std::size_t k, Better better) : k_(k), better_(better) { heap_.reserve(k); }

  void push(Candidate c) {
    if (heap_.size() < k_) {
      heap_.push_back(c);
      std::push_heap(heap_.begin(), heap_.end(), better_);
      return;
    }
    const Candidate& worst = heap_.front();
    if (c.score < worst.score || (c.score == worst.score && !better_(c, worst))) return;
    std::pop_heap(heap_.begin(), heap_.end(), better_);
    heap_.back() = c;
    std::push_heap(heap_.begin(), heap_.end(), better_);
  }

  std::vector<Candidate> sorted() && {
    std::sort(heap_.begin(), heap_.end(), better_);
    return std::move(heap_);
  }

 private:
  std::size_t k_;
  Better better_;
  std::vector<Candidate> heap_;
};

inline RankedList to_ranked(const std::string& query_id, const std::vector<Candidate>& cands,
                            const EmbeddingSet& gallery) {
  RankedList r{query_id, {}, {}};
  r.gallery_ids.reserve(cands.size());
  r.scores.reserve(cands.size());
  for (const auto& c : cands) {
    r.gallery_ids.push_back(gallery.ids()[c.index]);
    r.scores.push_back(c.score);
  }
  return r;
}

}  // namespace detail

// Exact top-k by dot product, one list per query in query order.
inline std::vector<RankedList> top_k(const EmbeddingSet& gallery, const EmbeddingSet& queries, std::size_t k,
                                     const SearchOptions& opts = {}) {
  if (k < 1) throw ConfigError("top_k: k must be >= 1");
  if (gallery.dim() != queries.dim()) throw DimMismatch("top_k: gallery and query dimensions differ");
  const auto tie = detail::id_order(gallery.ids());
  const detail::Better better{&tie};
  const std::size_t keep = std::min(k, gallery.size());
  std::vector<detail::TopK> sel;
  sel.reserve(queries.size());
  for (std::size_t i = 0; i < queries.size(); ++i) sel.emplace_back(keep, better);

  detail::scan_scores(gallery, queries, opts,
                      [&](std::size_t q0, std::size_t q1, std::size_t g0, std::size_t g1, const float* s) {
                        const std::size_t stride = g1 - g0;
                        for (std::size_t q = q0; q < q1; ++q) {
                          const float* row = s + (q - q0) * stride;
                          auto& top = sel[q];
                          for (std::size_t g = g0; g < g1; ++g) {
                            top.push({row[g - g0], static_cast<std::uint32_t>(g)});
                          }
                        }
                      });

  std::vector<RankedList> out;
  out.reserve(queries.size());
  for (std::size_t q = 0; q < queries.size(); ++q) {
    out.push_back(detail::to_ranked(queries.ids()[q], std::move(sel[q]).sorted(), gallery));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Metrics.

using RelevanceMap = std::unordered_map<std::string, std::set<std::string>>;

inline bool recall_at_k(const RankedList& ranked, const std::set<std::string>& relevant, std::size_t k) {
  if (k < 1) throw ConfigError("recall_at_k: k must be >= 1");
  const std::size_t n = std::min(k, ranked.gallery_ids.size());
  for (std::size_t i = 0; i < n; ++i) {
    if (relevant.count(ranked.gallery_ids[i])) return true;
  }
  return false;
}

// Mean of precision@rank over the relevant items. Relevant items absent from
// the ranking contribute zero.
inline double average_precision(const RankedList& ranked, const std::set<std::string>& relevant) {
  if (relevant.empty()) throw DataError("average_precision: empty relevant set");
  double sum = 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < ranked.gallery_ids.size(); ++i) {
    if (relevant.count(ranked.gallery_ids[i])) {
      ++hits;
      sum += static_cast<double>(hits) / static_cast<double>(i + 1);
    }
  }
  return sum / static_cast<double>(relevant.size());
}

// Same quantity from the 1-based ranks of the relevant items.
inline double average_precision_from_ranks(std::vector<std::size_t> ranks) {
  if (ranks.empty()) throw DataError("average_precision: empty relevant set");
  std::sort(ranks.begin(), ranks.end());
  double sum = 0.0;
  for (std::size_t i = 0; i < ranks.size(); ++i) sum += static_cast<double>(i + 1) / static_cast<double>(ranks[i]);
  return sum / static_cast<double>(ranks.size());
}

inline const std::set<std::string>& relevant_for(const RelevanceMap& rel, const std::string& query) {
  const auto it = rel.find(query);
  if (it == rel.end() || it->second.empty()) throw UnknownQuery("no relevance entry for query '" + query + "'");
  return it->second;
}

inline double mean_recall_at_k(const std::vector<RankedList>& ranked, const RelevanceMap& rel, std::size_t k) {
  if (ranked.empty()) return 0.0;
  double hits = 0.0;
  for (const auto& r : ranked) hits += recall_at_k(r, relevant_for(rel, r.query_id), k) ? 1.0 : 0.0;
  return hits / static_cast<double>(ranked.size());
}

inline double mean_average_precision(const std::vector<RankedList>& ranked, const RelevanceMap& rel) {
  if (ranked.empty()) return 0.0;
  double sum = 0.0;
  for (const auto& r : ranked) sum += average_precision(r, relevant_for(rel, r.query_id));
  return sum / static_cast<double>(ranked.size());
}

struct Metrics {
  std::vector<std::pair<std::size_t, double>> recall;  // (k, mean R@k)
  double mean_ap = 0.0;
  std::size_t queries = 0;

  double recall_at(std::size_t k) const {
    for (const auto& [kk, v] : recall)
      if (kk == k) return v;
    throw ConfigError("recall@" + std::to_string(k) + " was not evaluated");
  }
};

// R@k for each k and exact mean AP in a single pass over the gallery. Both are
// derived from the exact rank of every relevant item (1 + number of gallery
// items ordered before it), so no full ranking is materialized; the results
// equal recall_at_k / average_precision on a full top_k ranking.
inline Metrics evaluate(const EmbeddingSet& queries, const EmbeddingSet& gallery, const RelevanceMap& rel,
                        const std::vector<std::size_t>& ks, const SearchOptions& opts = {}) {
  if (ks.empty()) throw ConfigError("evaluate: no k values");
  if (gallery.dim() != queries.dim()) throw DimMismatch("evaluate: gallery and query dimensions differ");
  if (*std::min_element(ks.begin(), ks.end()) < 1) throw ConfigError("evaluate: k must be >= 1");

  std::unordered_map<std::string, std::uint32_t> gallery_index;
  for (std::uint32_t i = 0; i < gallery.size(); ++i) gallery_index.emplace(gallery.ids()[i], i);
  const auto tie = detail::id_order(gallery.ids());
  const detail::Better better{&tie};

  // Relevant items per query, best first, with their exact scores.
  std::vector<std::vector<detail::Candidate>> rel_cands(queries.size());
  std::vector<std::vector<std::size_t>> beaten(queries.size());
  for (std::size_t q = 0; q < queries.size(); ++q) {
    for (const auto& gid : relevant_for(rel, queries.ids()[q])) {
      const auto it = gallery_index.find(gid);
      if (it == gallery_index.end()) throw DataError("relevant id '" + gid + "' not in gallery");
      rel_cands[q].push_back({detail::dot(queries.row(q), gallery.row(it->second)), it->second});
    }
    std::sort(rel_cands[q].begin(), rel_cands[q].end(), better);
    beaten[q].assign(rel_cands[q].size() + 1, 0);
  }

  detail::scan_scores(gallery, queries, opts,
                      [&](std::size_t q0, std::size_t q1, std::size_t g0, std::size_t g1, const float* s) {
                        const std::size_t stride = g1 - g0;
                        for (std::size_t q = q0; q < q1; ++q) {
                          const float* row = s + (q - q0) * stride;
                          const auto& rc = rel_cands[q];
                          auto& diff = beaten[q];
                          const float worst_rel = rc.back().score;
                          for (std::size_t g = g0; g < g1; ++g) {
                            const detail::Candidate c{row[g - g0], static_cast<std::uint32_t>(g)};
                            if (c.score < worst_rel) continue;
                            // c is ranked before a suffix of the relevant list.
                            const auto pos = std::upper_bound(rc.begin(), rc.end(), c, better) - rc.begin();
                            ++diff[static_cast<std::size_t>(pos)];
                          }
                        }
                      });

  Metrics m;
  m.queries = queries.size();
  std::vector<double> hits(ks.size(), 0.0);
  double ap_sum = 0.0;
  for (std::size_t q = 0; q < queries.size(); ++q) {
    const auto& rc = rel_cands[q];
    std::vector<std::size_t> ranks(rc.size());
    std::size_t ahead = 0;
    for (std::size_t i = 0; i < rc.size(); ++i) {
      ahead += beaten[q][i];
      ranks[i] = ahead + 1;
    }
    ap_sum += average_precision_from_ranks(ranks);
    // A query hits at k iff its best relevant item has rank <= k.
    for (std::size_t j = 0; j < ks.size(); ++j) hits[j] += ranks[0] <= ks[j] ? 1.0 : 0.0;
  }
  for (std::size_t j = 0; j < ks.size(); ++j) {
    m.recall.emplace_back(ks[j], queries.empty() ? 0.0 : hits[j] / static_cast<double>(queries.size()));
  }
  m.mean_ap = queries.empty() ? 0.0 : ap_sum / static_cast<double>(queries.size());
  return m;
}

inline void write_metrics(std::ostream& os, const Metrics& m) {
  os << "metric,k,value\n";
  for (const auto& [k, v] : m.recall) os << "recall," << k << ',' << csv::format_double(v) << '\n';
  os << "ap,," << csv::format_double(m.mean_ap) << '\n';
}

inline RelevanceMap parse_relevance(const std::vector<std::string>& lines) {
  RelevanceMap rel;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const auto line = csv::trim(lines[i]);
    if (line.empty() || (i == 0 && line == "query_id,gallery_id")) continue;
    const auto f = csv::split(line);
    if (f.size() != 2) throw FormatError("relevance line " + std::to_string(i + 1) + ": expected 2 fields");
    rel[std::string(csv::trim(f[0]))].insert(std::string(csv::trim(f[1])));
  }
  return rel;
}

inline void write_relevance(std::ostream& os, const std::vector<std::pair<std::string, std::string>>& pairs) {
  os << "query_id,gallery_id\n";
  for (const auto& [q, g] : pairs) os << q << ',' << g << '\n';
}

}  // namespace skyalign
