#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "skyalign/skyalign.hpp"

// Slow, direct reference implementations used as test oracles. Nothing here
// calls the library code it is compared against.
namespace oracle {

using Rows = std::vector<std::vector<double>>;

inline Rows to_rows(const skyalign::MatrixXdR& m) {
  Rows r(m.rows(), std::vector<double>(m.cols()));
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) r[i][j] = m(i, j);
  return r;
}

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// -sum_j q_j log softmax(z)_j with q_j = eps/n + (1-eps)[j == t].
inline double smoothed_ce(const std::vector<double>& z, std::size_t t, double eps) {
  const double n = static_cast<double>(z.size());
  double denom = 0.0;
  for (double v : z) denom += std::exp(v);
  double loss = 0.0;
  for (std::size_t j = 0; j < z.size(); ++j) {
    const double q = eps / n + (j == t ? 1.0 - eps : 0.0);
    loss -= q * std::log(std::exp(z[j]) / denom);
  }
  return loss;
}

// Both directions term by term: drone i against all satellites, satellite i
// against all drones. Masked rows contribute no anchor terms.
inline double infonce(const Rows& sat, const Rows& drone, const std::vector<bool>& mask, double tau, double eps) {
  const std::size_t n = sat.size();
  double sum = 0.0;
  std::size_t terms = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (mask[i]) continue;
    std::vector<double> d2s(n), s2d(n);
    for (std::size_t j = 0; j < n; ++j) {
      d2s[j] = dot(drone[i], sat[j]) / tau;
      s2d[j] = dot(sat[i], drone[j]) / tau;
    }
    sum += smoothed_ce(d2s, i, eps) + smoothed_ce(s2d, i, eps);
    terms += 2;
  }
  return sum / static_cast<double>(terms);
}

// Recall@k and AP straight from the definitions on a full ranking.
inline double ap(const std::vector<std::string>& ranking, const std::set<std::string>& relevant) {
  double sum = 0.0;
  int found = 0;
  for (std::size_t r = 0; r < ranking.size(); ++r) {
    if (relevant.count(ranking[r])) {
      ++found;
      sum += static_cast<double>(found) / static_cast<double>(r + 1);
    }
  }
  return sum / static_cast<double>(relevant.size());
}

inline bool recall(const std::vector<std::string>& ranking, const std::set<std::string>& relevant, std::size_t k) {
  for (std::size_t r = 0; r < std::min(k, ranking.size()); ++r)
    if (relevant.count(ranking[r])) return true;
  return false;
}

struct Scored {
  std::string id;
  float score;
};

// Exhaustive scoring with the library's float dot (the score definition), then
// a full sort: descending score, ascending id.
inline std::vector<Scored> full_ranking(const skyalign::EmbeddingSet& gallery, std::span<const float> query) {
  std::vector<Scored> all;
  for (std::size_t g = 0; g < gallery.size(); ++g) {
    all.push_back({gallery.ids()[g], skyalign::detail::dot(query, gallery.row(g))});
  }
  std::sort(all.begin(), all.end(), [](const Scored& a, const Scored& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.id < b.id;
  });
  return all;
}

// Double-precision dot, for checking the float kernel's accuracy.
inline double dot64(std::span<const float> a, std::span<const float> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<double>(a[i]) * b[i];
  return s;
}

inline skyalign::EmbeddingSet random_set(std::mt19937_64& rng, std::size_t n, std::size_t dim,
                                         const std::string& prefix) {
  std::normal_distribution<float> nd;
  std::vector<float> data(n * dim);
  for (auto& v : data) v = nd(rng);
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < n; ++i) ids.push_back(prefix + std::to_string(i));
  return skyalign::EmbeddingSet(std::move(ids), std::move(data), dim);
}

inline skyalign::MatrixXdR random_unit_rows(std::mt19937_64& rng, Eigen::Index n, Eigen::Index e) {
  std::normal_distribution<double> nd;
  skyalign::MatrixXdR m(n, e);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < e; ++j) m(i, j) = nd(rng);
    m.row(i).normalize();
  }
  return m;
}

// Central finite differences of f over every parameter coordinate, visiting
// tensors in the same order as ModelParams::for_each_tensor, then tau.
template <typename F>
std::vector<double> numeric_gradient(skyalign::ModelParams p, F&& f, double h, bool include_tau) {
  std::vector<double> out;
  std::vector<double*> coords;
  auto collect = [&](Eigen::Ref<skyalign::MatrixXdR> m) {
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      for (Eigen::Index j = 0; j < m.cols(); ++j) coords.push_back(&m(i, j));
  };
  auto collect_v = [&](Eigen::VectorXd& v) {
    for (Eigen::Index i = 0; i < v.size(); ++i) coords.push_back(&v(i));
  };
  collect(p.w1);
  collect_v(p.b1);
  collect(p.w2);
  collect_v(p.b2);
  collect(p.head_w);
  collect_v(p.head_b);
  if (include_tau) coords.push_back(&p.temperature);
  for (double* c : coords) {
    const double orig = *c;
    *c = orig + h;
    const double fp = f(p);
    *c = orig - h;
    const double fm = f(p);
    *c = orig;
    out.push_back((fp - fm) / (2.0 * h));
  }
  return out;
}

inline std::vector<double> flatten(const skyalign::Gradients& g, bool include_tau) {
  std::vector<double> out;
  auto add = [&](const auto& m) {
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      for (Eigen::Index j = 0; j < m.cols(); ++j) out.push_back(m(i, j));
  };
  add(g.w1);
  add(g.b1);
  add(g.w2);
  add(g.b2);
  add(g.head_w);
  add(g.head_b);
  if (include_tau) out.push_back(g.temperature);
  return out;
}

// Adam with decoupled decay on one scalar, written out step by step.
struct ScalarAdam {
  double m = 0.0, v = 0.0;
  long long t = 0;
  double step(double theta, double g, double lr, double b1, double b2, double eps, double wd) {
    ++t;
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    const double mh = m / (1 - std::pow(b1, static_cast<double>(t)));
    const double vh = v / (1 - std::pow(b2, static_cast<double>(t)));
    return theta - lr * (mh / (std::sqrt(vh) + eps) + wd * theta);
  }
};

}  // namespace oracle
