#pragma once

// Reference computations written independently of the library, used as
// ground truth by the unit tests and the acceptance binary.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <set>
#include <span>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include <boost/math/distributions/students_t.hpp>

#include "atl/activation.hpp"
#include "atl/relevance.hpp"
#include "atl/selection.hpp"

namespace oracle {

/// Two-sided Welch p-value from Boost's Student t distribution, with sums in
/// long double. Only valid for samples with nonzero variance.
inline double welch_p(std::span<const double> a, std::span<const double> b) {
  auto moments = [](std::span<const double> x) {
    long double mean = 0;
    for (double v : x) mean += v;
    mean /= x.size();
    long double ss = 0;
    for (double v : x) ss += (v - mean) * (v - mean);
    return std::pair{mean, ss / (x.size() - 1)};
  };
  const auto [ma, va] = moments(a);
  const auto [mb, vb] = moments(b);
  const long double sa = va / a.size();
  const long double sb = vb / b.size();
  const long double t = (ma - mb) / std::sqrt(sa + sb);
  const long double df = (sa + sb) * (sa + sb) / (sa * sa / (a.size() - 1) + sb * sb / (b.size() - 1));
  boost::math::students_t dist(static_cast<double>(df));
  return 2.0 * boost::math::cdf(boost::math::complement(dist, std::fabs(static_cast<double>(t))));
}

/// Class centroid of normalized vectors, accumulated in long double.
inline std::vector<long double> centroid(const std::vector<std::vector<float>>& lavs) {
  std::vector<long double> c(lavs.front().size(), 0.0L);
  for (const auto& x : lavs) {
    long double norm = 0;
    for (float v : x) norm += static_cast<long double>(v) * v;
    norm = std::sqrt(norm);
    if (norm == 0) continue;
    for (std::size_t i = 0; i < x.size(); ++i) c[i] += x[i] / norm;
  }
  for (auto& v : c) v /= lavs.size();
  return c;
}

struct Distances {
  double min = 0, mean = 0, max = 0;
};

/// Exhaustive enumeration of all centroid pairs.
inline Distances pairwise(const std::vector<std::vector<long double>>& centroids) {
  std::vector<long double> d;
  for (std::size_t i = 0; i < centroids.size(); ++i) {
    for (std::size_t j = i + 1; j < centroids.size(); ++j) {
      long double s = 0;
      for (std::size_t c = 0; c < centroids[i].size(); ++c) {
        const long double diff = centroids[i][c] - centroids[j][c];
        s += diff * diff;
      }
      d.push_back(std::sqrt(s));
    }
  }
  long double sum = 0;
  for (auto v : d) sum += v;
  return {static_cast<double>(*std::min_element(d.begin(), d.end())), static_cast<double>(sum / d.size()),
          static_cast<double>(*std::max_element(d.begin(), d.end()))};
}

/// Textbook Adam (bias-corrected moments) on f(x) = 0.5 * sum a_i (x_i - c_i)^2.
inline std::vector<std::vector<double>> adam_quadratic(std::vector<double> x, const std::vector<double>& a,
                                                       const std::vector<double>& c, double lr, int steps) {
  const long double b1 = 0.9L, b2 = 0.999L, eps = 1e-8L;
  std::vector<long double> m(x.size(), 0), v(x.size(), 0);
  std::vector<long double> xl(x.begin(), x.end());
  std::vector<std::vector<double>> out;
  for (int t = 1; t <= steps; ++t) {
    for (std::size_t i = 0; i < x.size(); ++i) {
      const long double g = a[i] * (xl[i] - c[i]);
      m[i] = b1 * m[i] + (1 - b1) * g;
      v[i] = b2 * v[i] + (1 - b2) * g * g;
      const long double mhat = m[i] / (1 - std::pow(b1, t));
      const long double vhat = v[i] / (1 - std::pow(b2, t));
      xl[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
    out.emplace_back(xl.begin(), xl.end());
  }
  return out;
}

/// Mean softmax cross-entropy written with plain loops. Layout mirrors the
/// library's flat parameter vector: linear W (k×d col-major), b; or mlp
/// W1 (h×d col-major), b1, W2 (k×h col-major), b2.
inline double cross_entropy(const std::vector<double>& p, const std::vector<std::vector<double>>& x,
                            const std::vector<int>& y, int k, int hidden) {
  const std::size_t d = x.front().size();
  long double total = 0;
  for (std::size_t n = 0; n < x.size(); ++n) {
    std::vector<long double> in(x[n].begin(), x[n].end());
    std::size_t off = 0;
    std::size_t width = d;
    if (hidden > 0) {
      std::vector<long double> h(hidden, 0);
      for (int j = 0; j < hidden; ++j) {
        long double s = p[hidden * d + j];
        for (std::size_t i = 0; i < d; ++i) s += p[i * hidden + j] * in[i];
        h[j] = std::max(0.0L, s);
      }
      off = hidden * d + hidden;
      in = h;
      width = hidden;
    }
    std::vector<long double> z(k);
    for (int c = 0; c < k; ++c) {
      long double s = p[off + k * width + c];
      for (std::size_t i = 0; i < width; ++i) s += p[off + i * k + c] * in[i];
      z[c] = s;
    }
    const long double zmax = *std::max_element(z.begin(), z.end());
    long double lse = 0;
    for (auto v : z) lse += std::exp(v - zmax);
    total += std::log(lse) + zmax - z[y[n]];
  }
  return static_cast<double>(total / x.size());
}

/// Central finite differences of `cross_entropy`.
inline std::vector<double> numeric_gradient(std::vector<double> p, const std::vector<std::vector<double>>& x,
                                            const std::vector<int>& y, int k, int hidden, double step = 1e-5) {
  std::vector<double> g(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double keep = p[i];
    p[i] = keep + step;
    const double up = cross_entropy(p, x, y, k, hidden);
    p[i] = keep - step;
    const double down = cross_entropy(p, x, y, k, hidden);
    p[i] = keep;
    g[i] = (up - down) / (2 * step);
  }
  return g;
}

/// Brute-force one-vs-rest minimum p-value for every channel of `layer`,
/// plus the class attaining it (lowest index on ties).
struct ChannelP {
  double p_min = 1.0;
  int argmin = 0;
};

inline std::vector<ChannelP> one_vs_rest(const atl::ActivationCache& cache, std::span<const atl::ClassGroup> groups,
                                         int layer) {
  const auto channels = cache.layers[layer].channels;
  std::vector<ChannelP> out(channels);
  for (int ch = 0; ch < channels; ++ch) {
    for (std::size_t c = 0; c < groups.size(); ++c) {
      std::vector<double> in, rest;
      for (std::size_t o = 0; o < groups.size(); ++o) {
        for (const auto* rec : groups[o].examples) (o == c ? in : rest).push_back(rec->lavs[layer][ch]);
      }
      const double p = welch_p(in, rest);
      if (p < out[ch].p_min) out[ch] = {p, static_cast<int>(c)};
    }
  }
  return out;
}

/// Reference N_feature for a score set: threshold, argmin attribution, min count.
inline int expected_n_feature(std::span<const atl::MapScore> scores, const atl::LayerRanking& ranking, double p_max,
                              int k) {
  std::map<int, double> r_of;
  for (const auto& l : ranking.ordered) r_of[l.layer.index] = l.r_min;
  std::set<int> selected;
  for (const auto& l : ranking.selected) selected.insert(l.index);
  std::vector<int> counts(k, 0);
  for (const auto& s : scores) {
    if (!selected.count(s.layer.index)) continue;
    const double threshold = p_max * r_of[s.layer.index] / ranking.r_max_global;
    if (s.p_min < threshold) {
      const int arg = static_cast<int>(std::min_element(s.p_per_class.begin(), s.p_per_class.end()) -
                                       s.p_per_class.begin());
      ++counts[arg];
    }
  }
  return *std::min_element(counts.begin(), counts.end());
}

}  // namespace oracle
