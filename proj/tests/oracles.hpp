#pragma once

// Test-only reference implementations, kept independent of the library's
// code paths so they can serve as oracles.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "conda/matrix.hpp"

namespace oracles {

using conda::Matrix;

// Central finite difference of a scalar function at x.
inline double central_diff(const std::function<double(double)>& f, double x,
                           double h = 1e-5) {
  return (f(x + h) - f(x - h)) / (2.0 * h);
}

// Relative error with a floor guarding near-zero gradients.
inline double rel_err(double a, double b, double floor_val = 1e-6) {
  return std::fabs(a - b) / std::max({std::fabs(a), std::fabs(b), floor_val});
}

// --- clustering: brute-force two-round pipeline over precomputed
// features and softmax probabilities ------------------------------------

struct ClusterOracleResult {
  std::vector<int> labels;
};

inline double cosdist(const std::vector<double>& a, const std::vector<double>& b) {
  double dot = 0, na = 0, nb = 0;
  for (std::size_t j = 0; j < a.size(); ++j) {
    dot += a[j] * b[j];
    na += a[j] * a[j];
    nb += b[j] * b[j];
  }
  if (na == 0 || nb == 0) return 2.0;
  return 1.0 - dot / (std::sqrt(na) * std::sqrt(nb));
}

inline ClusterOracleResult cluster_pipeline_oracle(const Matrix& probs,
                                                   const Matrix& features,
                                                   double eps_mass = 1e-8) {
  const std::size_t n = probs.rows(), c = probs.cols(), d = features.cols();

  // round 0: softmax-weighted centroids
  std::vector<std::vector<double>> cent(c, std::vector<double>(d, 0.0));
  std::vector<bool> empty(c, false);
  for (std::size_t k = 0; k < c; ++k) {
    double mass = 0;
    for (std::size_t i = 0; i < n; ++i) mass += probs(i, k);
    if (mass < eps_mass) {
      empty[k] = true;
      continue;
    }
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < d; ++j) cent[k][j] += probs(i, k) * features(i, j) / mass;
  }

  auto assign = [&](const std::vector<std::vector<double>>& cs,
                    const std::vector<bool>& em) {
    std::vector<int> labels(n);
    for (std::size_t i = 0; i < n; ++i) {
      int best = -1;
      double bd = 0;
      for (std::size_t k = 0; k < c; ++k) {
        if (em[k]) continue;
        const double dd = cosdist(features.row(i), cs[k]);
        if (best < 0 || dd < bd) {
          best = static_cast<int>(k);
          bd = dd;
        }
      }
      labels[i] = best;
    }
    return labels;
  };

  const std::vector<int> y0 = assign(cent, empty);

  // round 1: unweighted means of assigned members, empty classes carried
  std::vector<std::vector<double>> cent1(c, std::vector<double>(d, 0.0));
  std::vector<bool> empty1(c, false);
  std::vector<std::size_t> counts(c, 0);
  for (std::size_t i = 0; i < n; ++i) {
    counts[y0[i]]++;
    for (std::size_t j = 0; j < d; ++j) cent1[y0[i]][j] += features(i, j);
  }
  for (std::size_t k = 0; k < c; ++k) {
    if (counts[k] == 0) {
      cent1[k] = cent[k];
      empty1[k] = empty[k];
    } else {
      for (double& v : cent1[k]) v /= static_cast<double>(counts[k]);
    }
  }
  return {assign(cent1, empty1)};
}

// --- buffer manager: reference grouping / sort / backfill ----------------

struct BufferOracleEntry {
  std::vector<double> sample;
  double confidence;
};

// previous[k] holds the previous-state entries *relabeled* as class k.
// Returns the next state's per-class sample lists.
inline std::vector<std::vector<BufferOracleEntry>> buffer_manager_oracle(
    const Matrix& batch, const std::vector<int>& preds, const std::vector<double>& confs,
    const std::vector<std::vector<BufferOracleEntry>>& previous, std::size_t slots,
    const std::function<std::vector<std::size_t>(std::size_t, std::size_t)>& draw) {
  const std::size_t c = previous.size();
  std::vector<std::vector<BufferOracleEntry>> next(c);
  for (std::size_t k = 0; k < c; ++k) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < batch.rows(); ++i)
      if (preds[i] == static_cast<int>(k)) idx.push_back(i);
    std::stable_sort(idx.begin(), idx.end(),
                     [&](std::size_t a, std::size_t b) { return confs[a] > confs[b]; });
    if (idx.size() > slots) idx.resize(slots);
    for (std::size_t i : idx) next[k].push_back({batch.row(i), confs[i]});
    if (next[k].size() < slots && !previous[k].empty()) {
      const std::size_t want = std::min(slots - next[k].size(), previous[k].size());
      for (std::size_t pick : draw(previous[k].size(), want))
        next[k].push_back(previous[k][pick]);
    }
  }
  return next;
}

}  // namespace oracles
