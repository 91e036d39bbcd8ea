#include "conda/clustering.hpp"

#include <cmath>
#include <stdexcept>

namespace conda {

namespace {

double cosine_distance(const Matrix& a, std::size_t ai, const Matrix& b, std::size_t bi) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t j = 0; j < a.cols(); ++j) {
    dot += a(ai, j) * b(bi, j);
    na += a(ai, j) * a(ai, j);
    nb += b(bi, j) * b(bi, j);
  }
  if (na == 0.0 || nb == 0.0) return 2.0;  // maximal cosine distance
  return 1.0 - dot / (std::sqrt(na) * std::sqrt(nb));
}

}  // namespace

Centroids initial_centroids(const Matrix& probs, const Matrix& features) {
  const std::size_t n = probs.rows();
  const std::size_t c = probs.cols();
  const std::size_t d = features.cols();
  if (n == 0) throw std::invalid_argument("initial_centroids: empty input");
  if (features.rows() != n) throw std::invalid_argument("initial_centroids: row mismatch");

  Centroids out;
  out.c = Matrix(c, d);
  out.empty.assign(c, false);
  out.round = 0;
  for (std::size_t k = 0; k < c; ++k) {
    double mass = 0.0;
    for (std::size_t i = 0; i < n; ++i) mass += probs(i, k);
    if (mass < kEpsClusterMass) {
      out.empty[k] = true;
      continue;
    }
    for (std::size_t i = 0; i < n; ++i) {
      const double w = probs(i, k) / mass;
      for (std::size_t j = 0; j < d; ++j) out.c(k, j) += w * features(i, j);
    }
  }
  return out;
}

PseudoLabelSet assign_labels(const Matrix& features, const Centroids& centroids) {
  const std::size_t n = features.rows();
  const std::size_t c = centroids.c.rows();
  bool any = false;
  for (std::size_t k = 0; k < c; ++k) any = any || !centroids.empty[k];
  if (!any) throw std::runtime_error("assign_labels: all centroids empty");

  PseudoLabelSet out;
  out.labels.resize(n);
  out.round = centroids.round;
  for (std::size_t i = 0; i < n; ++i) {
    int best = -1;
    double best_d = 0.0;
    for (std::size_t k = 0; k < c; ++k) {
      if (centroids.empty[k]) continue;
      const double dist = cosine_distance(features, i, centroids.c, k);
      if (best < 0 || dist < best_d) {  // strict '<' breaks ties toward low k
        best = static_cast<int>(k);
        best_d = dist;
      }
    }
    out.labels[i] = best;
  }
  return out;
}

Centroids refine_centroids(const Matrix& features, const PseudoLabelSet& labels,
                           const Centroids& previous) {
  const std::size_t n = features.rows();
  const std::size_t c = previous.c.rows();
  if (labels.labels.size() != n)
    throw std::invalid_argument("refine_centroids: label length mismatch");

  Centroids out;
  out.c = Matrix(c, features.cols());
  out.empty.assign(c, false);
  out.round = 1;
  std::vector<std::size_t> counts(c, 0);
  for (std::size_t i = 0; i < n; ++i) {
    const int k = labels.labels[i];
    if (k < 0 || static_cast<std::size_t>(k) >= c)
      throw std::out_of_range("refine_centroids: label out of range");
    counts[k]++;
    for (std::size_t j = 0; j < features.cols(); ++j) out.c(k, j) += features(i, j);
  }
  for (std::size_t k = 0; k < c; ++k) {
    if (counts[k] == 0) {
      // no members this round: keep the round-0 centroid
      for (std::size_t j = 0; j < features.cols(); ++j) out.c(k, j) = previous.c(k, j);
      out.empty[k] = previous.empty[k];
      continue;
    }
    for (std::size_t j = 0; j < features.cols(); ++j)
      out.c(k, j) /= static_cast<double>(counts[k]);
  }
  return out;
}

PseudoLabelSet pseudo_labels(Model& model, const Matrix& samples) {
  if (samples.rows() == 0) throw std::invalid_argument("pseudo_labels: empty input");
  const Matrix features = model.forward_features(samples, /*train=*/false);
  const Matrix probs = softmax(model.forward_logits(features));
  const Centroids c0 = initial_centroids(probs, features);
  const PseudoLabelSet y0 = assign_labels(features, c0);
  const Centroids c1 = refine_centroids(features, y0, c0);
  return assign_labels(features, c1);
}

}  // namespace conda
