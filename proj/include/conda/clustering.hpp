#pragma once

#include <vector>

#include "conda/matrix.hpp"
#include "conda/netcore.hpp"

namespace conda {

/// Minimum softmax mass for a class to receive an initial centroid.
inline constexpr double kEpsClusterMass = 1e-8;

struct Centroids {
  Matrix c;                      // C x d_f
  std::vector<bool> empty;       // per-class flag: no mass / no members
  int round = 0;                 // 0 = softmax-weighted, 1 = refined
};

struct PseudoLabelSet {
  std::vector<int> labels;
  int round = 0;
};

/// Softmax-weighted class centroids: c_k = sum_x p_k(x) g(x) / sum_x p_k(x).
/// Classes with total mass below kEpsClusterMass are flagged empty.
Centroids initial_centroids(const Matrix& probs, const Matrix& features);

/// Nearest-centroid assignment under cosine distance
/// d(a, b) = 1 - <a,b>/(||a|| ||b||). Ties go to the lowest class index;
/// zero-norm rows get maximal distance (2.0); empty centroids are skipped.
PseudoLabelSet assign_labels(const Matrix& features, const Centroids& centroids);

/// Unweighted per-class feature means. A class with no assigned samples
/// carries its previous centroid (and empty flag) forward.
Centroids refine_centroids(const Matrix& features, const PseudoLabelSet& labels,
                           const Centroids& previous);

/// Full pipeline on raw samples: eval-mode features and softmax, initial
/// centroids, assignment, one refinement round, final assignment.
PseudoLabelSet pseudo_labels(Model& model, const Matrix& samples);

}  // namespace conda
