#pragma once

#include <vector>

#include "conda/matrix.hpp"

namespace conda {

/// Floor inside every log argument; softmax saturates to exact zeros in
/// 64-bit arithmetic and the losses are undefined there.
inline constexpr double kEpsDiv = 1e-12;

struct HyperParams {
  double gamma1 = 1.0;   // weight of the equal-diversity loss
  double gamma2 = 0.5;   // weight of the mixup cross-entropy loss
  double rho = 1.0;      // Beta(rho, rho) mixup parameter
  double smoothing = 0.1;  // source label smoothing
};

struct UniformPrior {
  std::size_t num_classes;
  double q() const { return 1.0 / static_cast<double>(num_classes); }
};

/// Mean label-smoothing cross-entropy. Targets are one-hot mixed with
/// uniform: t_k = (1-smoothing)*1[k=y] + smoothing/C.
/// Optionally fills dL/dlogits.
double label_smoothing_ce(const Matrix& logits, const std::vector<int>& labels,
                          double smoothing, Matrix* dlogits = nullptr);

/// Mean Shannon entropy of the prediction rows, in [0, ln C].
double entropy_loss(const Matrix& probs);

/// KL(q || q_hat) from the uniform prior to the mean prediction.
double eqdiv_loss(const std::vector<double>& mean_probs, const UniformPrior& prior);

/// Mean of -lambda_i log p_i[y_a_i] - (1-lambda_i) log p_i[y_b_i].
double mixup_ce_loss(const Matrix& probs, const std::vector<int>& y_a,
                     const std::vector<int>& y_b, const std::vector<double>& lambdas);

struct ObjectiveTerms {
  double ent = 0.0;
  double eqdiv = 0.0;
  double mixup = 0.0;
  double total = 0.0;
};

/// L = L_ent + gamma1 * L_eqdiv + gamma2 * L_mixup over one virtual
/// minibatch (probs are the softmax outputs on mixed samples).
ObjectiveTerms total_objective(const Matrix& probs, const std::vector<int>& y_a,
                               const std::vector<int>& y_b,
                               const std::vector<double>& lambdas, const HyperParams& hp);

/// Same objective evaluated from logits, with the analytic dL/dlogits
/// needed by the adaptation step. Values agree with total_objective on
/// softmax(logits).
ObjectiveTerms objective_with_grad(const Matrix& logits, const std::vector<int>& y_a,
                                   const std::vector<int>& y_b,
                                   const std::vector<double>& lambdas,
                                   const HyperParams& hp, Matrix& dlogits);

}  // namespace conda
