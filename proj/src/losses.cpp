#include "conda/losses.hpp"

#include <cmath>
#include <stdexcept>

#include "conda/netcore.hpp"

namespace conda {

namespace {

double safe_log(double p) { return std::log(std::max(p, kEpsDiv)); }

void check_labels(const std::vector<int>& labels, std::size_t n, std::size_t c) {
  if (labels.size() != n) throw std::invalid_argument("labels: length mismatch");
  for (int y : labels)
    if (y < 0 || static_cast<std::size_t>(y) >= c)
      throw std::out_of_range("labels: class index out of range");
}

}  // namespace

double label_smoothing_ce(const Matrix& logits, const std::vector<int>& labels,
                          double smoothing, Matrix* dlogits) {
  const std::size_t n = logits.rows();
  const std::size_t c = logits.cols();
  if (n == 0) throw std::invalid_argument("label_smoothing_ce: empty batch");
  check_labels(labels, n, c);

  const Matrix probs = softmax(logits);
  const double off = smoothing / static_cast<double>(c);
  double loss = 0.0;
  if (dlogits) *dlogits = Matrix(n, c);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < c; ++j) {
      const double t = off + (static_cast<std::size_t>(labels[i]) == j ? 1.0 - smoothing : 0.0);
      loss -= t * safe_log(probs(i, j));
      if (dlogits) (*dlogits)(i, j) = (probs(i, j) - t) / static_cast<double>(n);
    }
  }
  return loss / static_cast<double>(n);
}

double entropy_loss(const Matrix& probs) {
  const std::size_t n = probs.rows();
  if (n == 0) throw std::invalid_argument("entropy_loss: empty batch");
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < probs.cols(); ++j) {
      const double p = probs(i, j);
      if (p > 0.0) total -= p * std::log(p);
    }
  return total / static_cast<double>(n);
}

double eqdiv_loss(const std::vector<double>& mean_probs, const UniformPrior& prior) {
  if (mean_probs.size() != prior.num_classes)
    throw std::invalid_argument("eqdiv_loss: dimension mismatch");
  const double q = prior.q();
  double kl = 0.0;
  for (double qhat : mean_probs) kl += q * (std::log(q) - safe_log(qhat));
  return kl;
}

double mixup_ce_loss(const Matrix& probs, const std::vector<int>& y_a,
                     const std::vector<int>& y_b, const std::vector<double>& lambdas) {
  const std::size_t n = probs.rows();
  if (n == 0) throw std::invalid_argument("mixup_ce_loss: empty batch");
  check_labels(y_a, n, probs.cols());
  check_labels(y_b, n, probs.cols());
  if (lambdas.size() != n) throw std::invalid_argument("mixup_ce_loss: lambda length mismatch");

  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double lam = lambdas[i];
    loss -= lam * safe_log(probs(i, y_a[i])) + (1.0 - lam) * safe_log(probs(i, y_b[i]));
  }
  return loss / static_cast<double>(n);
}

ObjectiveTerms total_objective(const Matrix& probs, const std::vector<int>& y_a,
                               const std::vector<int>& y_b,
                               const std::vector<double>& lambdas, const HyperParams& hp) {
  const std::size_t n = probs.rows();
  const std::size_t c = probs.cols();
  std::vector<double> mean(c, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < c; ++j) mean[j] += probs(i, j) / static_cast<double>(n);

  ObjectiveTerms t;
  t.ent = entropy_loss(probs);
  t.eqdiv = eqdiv_loss(mean, UniformPrior{c});
  t.mixup = mixup_ce_loss(probs, y_a, y_b, lambdas);
  t.total = t.ent + hp.gamma1 * t.eqdiv + hp.gamma2 * t.mixup;
  return t;
}

ObjectiveTerms objective_with_grad(const Matrix& logits, const std::vector<int>& y_a,
                                   const std::vector<int>& y_b,
                                   const std::vector<double>& lambdas,
                                   const HyperParams& hp, Matrix& dlogits) {
  const std::size_t n = logits.rows();
  const std::size_t c = logits.cols();
  const Matrix probs = softmax(logits);
  const ObjectiveTerms terms = total_objective(probs, y_a, y_b, lambdas, hp);

  std::vector<double> mean(c, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < c; ++j) mean[j] += probs(i, j) / static_cast<double>(n);

  const double q = 1.0 / static_cast<double>(c);
  const double nn = static_cast<double>(n);
  dlogits = Matrix(n, c);
  for (std::size_t i = 0; i < n; ++i) {
    // entropy: dH/da_j = p_j * (sum_k p_k log p_k - log p_j)
    double plogp = 0.0;
    for (std::size_t k = 0; k < c; ++k) {
      const double p = probs(i, k);
      if (p > 0.0) plogp += p * std::log(p);
    }
    // eqdiv: dKL/da_j = (1/n) * p_j * (sum_k q p_k / qhat_k - q / qhat_j)
    double cross = 0.0;
    for (std::size_t k = 0; k < c; ++k)
      cross += q * probs(i, k) / std::max(mean[k], kEpsDiv);

    const double lam = lambdas[i];
    for (std::size_t j = 0; j < c; ++j) {
      const double p = probs(i, j);
      double g = p * (plogp - (p > 0.0 ? std::log(p) : 0.0)) / nn;  // entropy
      g += hp.gamma1 * p * (cross - q / std::max(mean[j], kEpsDiv)) / nn;
      double dmix = p;
      if (static_cast<std::size_t>(y_a[i]) == j) dmix -= lam;
      if (static_cast<std::size_t>(y_b[i]) == j) dmix -= 1.0 - lam;
      g += hp.gamma2 * dmix / nn;
      dlogits(i, j) = g;
    }
  }
  return terms;
}

}  // namespace conda
