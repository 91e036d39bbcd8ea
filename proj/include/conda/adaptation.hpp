#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "conda/buffer.hpp"
#include "conda/data.hpp"
#include "conda/losses.hpp"
#include "conda/matrix.hpp"
#include "conda/netcore.hpp"
#include "conda/rng.hpp"

namespace conda {

struct VirtualBatch {
  Matrix x_mix;
  std::vector<int> y_a;
  std::vector<int> y_b;
  std::vector<double> lambdas;
};

struct OptimState {
  double eta0 = 1e-3;
  double momentum = 0.9;
  double progress = 0.0;  // p in [0, 1]
  double head_lr_multiplier = 10.0;
};

/// eta = eta0 * (1 + 10 p)^-0.75, strictly decreasing in p.
double lr_schedule(const OptimState& state);

/// Beta(rho, rho) draw; rho = 1 is Uniform(0, 1).
double sample_lambda(double rho, Rng& rng);

/// Mixup over the merged set: alpha side is the given order, beta side a
/// seeded permutation of the same samples, one lambda per pair.
VirtualBatch make_virtual_batch(const Matrix& samples, const std::vector<int>& pseudo,
                                double rho, Rng& rng);

/// m <- momentum*m + grad; value <- value - lr*m (head params use
/// lr * head_multiplier). Throws on non-finite gradients.
void sgd_step(const std::vector<Param*>& params, double lr, double momentum,
              double head_multiplier);

struct ContinualConfig {
  std::size_t continual_batch_size = 25;
  std::size_t epochs_per_batch = 15;
  std::size_t minibatch_size = 32;
  std::size_t buffer_capacity = 0;
  HyperParams hp;
  bool mixup_enabled = true;
  bool reset_momentum_per_batch = false;
  OptimState optim;  // initial optimizer settings; progress resets per batch
};

struct SourceConfig {
  GeneratorConfig generator;
  std::size_t epochs = 50;
  std::size_t minibatch_size = 32;
  double smoothing = 0.1;
  OptimState optim;
};

/// Supervised source training with label-smoothing cross-entropy. The
/// hypothesis is trainable here and frozen afterwards.
Model train_source(const Dataset& source, const SourceConfig& cfg, std::uint64_t seed);

struct AdaptResult {
  std::vector<int> predictions;   // batch predictions after adaptation
  std::vector<double> confidences;
  ObjectiveTerms mean_loss;       // minibatch-mean objective over the last epoch
};

/// One continual step: E epochs over X* = batch U buffer with per-epoch
/// pseudo-label refresh and mixup, minimizing the adaptation objective
/// over the generator only; then predict on the batch, relabel the
/// buffer and run the buffer manager.
AdaptResult adapt_on_batch(Model& model, const Matrix& batch, Buffer& buffer,
                           const ContinualConfig& cfg, Rng& rng, int batch_index);

struct BatchMetrics {
  int batch_index = 0;  // 1-based; 0 marks the final/summary record
  double accuracy = 0.0;
  ObjectiveTerms loss;
};

/// Folds adapt_on_batch over the stream, evaluating full-target accuracy
/// after each batch. Returns per-batch records plus a final record; an
/// empty stream yields the source-model evaluation only.
std::vector<BatchMetrics> run_continual(
    Model& model, Buffer& buffer, const Matrix& target_samples, const BatchStream& stream,
    const ContinualConfig& cfg, Rng& rng,
    const std::function<double(Model&)>& evaluate_full_target,
    std::size_t start_batch = 0,
    const std::function<void(std::size_t)>& on_batch_end = {});

/// Non-continual upper bound: one adaptation pass over the entire target.
AdaptResult adapt_full(Model& model, const Matrix& target_samples, const ContinualConfig& cfg,
                       Rng& rng);

}  // namespace conda
