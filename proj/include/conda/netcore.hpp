#pragma once

#include <string>
#include <vector>

#include "conda/matrix.hpp"
#include "conda/rng.hpp"

namespace conda {

/// Learnable tensor with its gradient and SGD momentum buffer.
struct Param {
  Matrix value;
  Matrix grad;
  Matrix momentum;
  bool head = false;  // true for layers after the backbone (10x LR)

  Param() = default;
  Param(Matrix v, bool head_flag)
      : value(std::move(v)),
        grad(value.rows(), value.cols()),
        momentum(value.rows(), value.cols()),
        head(head_flag) {}

  void zero_grad() { grad.fill(0.0); }
};

struct LinearLayer {
  Param weight;  // in x out
  Param bias;    // 1 x out

  LinearLayer() = default;
  LinearLayer(std::size_t in, std::size_t out, Rng& rng, bool head);

  std::size_t in_features() const { return weight.value.rows(); }
  std::size_t out_features() const { return weight.value.cols(); }

  Matrix forward(const Matrix& x) const;
  /// Accumulates weight/bias grads and returns dL/dx. `x` must be the
  /// input of the matching forward call.
  Matrix backward(const Matrix& x, const Matrix& dy);
};

/// Per-feature batch normalization over the rows of a minibatch.
struct BatchNormLayer {
  Param gamma;  // 1 x d
  Param beta;   // 1 x d
  Matrix running_mean;  // 1 x d
  Matrix running_var;   // 1 x d
  double eps = 1e-5;
  double stat_momentum = 0.1;

  BatchNormLayer() = default;
  explicit BatchNormLayer(std::size_t d);

  std::size_t dim() const { return gamma.value.cols(); }

  /// Train mode computes batch statistics (n >= 2 required) and updates
  /// running stats; eval mode uses running stats only.
  Matrix forward(const Matrix& x, bool train);
  Matrix backward(const Matrix& dy);

 private:
  // train-forward cache
  Matrix cached_x_;
  Matrix cached_xhat_;
  std::vector<double> cached_mean_;
  std::vector<double> cached_var_;
  bool has_cache_ = false;
};

struct GeneratorConfig {
  std::size_t input_dim = 2;
  std::vector<std::size_t> hidden_widths = {64, 64};
  std::size_t feature_dim = 16;
};

/// g: backbone MLP (linear + ReLU per hidden layer), bottleneck linear to
/// the feature dimension, then batch norm. Output is the post-batch-norm
/// feature used by both the hypothesis and the clustering pipeline.
class FeatureGenerator {
 public:
  FeatureGenerator() = default;
  FeatureGenerator(const GeneratorConfig& cfg, Rng& rng);

  std::size_t input_dim() const { return cfg_.input_dim; }
  std::size_t feature_dim() const { return cfg_.feature_dim; }
  const GeneratorConfig& config() const { return cfg_; }

  Matrix forward(const Matrix& x, bool train);
  /// Propagates dL/dfeatures back through batch norm, bottleneck and the
  /// backbone, filling every Param's grad. Requires a preceding
  /// train-mode forward; the cache is consumed.
  void backward(const Matrix& dfeatures);

  std::vector<Param*> params();
  std::vector<const Param*> params() const;

  std::vector<LinearLayer> backbone;
  LinearLayer bottleneck;
  BatchNormLayer batchnorm;

 private:
  GeneratorConfig cfg_;
  // caches from the last train-mode forward
  std::vector<Matrix> layer_inputs_;   // input to each backbone linear + bottleneck
  std::vector<Matrix> preactivations_; // backbone pre-ReLU outputs
  bool has_cache_ = false;
};

/// h: weight-normalized linear classifier. logits[i][k] =
/// s_k * <v_k, feat_i> / ||v_k||.
class Hypothesis {
 public:
  Hypothesis() = default;
  Hypothesis(std::size_t feature_dim, std::size_t num_classes, Rng& rng);

  std::size_t feature_dim() const { return directions.value.cols(); }
  std::size_t num_classes() const { return directions.value.rows(); }

  Matrix forward(const Matrix& features) const;
  /// Returns dL/dfeatures. Fills direction/scale grads only when
  /// `train_params` is set (source training); during adaptation the
  /// hypothesis stays frozen.
  Matrix backward(const Matrix& features, const Matrix& dlogits, bool train_params);

  Param directions;  // C x d_f, rows v_k
  Param scales;      // C x 1, entries s_k
};

Matrix softmax(const Matrix& logits);

class Model {
 public:
  Model() = default;
  Model(const GeneratorConfig& cfg, std::size_t num_classes, std::uint64_t init_seed);

  std::size_t num_classes() const { return num_classes_; }
  std::size_t input_dim() const { return generator.input_dim(); }
  std::size_t feature_dim() const { return generator.feature_dim(); }

  Matrix forward_features(const Matrix& x, bool train);
  Matrix forward_logits(const Matrix& features) const;
  /// forward_features + forward_logits; caches intermediates in train mode.
  Matrix forward(const Matrix& x, bool train);
  /// Backpropagates dL/dlogits from the last train-mode forward().
  /// Generator grads are always filled; hypothesis grads only when
  /// hypothesis_trainable is set.
  void backward(const Matrix& dlogits);

  void zero_grad();
  std::vector<Param*> params(bool include_hypothesis);
  std::vector<const Param*> params(bool include_hypothesis) const;

  FeatureGenerator generator;
  Hypothesis hypothesis;
  bool hypothesis_trainable = false;

 private:
  std::size_t num_classes_ = 0;
  Matrix cached_features_;
  bool has_cache_ = false;
};

}  // namespace conda
