#include "conda/netcore.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace conda {

LinearLayer::LinearLayer(std::size_t in, std::size_t out, Rng& rng, bool head) {
  // Kaiming-style init scaled for ReLU backbones.
  Matrix w(in, out);
  const double sd = std::sqrt(2.0 / static_cast<double>(in));
  for (std::size_t i = 0; i < w.size(); ++i) w.raw()[i] = sd * rng.normal();
  weight = Param(std::move(w), head);
  bias = Param(Matrix(1, out), head);
}

Matrix LinearLayer::forward(const Matrix& x) const {
  if (x.cols() != in_features())
    throw std::invalid_argument("LinearLayer::forward: input width mismatch");
  Matrix y = matmul(x, weight.value);
  for (std::size_t i = 0; i < y.rows(); ++i)
    for (std::size_t j = 0; j < y.cols(); ++j) y(i, j) += bias.value(0, j);
  return y;
}

Matrix LinearLayer::backward(const Matrix& x, const Matrix& dy) {
  Matrix dw = matmul(transpose(x), dy);
  for (std::size_t i = 0; i < dw.size(); ++i) weight.grad.raw()[i] += dw.raw()[i];
  for (std::size_t i = 0; i < dy.rows(); ++i)
    for (std::size_t j = 0; j < dy.cols(); ++j) bias.grad(0, j) += dy(i, j);
  return matmul(dy, transpose(weight.value));
}

BatchNormLayer::BatchNormLayer(std::size_t d) {
  gamma = Param(Matrix(1, d, 1.0), true);
  beta = Param(Matrix(1, d, 0.0), true);
  running_mean = Matrix(1, d, 0.0);
  running_var = Matrix(1, d, 1.0);
}

Matrix BatchNormLayer::forward(const Matrix& x, bool train) {
  const std::size_t n = x.rows();
  const std::size_t d = dim();
  if (x.cols() != d) throw std::invalid_argument("BatchNormLayer: width mismatch");
  if (n == 0) throw std::invalid_argument("BatchNormLayer: empty input");

  Matrix out(n, d);
  if (!train) {
    has_cache_ = false;
    for (std::size_t j = 0; j < d; ++j) {
      const double inv = 1.0 / std::sqrt(running_var(0, j) + eps);
      for (std::size_t i = 0; i < n; ++i)
        out(i, j) = gamma.value(0, j) * (x(i, j) - running_mean(0, j)) * inv + beta.value(0, j);
    }
    return out;
  }

  if (n < 2)
    throw std::invalid_argument(
        "BatchNormLayer: train-mode batch of size 1 has degenerate variance");

  cached_mean_.assign(d, 0.0);
  cached_var_.assign(d, 0.0);
  for (std::size_t j = 0; j < d; ++j) {
    double m = 0.0;
    for (std::size_t i = 0; i < n; ++i) m += x(i, j);
    m /= static_cast<double>(n);
    double v = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double c = x(i, j) - m;
      v += c * c;
    }
    v /= static_cast<double>(n);  // biased batch variance
    cached_mean_[j] = m;
    cached_var_[j] = v;
    running_mean(0, j) = (1.0 - stat_momentum) * running_mean(0, j) + stat_momentum * m;
    running_var(0, j) = (1.0 - stat_momentum) * running_var(0, j) + stat_momentum * v;
  }

  cached_xhat_ = Matrix(n, d);
  for (std::size_t j = 0; j < d; ++j) {
    const double inv = 1.0 / std::sqrt(cached_var_[j] + eps);
    for (std::size_t i = 0; i < n; ++i) {
      cached_xhat_(i, j) = (x(i, j) - cached_mean_[j]) * inv;
      out(i, j) = gamma.value(0, j) * cached_xhat_(i, j) + beta.value(0, j);
    }
  }
  cached_x_ = x;
  has_cache_ = true;
  return out;
}

Matrix BatchNormLayer::backward(const Matrix& dy) {
  if (!has_cache_)
    throw std::runtime_error("BatchNormLayer::backward without a train-mode forward");
  const std::size_t n = dy.rows();
  const std::size_t d = dim();
  if (n != cached_x_.rows() || dy.cols() != d)
    throw std::invalid_argument("BatchNormLayer::backward: shape mismatch");

  Matrix dx(n, d);
  const double nn = static_cast<double>(n);
  for (std::size_t j = 0; j < d; ++j) {
    const double inv = 1.0 / std::sqrt(cached_var_[j] + eps);
    double sum_dy = 0.0, sum_dy_xhat = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      sum_dy += dy(i, j);
      sum_dy_xhat += dy(i, j) * cached_xhat_(i, j);
    }
    gamma.grad(0, j) += sum_dy_xhat;
    beta.grad(0, j) += sum_dy;
    const double g = gamma.value(0, j);
    for (std::size_t i = 0; i < n; ++i) {
      dx(i, j) = g * inv / nn *
                 (nn * dy(i, j) - sum_dy - cached_xhat_(i, j) * sum_dy_xhat);
    }
  }
  has_cache_ = false;
  return dx;
}

FeatureGenerator::FeatureGenerator(const GeneratorConfig& cfg, Rng& rng) : cfg_(cfg) {
  std::size_t in = cfg.input_dim;
  for (std::size_t w : cfg.hidden_widths) {
    backbone.emplace_back(in, w, rng, /*head=*/false);
    in = w;
  }
  bottleneck = LinearLayer(in, cfg.feature_dim, rng, /*head=*/true);
  batchnorm = BatchNormLayer(cfg.feature_dim);
}

Matrix FeatureGenerator::forward(const Matrix& x, bool train) {
  if (x.rows() == 0) throw std::invalid_argument("FeatureGenerator: empty input");
  if (x.cols() != cfg_.input_dim)
    throw std::invalid_argument("FeatureGenerator: input width mismatch");
  if (!x.all_finite()) throw std::invalid_argument("FeatureGenerator: non-finite input");

  layer_inputs_.clear();
  preactivations_.clear();

  Matrix h = x;
  for (auto& layer : backbone) {
    if (train) layer_inputs_.push_back(h);
    Matrix z = layer.forward(h);
    if (train) preactivations_.push_back(z);
    for (double& v : z.raw()) v = std::max(v, 0.0);  // ReLU
    h = std::move(z);
  }
  if (train) layer_inputs_.push_back(h);
  Matrix pre_bn = bottleneck.forward(h);
  Matrix out = batchnorm.forward(pre_bn, train);
  has_cache_ = train;
  return out;
}

void FeatureGenerator::backward(const Matrix& dfeatures) {
  if (!has_cache_)
    throw std::runtime_error("FeatureGenerator::backward without a train-mode forward");
  Matrix d = batchnorm.backward(dfeatures);
  d = bottleneck.backward(layer_inputs_.back(), d);
  for (std::size_t li = backbone.size(); li > 0; --li) {
    const std::size_t i = li - 1;
    // ReLU mask from the cached pre-activation
    for (std::size_t r = 0; r < d.rows(); ++r)
      for (std::size_t c = 0; c < d.cols(); ++c)
        if (preactivations_[i](r, c) <= 0.0) d(r, c) = 0.0;
    d = backbone[i].backward(layer_inputs_[i], d);
  }
  has_cache_ = false;
}

std::vector<Param*> FeatureGenerator::params() {
  std::vector<Param*> out;
  for (auto& l : backbone) {
    out.push_back(&l.weight);
    out.push_back(&l.bias);
  }
  out.push_back(&bottleneck.weight);
  out.push_back(&bottleneck.bias);
  out.push_back(&batchnorm.gamma);
  out.push_back(&batchnorm.beta);
  return out;
}

std::vector<const Param*> FeatureGenerator::params() const {
  auto mut = const_cast<FeatureGenerator*>(this)->params();
  return std::vector<const Param*>(mut.begin(), mut.end());
}

Hypothesis::Hypothesis(std::size_t feature_dim, std::size_t num_classes, Rng& rng) {
  Matrix v(num_classes, feature_dim);
  const double sd = 1.0 / std::sqrt(static_cast<double>(feature_dim));
  for (std::size_t i = 0; i < v.size(); ++i) v.raw()[i] = sd * rng.normal();
  directions = Param(std::move(v), true);
  scales = Param(Matrix(num_classes, 1, 1.0), true);
}

Matrix Hypothesis::forward(const Matrix& features) const {
  const std::size_t n = features.rows();
  const std::size_t d = feature_dim();
  const std::size_t c = num_classes();
  if (features.cols() != d)
    throw std::invalid_argument("Hypothesis::forward: feature width mismatch");

  Matrix logits(n, c);
  for (std::size_t k = 0; k < c; ++k) {
    double norm2 = 0.0;
    for (std::size_t j = 0; j < d; ++j) norm2 += directions.value(k, j) * directions.value(k, j);
    const double norm = std::sqrt(norm2);
    if (norm == 0.0)
      throw std::runtime_error("Hypothesis: zero-norm direction vector");
    const double scale = scales.value(k, 0) / norm;
    for (std::size_t i = 0; i < n; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < d; ++j) dot += directions.value(k, j) * features(i, j);
      logits(i, k) = scale * dot;
    }
  }
  return logits;
}

Matrix Hypothesis::backward(const Matrix& features, const Matrix& dlogits, bool train_params) {
  const std::size_t n = features.rows();
  const std::size_t d = feature_dim();
  const std::size_t c = num_classes();

  Matrix dfeat(n, d);
  for (std::size_t k = 0; k < c; ++k) {
    double norm2 = 0.0;
    for (std::size_t j = 0; j < d; ++j) norm2 += directions.value(k, j) * directions.value(k, j);
    const double norm = std::sqrt(norm2);
    const double s = scales.value(k, 0);

    for (std::size_t i = 0; i < n; ++i) {
      const double g = dlogits(i, k);
      if (g == 0.0) continue;
      double dot = 0.0;
      for (std::size_t j = 0; j < d; ++j) dot += directions.value(k, j) * features(i, j);
      for (std::size_t j = 0; j < d; ++j)
        dfeat(i, j) += g * s * directions.value(k, j) / norm;
      if (train_params) {
        scales.grad(k, 0) += g * dot / norm;
        // d logits / d v = s * (f/||v|| - <v,f> v / ||v||^3)
        for (std::size_t j = 0; j < d; ++j)
          directions.grad(k, j) +=
              g * s * (features(i, j) / norm - dot * directions.value(k, j) / (norm2 * norm));
      }
    }
  }
  return dfeat;
}

Matrix softmax(const Matrix& logits) {
  Matrix out(logits.rows(), logits.cols());
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    double mx = logits(i, 0);
    for (std::size_t j = 1; j < logits.cols(); ++j) mx = std::max(mx, logits(i, j));
    double z = 0.0;
    for (std::size_t j = 0; j < logits.cols(); ++j) {
      out(i, j) = std::exp(logits(i, j) - mx);
      z += out(i, j);
    }
    for (std::size_t j = 0; j < logits.cols(); ++j) out(i, j) /= z;
  }
  return out;
}

Model::Model(const GeneratorConfig& cfg, std::size_t num_classes, std::uint64_t init_seed)
    : num_classes_(num_classes) {
  Rng rng = Rng::substream(init_seed, 0x6d6f64656cULL);  // "model"
  generator = FeatureGenerator(cfg, rng);
  hypothesis = Hypothesis(cfg.feature_dim, num_classes, rng);
}

Matrix Model::forward_features(const Matrix& x, bool train) {
  return generator.forward(x, train);
}

Matrix Model::forward_logits(const Matrix& features) const {
  return hypothesis.forward(features);
}

Matrix Model::forward(const Matrix& x, bool train) {
  Matrix feat = generator.forward(x, train);
  if (train) {
    cached_features_ = feat;
    has_cache_ = true;
  } else {
    has_cache_ = false;
  }
  return hypothesis.forward(feat);
}

void Model::backward(const Matrix& dlogits) {
  if (!has_cache_)
    throw std::runtime_error("Model::backward without a train-mode forward");
  Matrix dfeat = hypothesis.backward(cached_features_, dlogits, hypothesis_trainable);
  generator.backward(dfeat);
  has_cache_ = false;
}

void Model::zero_grad() {
  for (Param* p : params(true)) p->zero_grad();
}

std::vector<Param*> Model::params(bool include_hypothesis) {
  std::vector<Param*> out = generator.params();
  if (include_hypothesis) {
    out.push_back(&hypothesis.directions);
    out.push_back(&hypothesis.scales);
  }
  return out;
}

std::vector<const Param*> Model::params(bool include_hypothesis) const {
  auto mut = const_cast<Model*>(this)->params(include_hypothesis);
  return std::vector<const Param*>(mut.begin(), mut.end());
}

}  // namespace conda
