#include "conda/adaptation.hpp"

#include <cmath>
#include <stdexcept>

#include "conda/clustering.hpp"

namespace conda {

double lr_schedule(const OptimState& state) {
  if (state.progress < 0.0 || state.progress > 1.0)
    throw std::invalid_argument("lr_schedule: progress outside [0, 1]");
  return state.eta0 * std::pow(1.0 + 10.0 * state.progress, -0.75);
}

double sample_lambda(double rho, Rng& rng) {
  if (rho <= 0.0) throw std::invalid_argument("sample_lambda: rho must be > 0");
  return rng.beta_symmetric(rho);
}

VirtualBatch make_virtual_batch(const Matrix& samples, const std::vector<int>& pseudo,
                                double rho, Rng& rng) {
  const std::size_t n = samples.rows();
  if (n < 2) throw std::invalid_argument("make_virtual_batch: need at least 2 samples");
  if (pseudo.size() != n)
    throw std::invalid_argument("make_virtual_batch: label count mismatch");

  VirtualBatch vb;
  vb.x_mix = Matrix(n, samples.cols());
  vb.y_a.resize(n);
  vb.y_b.resize(n);
  vb.lambdas.resize(n);
  const auto beta_side = rng.permutation(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t b = beta_side[i];
    const double lam = sample_lambda(rho, rng);
    for (std::size_t j = 0; j < samples.cols(); ++j)
      vb.x_mix(i, j) = lam * samples(i, j) + (1.0 - lam) * samples(b, j);
    vb.y_a[i] = pseudo[i];
    vb.y_b[i] = pseudo[b];
    vb.lambdas[i] = lam;
  }
  return vb;
}

void sgd_step(const std::vector<Param*>& params, double lr, double momentum,
              double head_multiplier) {
  for (Param* p : params) {
    if (!p->grad.all_finite())
      throw std::runtime_error("sgd_step: non-finite gradient encountered");
    const double eff = p->head ? lr * head_multiplier : lr;
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      p->momentum.raw()[i] = momentum * p->momentum.raw()[i] + p->grad.raw()[i];
      p->value.raw()[i] -= eff * p->momentum.raw()[i];
    }
  }
}

namespace {

struct Predictions {
  std::vector<int> labels;
  std::vector<double> confidences;
};

Predictions predict(Model& model, const Matrix& x) {
  const Matrix probs = softmax(model.forward(x, /*train=*/false));
  Predictions out;
  out.labels.resize(probs.rows());
  out.confidences.resize(probs.rows());
  for (std::size_t i = 0; i < probs.rows(); ++i) {
    int arg = 0;
    double best = probs(i, 0);
    for (std::size_t k = 1; k < probs.cols(); ++k)
      if (probs(i, k) > best) {
        best = probs(i, k);
        arg = static_cast<int>(k);
      }
    out.labels[i] = arg;
    out.confidences[i] = best;
  }
  return out;
}

Matrix take_rows(const Matrix& m, const std::vector<std::size_t>& idx, std::size_t lo,
                 std::size_t hi) {
  Matrix out(hi - lo, m.cols());
  for (std::size_t i = lo; i < hi; ++i) out.set_row(i - lo, m.row(idx[i]));
  return out;
}

// Minibatch chunk boundaries over n samples; a trailing chunk of size 1
// is dropped (train-mode batch norm needs at least 2 rows).
std::vector<std::pair<std::size_t, std::size_t>> chunk_bounds(std::size_t n, std::size_t mb) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t lo = 0; lo < n; lo += mb) {
    const std::size_t hi = std::min(lo + mb, n);
    if (hi - lo >= 2) out.emplace_back(lo, hi);
  }
  return out;
}

// One optimization pass of E epochs over the merged set. Shared by the
// continual step and the full-target baseline.
ObjectiveTerms optimize_epochs(Model& model, const Matrix& merged, const ContinualConfig& cfg,
                               Rng& rng) {
  const std::size_t n = merged.rows();
  if (n < 2) throw std::invalid_argument("adaptation: merged set smaller than 2 samples");

  OptimState optim = cfg.optim;
  optim.progress = 0.0;
  const std::size_t steps_per_epoch = chunk_bounds(n, cfg.minibatch_size).size();
  const std::size_t total_steps = cfg.epochs_per_batch * steps_per_epoch;
  std::size_t step = 0;

  ObjectiveTerms last_epoch_mean;
  for (std::size_t epoch = 0; epoch < cfg.epochs_per_batch; ++epoch) {
    const PseudoLabelSet pls = pseudo_labels(model, merged);

    // SGD order for the alpha side of this epoch
    const auto order = rng.permutation(n);
    Matrix shuffled(n, merged.cols());
    std::vector<int> labels(n);
    for (std::size_t i = 0; i < n; ++i) {
      shuffled.set_row(i, merged.row(order[i]));
      labels[i] = pls.labels[order[i]];
    }

    VirtualBatch vb;
    if (cfg.mixup_enabled) {
      vb = make_virtual_batch(shuffled, labels, cfg.hp.rho, rng);
    } else {
      vb.x_mix = shuffled;
      vb.y_a = labels;
      vb.y_b = labels;
      vb.lambdas.assign(n, 1.0);
    }

    ObjectiveTerms epoch_sum;
    std::size_t epoch_steps = 0;
    for (const auto& [lo, hi] : chunk_bounds(n, cfg.minibatch_size)) {
      Matrix x(hi - lo, vb.x_mix.cols());
      std::vector<int> ya(vb.y_a.begin() + lo, vb.y_a.begin() + hi);
      std::vector<int> yb(vb.y_b.begin() + lo, vb.y_b.begin() + hi);
      std::vector<double> lam(vb.lambdas.begin() + lo, vb.lambdas.begin() + hi);
      for (std::size_t i = lo; i < hi; ++i) x.set_row(i - lo, vb.x_mix.row(i));

      const Matrix logits = model.forward(x, /*train=*/true);
      Matrix dlogits;
      const ObjectiveTerms terms =
          objective_with_grad(logits, ya, yb, lam, cfg.hp, dlogits);
      if (!std::isfinite(terms.total))
        throw std::runtime_error("adaptation: non-finite loss");

      model.zero_grad();
      model.backward(dlogits);

      optim.progress =
          total_steps > 1 ? static_cast<double>(step) / static_cast<double>(total_steps - 1)
                          : 0.0;
      sgd_step(model.params(/*include_hypothesis=*/false), lr_schedule(optim), optim.momentum,
               optim.head_lr_multiplier);
      ++step;

      epoch_sum.ent += terms.ent;
      epoch_sum.eqdiv += terms.eqdiv;
      epoch_sum.mixup += terms.mixup;
      epoch_sum.total += terms.total;
      ++epoch_steps;
    }
    if (epoch_steps > 0) {
      last_epoch_mean.ent = epoch_sum.ent / static_cast<double>(epoch_steps);
      last_epoch_mean.eqdiv = epoch_sum.eqdiv / static_cast<double>(epoch_steps);
      last_epoch_mean.mixup = epoch_sum.mixup / static_cast<double>(epoch_steps);
      last_epoch_mean.total = epoch_sum.total / static_cast<double>(epoch_steps);
    }
  }
  return last_epoch_mean;
}

}  // namespace

Model train_source(const Dataset& source, const SourceConfig& cfg, std::uint64_t seed) {
  if (!source.has_labels()) throw std::invalid_argument("train_source: unlabeled source");

  GeneratorConfig gen_cfg = cfg.generator;
  gen_cfg.input_dim = source.samples().cols();
  Model model(gen_cfg, source.num_classes(), seed);
  model.hypothesis_trainable = true;

  Rng rng = Rng::substream(seed, 0x737263ULL);  // "src"
  const std::size_t n = source.size();
  OptimState optim = cfg.optim;

  std::size_t steps_per_epoch = 0;
  for (std::size_t lo = 0; lo < n; lo += cfg.minibatch_size)
    if (std::min(lo + cfg.minibatch_size, n) - lo >= 2) ++steps_per_epoch;
  const std::size_t total_steps = cfg.epochs * steps_per_epoch;
  std::size_t step = 0;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto order = rng.permutation(n);
    for (std::size_t lo = 0; lo < n; lo += cfg.minibatch_size) {
      const std::size_t hi = std::min(lo + cfg.minibatch_size, n);
      if (hi - lo < 2) continue;
      Matrix x = take_rows(source.samples(), order, lo, hi);
      std::vector<int> y(hi - lo);
      for (std::size_t i = lo; i < hi; ++i) y[i - lo] = source.eval_labels()[order[i]];

      const Matrix logits = model.forward(x, /*train=*/true);
      Matrix dlogits;
      const double loss = label_smoothing_ce(logits, y, cfg.smoothing, &dlogits);
      if (!std::isfinite(loss)) throw std::runtime_error("train_source: non-finite loss");

      model.zero_grad();
      model.backward(dlogits);
      optim.progress =
          total_steps > 1 ? static_cast<double>(step) / static_cast<double>(total_steps - 1)
                          : 0.0;
      sgd_step(model.params(/*include_hypothesis=*/true), lr_schedule(optim), optim.momentum,
               optim.head_lr_multiplier);
      ++step;
    }
  }
  model.hypothesis_trainable = false;
  return model;
}

AdaptResult adapt_on_batch(Model& model, const Matrix& batch, Buffer& buffer,
                           const ContinualConfig& cfg, Rng& rng, int batch_index) {
  if (cfg.reset_momentum_per_batch)
    for (Param* p : model.params(false)) p->momentum.fill(0.0);

  const Matrix merged = merged_set(buffer, batch);
  AdaptResult result;
  result.mean_loss = optimize_epochs(model, merged, cfg, rng);

  const Predictions pred = predict(model, batch);
  result.predictions = pred.labels;
  result.confidences = pred.confidences;

  const RelabelResult relabeled = relabel_buffer(model, buffer);
  update_buffer(buffer, batch, pred.labels, pred.confidences, relabeled, batch_index, rng);
  return result;
}

std::vector<BatchMetrics> run_continual(
    Model& model, Buffer& buffer, const Matrix& target_samples, const BatchStream& stream,
    const ContinualConfig& cfg, Rng& rng,
    const std::function<double(Model&)>& evaluate_full_target, std::size_t start_batch,
    const std::function<void(std::size_t)>& on_batch_end) {
  std::vector<BatchMetrics> records;
  for (std::size_t j = start_batch; j < stream.m(); ++j) {
    Matrix batch(stream.batches[j].size(), target_samples.cols());
    for (std::size_t i = 0; i < stream.batches[j].size(); ++i)
      batch.set_row(i, target_samples.row(stream.batches[j][i]));

    const AdaptResult res =
        adapt_on_batch(model, batch, buffer, cfg, rng, static_cast<int>(j + 1));

    BatchMetrics rec;
    rec.batch_index = static_cast<int>(j + 1);
    rec.accuracy = evaluate_full_target(model);
    rec.loss = res.mean_loss;
    records.push_back(rec);
    if (on_batch_end) on_batch_end(j);
  }

  BatchMetrics final_rec;
  final_rec.batch_index = 0;
  final_rec.accuracy = evaluate_full_target(model);
  if (!records.empty()) final_rec.loss = records.back().loss;
  records.push_back(final_rec);
  return records;
}

AdaptResult adapt_full(Model& model, const Matrix& target_samples, const ContinualConfig& cfg,
                       Rng& rng) {
  Buffer disabled(0, model.num_classes());
  return adapt_on_batch(model, target_samples, disabled, cfg, rng, 1);
}

}  // namespace conda
