#include "conda/buffer.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

namespace conda {

Buffer::Buffer(std::size_t capacity, std::size_t num_classes)
    : capacity_(capacity), num_classes_(num_classes) {
  if (num_classes == 0) throw std::invalid_argument("Buffer: num_classes = 0");
  if (capacity > 0 && capacity < num_classes)
    throw std::invalid_argument("Buffer: capacity below num_classes gives zero slots per class");
  slots_per_class_ = capacity / num_classes;
  entries_.resize(num_classes);
}

std::size_t Buffer::size() const {
  std::size_t n = 0;
  for (const auto& c : entries_) n += c.size();
  return n;
}

Matrix Buffer::all_samples(std::size_t sample_dim) const {
  const std::size_t n = size();
  if (n == 0) return Matrix();
  Matrix out(n, sample_dim);
  std::size_t r = 0;
  for (const auto& cls : entries_)
    for (const auto& e : cls) {
      if (e.sample.size() != sample_dim)
        throw std::invalid_argument("Buffer: stored sample dimension mismatch");
      out.set_row(r++, e.sample);
    }
  return out;
}

void Buffer::replace_entries(std::vector<std::vector<BufferEntry>> entries, int state_index) {
  if (entries.size() != num_classes_)
    throw std::invalid_argument("Buffer: class count mismatch");
  for (const auto& cls : entries)
    if (cls.size() > slots_per_class_)
      throw std::invalid_argument("Buffer: class list exceeds slots");
  entries_ = std::move(entries);
  state_index_ = state_index;
}

RelabelResult relabel_buffer(Model& model, const Buffer& buffer) {
  RelabelResult out;
  if (buffer.size() == 0) return out;
  const Matrix samples = buffer.all_samples(model.input_dim());
  const Matrix probs = softmax(model.forward(samples, /*train=*/false));
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

void update_buffer(Buffer& buffer, const Matrix& batch, const std::vector<int>& predictions,
                   const std::vector<double>& confidences, const RelabelResult& relabeled,
                   int batch_index, Rng& rng) {
  const std::size_t c = buffer.num_classes();
  const std::size_t slots = buffer.slots_per_class();
  if (predictions.size() != batch.rows() || confidences.size() != batch.rows())
    throw std::invalid_argument("update_buffer: prediction alignment mismatch");
  if (!buffer.enabled()) {
    // capacity 0: nothing stored, state still advances
    buffer.replace_entries(std::vector<std::vector<BufferEntry>>(c), batch_index);
    return;
  }

  // flatten previous entries in the same order relabel_buffer saw them
  std::vector<const BufferEntry*> previous;
  for (std::size_t k = 0; k < c; ++k)
    for (const auto& e : buffer.class_entries(k)) previous.push_back(&e);
  if (relabeled.labels.size() != previous.size())
    throw std::invalid_argument("update_buffer: relabel result is stale");

  std::vector<std::vector<BufferEntry>> next(c);
  for (std::size_t k = 0; k < c; ++k) {
    // incoming samples of predicted class k, by confidence desc, ties by batch order
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < batch.rows(); ++i)
      if (predictions[i] == static_cast<int>(k)) idx.push_back(i);
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
      return confidences[a] > confidences[b];
    });
    if (idx.size() > slots) idx.resize(slots);
    for (std::size_t i : idx)
      next[k].push_back(BufferEntry{batch.row(i), static_cast<int>(k), confidences[i],
                                    batch_index});

    if (next[k].size() < slots) {
      // backfill from previous-state entries relabeled as class k
      std::vector<std::size_t> pool;
      for (std::size_t p = 0; p < previous.size(); ++p)
        if (relabeled.labels[p] == static_cast<int>(k)) pool.push_back(p);
      const std::size_t want = std::min(slots - next[k].size(), pool.size());
      for (std::size_t pick : rng.sample_without_replacement(pool.size(), want)) {
        BufferEntry e = *previous[pool[pick]];
        e.predicted_label = static_cast<int>(k);  // current-model label; confidence kept
        next[k].push_back(std::move(e));
      }
    }
  }
  buffer.replace_entries(std::move(next), batch_index);
}

Matrix merged_set(const Buffer& buffer, const Matrix& batch) {
  if (buffer.size() == 0) return batch;
  const std::size_t dim = batch.empty() ? buffer.class_entries(0).empty()
                                              ? 0
                                              : buffer.class_entries(0)[0].sample.size()
                                        : batch.cols();
  std::size_t sample_dim = dim;
  if (sample_dim == 0) {
    for (std::size_t k = 0; k < buffer.num_classes(); ++k)
      if (!buffer.class_entries(k).empty()) {
        sample_dim = buffer.class_entries(k)[0].sample.size();
        break;
      }
  }
  return vstack(batch, buffer.all_samples(sample_dim));
}

}  // namespace conda
