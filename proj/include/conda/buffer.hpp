#pragma once

#include <vector>

#include "conda/matrix.hpp"
#include "conda/netcore.hpp"
#include "conda/rng.hpp"

namespace conda {

struct BufferEntry {
  std::vector<double> sample;  // raw target sample, not features
  int predicted_label = 0;     // label at insertion time
  double confidence = 0.0;     // max softmax at insertion time
  int inserted_at = 0;         // continual batch index
};

/// Class-balanced replay buffer. capacity / num_classes slots per class;
/// capacity 0 disables the buffer entirely.
class Buffer {
 public:
  Buffer() = default;
  Buffer(std::size_t capacity, std::size_t num_classes);

  std::size_t capacity() const { return capacity_; }
  std::size_t num_classes() const { return num_classes_; }
  std::size_t slots_per_class() const { return slots_per_class_; }
  int state_index() const { return state_index_; }
  bool enabled() const { return slots_per_class_ > 0; }

  std::size_t size() const;
  const std::vector<BufferEntry>& class_entries(std::size_t k) const { return entries_[k]; }

  /// All stored samples as a matrix, class 0 first, insertion order
  /// within a class. Empty (0 x 0) when the buffer is empty.
  Matrix all_samples(std::size_t sample_dim) const;

  // used by the buffer manager and checkpoint code
  void replace_entries(std::vector<std::vector<BufferEntry>> entries, int state_index);
  std::vector<std::vector<BufferEntry>>& mutable_entries() { return entries_; }

 private:
  std::size_t capacity_ = 0;
  std::size_t num_classes_ = 0;
  std::size_t slots_per_class_ = 0;
  int state_index_ = 0;
  std::vector<std::vector<BufferEntry>> entries_;  // one list per class
};

struct RelabelResult {
  std::vector<int> labels;        // aligned with Buffer::all_samples order
  std::vector<double> confidences;
};

/// Predicted (argmax, max-softmax) for every stored sample under the
/// current model, eval mode. Buffer contents are not touched.
RelabelResult relabel_buffer(Model& model, const Buffer& buffer);

/// Buffer manager step: per class, admit incoming samples of that
/// predicted class sorted by confidence descending (ties by batch order),
/// truncated to the class slots; backfill remaining slots with uniform
/// draws (without replacement) from previous-state entries whose relabeled
/// class matches. Replaces the whole buffer state.
void update_buffer(Buffer& buffer, const Matrix& batch, const std::vector<int>& predictions,
                   const std::vector<double>& confidences, const RelabelResult& relabeled,
                   int batch_index, Rng& rng);

/// X* = incoming batch followed by the stored buffer samples. No label
/// information crosses this boundary.
Matrix merged_set(const Buffer& buffer, const Matrix& batch);

}  // namespace conda
