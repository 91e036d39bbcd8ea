#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "conda/matrix.hpp"
#include "conda/rng.hpp"

namespace conda {

enum class DomainTag { kSource, kTarget };

/// Labeled or unlabeled dataset. Target labels exist for evaluation only
/// and are reachable solely through eval_labels(); the adaptation path
/// works on samples().
class Dataset {
 public:
  Dataset() = default;
  Dataset(Matrix x, std::vector<int> y, std::size_t num_classes, DomainTag tag);

  const Matrix& samples() const { return x_; }
  std::size_t size() const { return x_.rows(); }
  std::size_t num_classes() const { return num_classes_; }
  DomainTag domain() const { return tag_; }
  bool has_labels() const { return !y_.empty(); }

  /// Evaluation-only label access.
  const std::vector<int>& eval_labels() const;

  /// Row subset (used by the batch streamer and source minibatching).
  Dataset subset(const std::vector<std::size_t>& indices) const;

 private:
  Matrix x_;
  std::vector<int> y_;
  std::size_t num_classes_ = 0;
  DomainTag tag_ = DomainTag::kSource;
};

enum class Family { kMoons, kBlobs };

struct DomainPairConfig {
  Family family = Family::kMoons;
  std::size_t num_classes = 2;     // fixed at 2 for moons
  std::size_t n_per_class = 500;
  double noise_sd = 0.1;
  double rotation_deg = 0.0;       // target shift: rotation about the data center
  double translate_x = 0.0;
  double translate_y = 0.0;
  std::uint64_t seed = 0;

  /// Named benchmark configs: "moons-rot30", "blobs-5c".
  static DomainPairConfig preset(const std::string& name);
};

/// Source and target drawn independently from the same base family; the
/// target is then rotated/translated (sudden shift). Target labels are
/// retained for evaluation only.
std::pair<Dataset, Dataset> make_domain_pair(const DomainPairConfig& cfg);

struct BatchStream {
  std::vector<std::vector<std::size_t>> batches;  // index sets into the target
  std::size_t batch_size = 0;
  std::size_t m() const { return batches.size(); }
};

/// One seeded shuffle then contiguous chunks; batches partition the
/// target exactly. The last batch may be smaller.
BatchStream stream_batches(const Dataset& target, std::size_t batch_size, std::uint64_t seed);

/// CSV export: feature columns then a label column (-1 when unlabeled).
void export_csv(const Dataset& ds, const std::string& path);

}  // namespace conda
