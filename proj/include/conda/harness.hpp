#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "conda/adaptation.hpp"
#include "conda/buffer.hpp"
#include "conda/data.hpp"
#include "conda/netcore.hpp"

namespace conda {

/// Fraction of eval-mode argmax predictions matching the labels.
double evaluate(Model& model, const Dataset& dataset);

enum class Method { kFullTarget, kContinualNoBuffer, kConda };

std::string method_name(Method m);
Method parse_method(const std::string& name);

struct ExperimentConfig {
  DomainPairConfig dataset;
  Method method = Method::kConda;
  GeneratorConfig model;
  SourceConfig source;
  ContinualConfig adaptation;
  std::size_t slots_per_class = 4;
  std::vector<std::uint64_t> seeds = {0, 1, 2, 3, 4};
  std::string out_dir = "out";

  /// Parses the JSON config text; unknown keys anywhere are rejected.
  static ExperimentConfig from_json_text(const std::string& text);
  static ExperimentConfig from_file(const std::string& path);
  /// Applies a `--set section.key=value` override onto the JSON form.
  static std::string apply_override(const std::string& json_text, const std::string& kv);
};

struct MetricsRecord {
  int batch_index = 0;  // 1-based; 0 is the final record
  double accuracy = 0.0;
  ObjectiveTerms loss;
  double wall_clock_seconds = 0.0;  // per-seed total; reported separately
  std::uint64_t seed = 0;
};

struct SeedResult {
  std::uint64_t seed = 0;
  std::vector<MetricsRecord> records;
  double final_accuracy = 0.0;
  double wall_clock_seconds = 0.0;
};

struct ExperimentResult {
  std::vector<SeedResult> per_seed;
  double mean_final_accuracy = 0.0;
  double std_final_accuracy = 0.0;
};

/// Runs the configured variant for every seed, writing per-seed metrics
/// CSVs, an aggregate summary and a (non-deterministic) timing sidecar
/// under out_dir. Pass an empty out_dir to skip file output.
ExperimentResult run_experiment(const ExperimentConfig& cfg);

struct GridRow {
  std::string variant;
  std::size_t cell = 0;  // batch size or slots per class
  std::uint64_t seed = 0;
  double final_accuracy = 0.0;
};

/// Continual-no-buffer and conda at each batch size, long-format rows.
std::vector<GridRow> grid_batchsize(const ExperimentConfig& tmpl,
                                    const std::vector<std::size_t>& batch_sizes);

/// Conda at each slots-per-class value (0 disables the buffer).
std::vector<GridRow> grid_buffersize(const ExperimentConfig& tmpl,
                                     const std::vector<std::size_t>& slots_list);

void write_grid_csv(const std::vector<GridRow>& rows, const std::string& cell_name,
                    const std::string& path);

struct Checkpoint {
  GeneratorConfig generator;
  std::size_t num_classes = 0;
  Model model;
  Buffer buffer;
  std::string rng_state;
  int batch_index = 0;
};

/// Binary format: magic "CONDA\x01", u32 little-endian JSON header
/// length, JSON header (dims, buffer metadata, rng state, array
/// directory), then the arrays as little-endian 64-bit floats.
void save_checkpoint(const std::string& path, const Model& model, const Buffer& buffer,
                     const Rng& rng, int batch_index);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace conda
