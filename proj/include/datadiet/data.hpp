#pragma once

#include "datadiet/common.hpp"
#include "datadiet/nn_core.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace datadiet {

// Per-feature affine normalization: x_normalized = (x_raw - mean) / std.
struct NormalizationStats {
  std::vector<float> mean;
  std::vector<float> std;
  friend bool operator==(const NormalizationStats&, const NormalizationStats&) = default;
};

struct Example {
  ExampleId id = 0;
  VectorX<float> input;
  int label = 0;
  int original_label = 0;
  bool corrupted = false;
};

// Column-per-example storage. Immutable after construction by convention;
// every transformation returns a new Dataset.
struct Dataset {
  MatrixX<float> inputs;  // d x N
  std::vector<int> labels;
  std::vector<int> original_labels;
  std::vector<ExampleId> ids;
  std::vector<std::uint8_t> corrupted;
  int num_classes = 0;
  ImageShape image;
  NormalizationStats normalization;
  std::string provenance;

  std::size_t size() const { return ids.size(); }
  bool empty() const { return ids.empty(); }
  int dim() const { return static_cast<int>(inputs.rows()); }
  Example example(std::size_t index) const;
  std::size_t index_of(ExampleId id) const;
  std::size_t corrupted_count() const;
  void validate() const;
};

struct DatasetSplit {
  Dataset train;
  Dataset test;
};

// Class-conditional Gaussian mixture. Each class owns clusters_per_class
// centres drawn as class_separation * N(0, I/d); points scatter around a
// uniformly chosen centre with cluster_std. A bayes_noise fraction of labels
// (train and test alike) is resampled uniformly over classes.
struct SyntheticTaskSpec {
  int num_classes = 10;
  int dim = 32;
  int clusters_per_class = 1;
  double cluster_std = 1.0;
  double class_separation = 4.0;
  double bayes_noise = 0.0;
  int train_size = 1000;
  int test_size = 1000;
  std::uint64_t seed = 0;
};

DatasetSplit generate_synthetic(const SyntheticTaskSpec& spec);

// MNIST-style IDX pair. Pixels are scaled to [0,1] and normalized with a single
// channel mean/std; pass reference stats to normalize a test file with the
// training statistics.
Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path,
                 const NormalizationStats* reference = nullptr);

// CIFAR-10 binary batches; per-channel normalization over the loaded records.
Dataset load_cifar_binary(const std::vector<std::filesystem::path>& paths,
                          const NormalizationStats* reference = nullptr);

// Selects round(fraction * N) examples uniformly and permutes their labels
// among themselves; the label histogram is unchanged.
Dataset corrupt_labels(const Dataset& dataset, double fraction, std::uint64_t seed);

// Order-preserving restriction to the given ids.
Dataset take_subset(const Dataset& dataset, const std::vector<ExampleId>& ids);

// Applies stats computed elsewhere to raw (unnormalized) inputs.
void apply_normalization(MatrixX<float>& inputs, const NormalizationStats& stats);

// Snapshot container (.ddset); layout documented in docs/formats.md.
void save_snapshot(const std::filesystem::path& path, const Dataset& dataset);
Dataset load_snapshot(const std::filesystem::path& path);
std::string snapshot_bytes(const Dataset& dataset);
std::string dataset_digest(const Dataset& dataset);

// Gathers the given columns into a batch matrix of the requested scalar type.
template <typename Scalar>
MatrixX<Scalar> gather_inputs(const Dataset& dataset, const std::vector<std::size_t>& indices) {
  MatrixX<Scalar> batch(dataset.dim(), static_cast<Index>(indices.size()));
  for (std::size_t j = 0; j < indices.size(); ++j) {
    batch.col(static_cast<Index>(j)) = dataset.inputs.col(static_cast<Index>(indices[j])).template cast<Scalar>();
  }
  return batch;
}

}  // namespace datadiet
