#include "datadiet/data.hpp"

#include "datadiet/errors.hpp"
#include "datadiet/io.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <unordered_map>
#include <unordered_set>

namespace datadiet {

Example Dataset::example(std::size_t index) const {
  if (index >= size()) throw LookupError("example index " + std::to_string(index) + " out of range");
  const auto col = static_cast<Index>(index);
  return Example{ids[index], inputs.col(col), labels[index], original_labels[index], corrupted[index] != 0};
}

std::size_t Dataset::index_of(ExampleId id) const {
  auto it = std::find(ids.begin(), ids.end(), id);
  if (it == ids.end()) throw LookupError("unknown example id " + std::to_string(id));
  return static_cast<std::size_t>(it - ids.begin());
}

std::size_t Dataset::corrupted_count() const {
  return static_cast<std::size_t>(std::count(corrupted.begin(), corrupted.end(), std::uint8_t{1}));
}

void Dataset::validate() const {
  const auto n = size();
  if (static_cast<std::size_t>(inputs.cols()) != n || labels.size() != n || original_labels.size() != n ||
      corrupted.size() != n) {
    throw ShapeError("dataset arrays disagree on example count");
  }
  if (num_classes < 2) throw ConfigError("dataset needs at least two classes");
  std::unordered_set<ExampleId> seen;
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] < 0 || labels[i] >= num_classes || original_labels[i] < 0 ||
        original_labels[i] >= num_classes) {
      throw ShapeError("label out of range at index " + std::to_string(i));
    }
    if ((corrupted[i] != 0) != (labels[i] != original_labels[i])) {
      throw ShapeError("corrupted flag inconsistent with labels at index " + std::to_string(i));
    }
    if (!seen.insert(ids[i]).second) throw ShapeError("duplicate example id " + std::to_string(ids[i]));
  }
}

void apply_normalization(MatrixX<float>& inputs, const NormalizationStats& stats) {
  if (static_cast<Index>(stats.mean.size()) != inputs.rows() || stats.std.size() != stats.mean.size()) {
    throw ShapeError("normalization stats do not match input dimension");
  }
  for (Index r = 0; r < inputs.rows(); ++r) {
    inputs.row(r).array() = (inputs.row(r).array() - stats.mean[r]) / stats.std[r];
  }
}

namespace {

NormalizationStats feature_stats(const MatrixX<float>& raw) {
  NormalizationStats stats;
  const auto n = static_cast<double>(raw.cols());
  for (Index r = 0; r < raw.rows(); ++r) {
    const auto row = raw.row(r).cast<double>();
    const double mean = n > 0 ? row.mean() : 0.0;
    const double var = n > 0 ? (row.array() - mean).square().sum() / n : 0.0;
    stats.mean.push_back(static_cast<float>(mean));
    stats.std.push_back(var > 0 ? static_cast<float>(std::sqrt(var)) : 1.0f);
  }
  return stats;
}

// One mean/std per channel, broadcast to every pixel of that channel.
NormalizationStats channel_stats(const MatrixX<float>& raw, int channels) {
  const Index per_channel = raw.rows() / channels;
  NormalizationStats stats;
  for (int c = 0; c < channels; ++c) {
    const auto block = raw.middleRows(c * per_channel, per_channel).cast<double>();
    const double count = static_cast<double>(block.size());
    const double mean = count > 0 ? block.mean() : 0.0;
    const double var = count > 0 ? (block.array() - mean).square().sum() / count : 0.0;
    const float sd = var > 0 ? static_cast<float>(std::sqrt(var)) : 1.0f;
    for (Index k = 0; k < per_channel; ++k) {
      stats.mean.push_back(static_cast<float>(mean));
      stats.std.push_back(sd);
    }
  }
  return stats;
}

Dataset make_dataset(MatrixX<float> inputs, std::vector<int> labels, int num_classes, std::string provenance) {
  Dataset ds;
  const auto n = labels.size();
  ds.inputs = std::move(inputs);
  ds.original_labels = labels;
  ds.labels = std::move(labels);
  ds.ids.resize(n);
  std::iota(ds.ids.begin(), ds.ids.end(), ExampleId{0});
  ds.corrupted.assign(n, 0);
  ds.num_classes = num_classes;
  ds.provenance = std::move(provenance);
  return ds;
}

std::uint32_t big_endian_u32(BinaryReader& in, const char* what) {
  const auto bytes = in.get_bytes(4, what);
  return (std::uint32_t(std::uint8_t(bytes[0])) << 24) | (std::uint32_t(std::uint8_t(bytes[1])) << 16) |
         (std::uint32_t(std::uint8_t(bytes[2])) << 8) | std::uint32_t(std::uint8_t(bytes[3]));
}

std::string hex32(std::uint32_t v) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "0x%08x", v);
  return buf;
}

}  // namespace

DatasetSplit generate_synthetic(const SyntheticTaskSpec& spec) {
  if (spec.num_classes < 2) throw ConfigError("synthetic task needs at least two classes");
  if (spec.dim < 1 || spec.clusters_per_class < 1 || spec.train_size < 1 || spec.test_size < 0) {
    throw ConfigError("synthetic task sizes must be positive");
  }
  if (spec.cluster_std < 0 || spec.bayes_noise < 0 || spec.bayes_noise > 1) {
    throw ConfigError("synthetic task needs cluster_std >= 0 and bayes_noise in [0,1]");
  }
  const int k = spec.num_classes, d = spec.dim, clusters = spec.clusters_per_class;

  std::mt19937_64 centre_rng(derive_seed(spec.seed, 1, 0));
  std::normal_distribution<double> normal(0.0, 1.0);
  MatrixX<double> centres(d, k * clusters);
  const double scale = spec.class_separation / std::sqrt(static_cast<double>(d));
  for (Index c = 0; c < centres.cols(); ++c) {
    for (Index r = 0; r < d; ++r) centres(r, c) = scale * normal(centre_rng);
  }

  auto sample = [&](int count, std::uint64_t stream) {
    std::mt19937_64 rng(derive_seed(spec.seed, stream, 0));
    std::uniform_int_distribution<int> pick_cluster(0, clusters - 1);
    MatrixX<float> raw(d, count);
    std::vector<int> labels(count);
    for (int i = 0; i < count; ++i) {
      const int label = i % k;
      const int centre = label * clusters + pick_cluster(rng);
      for (int r = 0; r < d; ++r) {
        raw(r, i) = static_cast<float>(centres(r, centre) + spec.cluster_std * normal(rng));
      }
      labels[i] = label;
    }
    const auto noisy = static_cast<int>(std::llround(spec.bayes_noise * count));
    std::vector<int> order(count);
    std::iota(order.begin(), order.end(), 0);
    std::uniform_int_distribution<int> pick_class(0, k - 1);
    for (int i = 0; i < noisy; ++i) {
      std::uniform_int_distribution<int> pick(i, count - 1);
      std::swap(order[i], order[pick(rng)]);
      labels[order[i]] = pick_class(rng);
    }
    return std::pair{std::move(raw), std::move(labels)};
  };

  auto [train_raw, train_labels] = sample(spec.train_size, 2);
  auto [test_raw, test_labels] = sample(spec.test_size, 3);
  const auto stats = feature_stats(train_raw);
  apply_normalization(train_raw, stats);
  if (spec.test_size > 0) apply_normalization(test_raw, stats);

  const std::string provenance = "synthetic:k=" + std::to_string(k) + ",d=" + std::to_string(d) +
                                 ",seed=" + std::to_string(spec.seed);
  DatasetSplit split{make_dataset(std::move(train_raw), std::move(train_labels), k, provenance + ",split=train"),
                     make_dataset(std::move(test_raw), std::move(test_labels), k, provenance + ",split=test")};
  split.train.normalization = stats;
  split.test.normalization = stats;
  return split;
}

Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path,
                 const NormalizationStats* reference) {
  BinaryReader images(read_file(images_path));
  BinaryReader labels(read_file(labels_path));

  const auto image_magic = big_endian_u32(images, "images magic");
  if (image_magic != 0x00000803) {
    throw FormatError(images_path.string() + ": magic " + hex32(image_magic) + ", expected 0x00000803", 0);
  }
  const auto count = big_endian_u32(images, "image count");
  const auto rows = big_endian_u32(images, "row count");
  const auto cols = big_endian_u32(images, "column count");

  const auto label_magic = big_endian_u32(labels, "labels magic");
  if (label_magic != 0x00000801) {
    throw FormatError(labels_path.string() + ": magic " + hex32(label_magic) + ", expected 0x00000801", 0);
  }
  const auto label_count = big_endian_u32(labels, "label count");
  if (label_count != count) {
    throw FormatError("label count " + std::to_string(label_count) + " does not match image count " +
                          std::to_string(count),
                      4);
  }

  const std::size_t d = std::size_t(rows) * cols;
  const auto pixels = images.get_vector<std::uint8_t>(d * count, "image pixels");
  const auto raw_labels = labels.get_vector<std::uint8_t>(count, "labels");
  if (!images.at_end()) throw FormatError("trailing bytes in images file", images.offset());
  if (!labels.at_end()) throw FormatError("trailing bytes in labels file", labels.offset());

  MatrixX<float> inputs(static_cast<Index>(d), static_cast<Index>(count));
  for (std::size_t i = 0; i < count; ++i) {
    for (std::size_t p = 0; p < d; ++p) inputs(p, i) = pixels[i * d + p] / 255.0f;
  }
  std::vector<int> label_values(raw_labels.begin(), raw_labels.end());
  const int k = std::max(2, label_values.empty() ? 2 : *std::max_element(label_values.begin(), label_values.end()) + 1);

  const auto stats = reference ? *reference : channel_stats(inputs, 1);
  apply_normalization(inputs, stats);
  Dataset ds = make_dataset(std::move(inputs), std::move(label_values), k, "idx:" + images_path.filename().string());
  ds.image = ImageShape{1, static_cast<int>(rows), static_cast<int>(cols)};
  ds.normalization = stats;
  return ds;
}

Dataset load_cifar_binary(const std::vector<std::filesystem::path>& paths, const NormalizationStats* reference) {
  constexpr std::size_t record = 3073, pixels = 3072;
  std::vector<std::string> contents;
  std::size_t total = 0;
  for (const auto& path : paths) {
    contents.push_back(read_file(path));
    const auto size = contents.back().size();
    if (size % record != 0) {
      throw FormatError(path.string() + ": length " + std::to_string(size) + " is not a multiple of 3073",
                        size - size % record);
    }
    total += size / record;
  }
  MatrixX<float> inputs(static_cast<Index>(pixels), static_cast<Index>(total));
  std::vector<int> labels(total);
  std::size_t i = 0;
  for (std::size_t f = 0; f < contents.size(); ++f) {
    const auto& bytes = contents[f];
    for (std::size_t off = 0; off < bytes.size(); off += record, ++i) {
      const int label = std::uint8_t(bytes[off]);
      if (label >= 10) throw FormatError(paths[f].string() + ": label byte " + std::to_string(label) + " >= 10", off);
      labels[i] = label;
      for (std::size_t p = 0; p < pixels; ++p) inputs(p, i) = std::uint8_t(bytes[off + 1 + p]) / 255.0f;
    }
  }
  const auto stats = reference ? *reference : channel_stats(inputs, 3);
  apply_normalization(inputs, stats);
  Dataset ds = make_dataset(std::move(inputs), std::move(labels), 10, "cifar-binary");
  ds.image = ImageShape{3, 32, 32};
  ds.normalization = stats;
  return ds;
}

Dataset corrupt_labels(const Dataset& dataset, double fraction, std::uint64_t seed) {
  if (!(fraction >= 0.0 && fraction <= 1.0)) throw ConfigError("corruption fraction must lie in [0,1]");
  Dataset out = dataset;
  const auto n = dataset.size();
  const auto selected = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
  if (fraction > 0 && selected < 2) throw ConfigError("corruption must select at least two examples");
  if (selected == 0) return out;

  std::mt19937_64 rng(derive_seed(seed, 11, 0));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t i = 0; i < selected; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, n - 1);
    std::swap(order[i], order[pick(rng)]);
  }
  std::vector<std::size_t> perm(selected);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  for (std::size_t i = selected - 1; i > 0; --i) {
    std::uniform_int_distribution<std::size_t> pick(0, i);
    std::swap(perm[i], perm[pick(rng)]);
  }
  for (std::size_t i = 0; i < selected; ++i) {
    const auto target = order[i];
    out.labels[target] = dataset.labels[order[perm[i]]];
  }
  for (std::size_t i = 0; i < n; ++i) out.corrupted[i] = out.labels[i] != out.original_labels[i];
  out.provenance += ",corrupt=" + format_double(fraction) + "@" + std::to_string(seed);
  return out;
}

Dataset take_subset(const Dataset& dataset, const std::vector<ExampleId>& ids) {
  std::unordered_map<ExampleId, std::size_t> position;
  position.reserve(dataset.size());
  for (std::size_t i = 0; i < dataset.size(); ++i) position.emplace(dataset.ids[i], i);
  std::vector<std::uint8_t> keep(dataset.size(), 0);
  for (auto id : ids) {
    auto it = position.find(id);
    if (it == position.end()) throw LookupError("unknown example id " + std::to_string(id));
    keep[it->second] = 1;
  }
  std::vector<Index> columns;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    if (keep[i]) columns.push_back(static_cast<Index>(i));
  }
  Dataset out;
  out.inputs.resize(dataset.inputs.rows(), static_cast<Index>(columns.size()));
  for (std::size_t j = 0; j < columns.size(); ++j) {
    const auto i = static_cast<std::size_t>(columns[j]);
    out.inputs.col(static_cast<Index>(j)) = dataset.inputs.col(columns[j]);
    out.labels.push_back(dataset.labels[i]);
    out.original_labels.push_back(dataset.original_labels[i]);
    out.ids.push_back(dataset.ids[i]);
    out.corrupted.push_back(dataset.corrupted[i]);
  }
  out.num_classes = dataset.num_classes;
  out.image = dataset.image;
  out.normalization = dataset.normalization;
  out.provenance = dataset.provenance;
  return out;
}

namespace {
constexpr std::string_view kSnapshotMagic = "DDSET001";
}

std::string snapshot_bytes(const Dataset& dataset) {
  dataset.validate();
  Json header = {{"format", "ddset"},
                 {"version", 1},
                 {"n", dataset.size()},
                 {"d", dataset.dim()},
                 {"k", dataset.num_classes},
                 {"provenance", dataset.provenance},
                 {"image", {dataset.image.channels, dataset.image.height, dataset.image.width}},
                 {"norm_mean", dataset.normalization.mean},
                 {"norm_std", dataset.normalization.std}};
  BinaryWriter out;
  write_container_header(out, kSnapshotMagic, header);
  out.put_span(std::span<const float>(dataset.inputs.data(), static_cast<std::size_t>(dataset.inputs.size())));
  out.put_span(std::span<const ExampleId>(dataset.ids));
  std::vector<std::int32_t> labels(dataset.labels.begin(), dataset.labels.end());
  std::vector<std::int32_t> originals(dataset.original_labels.begin(), dataset.original_labels.end());
  out.put_span(std::span<const std::int32_t>(labels));
  out.put_span(std::span<const std::int32_t>(originals));
  out.put_span(std::span<const std::uint8_t>(dataset.corrupted));
  return out.bytes();
}

void save_snapshot(const std::filesystem::path& path, const Dataset& dataset) {
  write_file_atomic(path, snapshot_bytes(dataset));
}

Dataset load_snapshot(const std::filesystem::path& path) {
  BinaryReader in(read_file(path));
  const Json header = read_container_header(in, kSnapshotMagic);
  Dataset ds;
  std::size_t n = 0;
  int d = 0;
  try {
    n = header.at("n").get<std::size_t>();
    d = header.at("d").get<int>();
    ds.num_classes = header.at("k").get<int>();
    ds.provenance = header.value("provenance", "");
    const auto image = header.at("image").get<std::vector<int>>();
    if (image.size() == 3) ds.image = ImageShape{image[0], image[1], image[2]};
    ds.normalization.mean = header.at("norm_mean").get<std::vector<float>>();
    ds.normalization.std = header.at("norm_std").get<std::vector<float>>();
  } catch (const Json::exception& e) {
    throw FormatError(std::string("snapshot header: ") + e.what(), 16);
  }
  const auto floats = in.get_vector<float>(n * static_cast<std::size_t>(d), "input block");
  ds.inputs = Eigen::Map<const MatrixX<float>>(floats.data(), d, static_cast<Index>(n));
  ds.ids = in.get_vector<ExampleId>(n, "id block");
  const auto labels = in.get_vector<std::int32_t>(n, "label block");
  const auto originals = in.get_vector<std::int32_t>(n, "original label block");
  ds.labels.assign(labels.begin(), labels.end());
  ds.original_labels.assign(originals.begin(), originals.end());
  ds.corrupted = in.get_vector<std::uint8_t>(n, "corrupted flags");
  if (!in.at_end()) throw FormatError("trailing bytes after snapshot payload", in.offset());
  ds.validate();
  return ds;
}

std::string dataset_digest(const Dataset& dataset) { return digest_hex(snapshot_bytes(dataset)); }

}  // namespace datadiet
