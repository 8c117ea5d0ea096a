#include "testing.hpp"

#include "datadiet/data.hpp"
#include "datadiet/errors.hpp"
#include "datadiet/io.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <fstream>
#include <map>

using namespace datadiet;
using namespace datadiet::testing;

namespace {

void put_be32(std::string& s, std::uint32_t v) {
  for (int shift = 24; shift >= 0; shift -= 8) s.push_back(static_cast<char>((v >> shift) & 0xff));
}

void write_bytes(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream(path, std::ios::binary).write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

// Three 2x2 images with labels 0, 1, 2.
void write_idx_pair(const std::filesystem::path& images, const std::filesystem::path& labels) {
  std::string img, lab;
  put_be32(img, 0x803);
  put_be32(img, 3);
  put_be32(img, 2);
  put_be32(img, 2);
  for (int i = 0; i < 12; ++i) img.push_back(static_cast<char>(i * 20));
  put_be32(lab, 0x801);
  put_be32(lab, 3);
  for (char c : {0, 1, 2}) lab.push_back(c);
  write_bytes(images, img);
  write_bytes(labels, lab);
}

std::map<int, int> histogram(const std::vector<int>& labels) {
  std::map<int, int> h;
  for (int l : labels) ++h[l];
  return h;
}

}  // namespace

TEST(Synthetic, ShapesBalanceAndDeterminism) {
  SyntheticTaskSpec s;
  s.train_size = 200;
  s.test_size = 50;
  const auto a = generate_synthetic(s);
  const auto b = generate_synthetic(s);
  EXPECT_EQ(a.train.size(), 200u);
  EXPECT_EQ(a.test.size(), 50u);
  EXPECT_EQ(a.train.dim(), 32);
  EXPECT_EQ(a.train.inputs, b.train.inputs);
  EXPECT_EQ(a.train.labels, b.train.labels);
  for (const auto& [label, count] : histogram(a.train.labels)) EXPECT_EQ(count, 20) << label;
  EXPECT_EQ(a.train.corrupted_count(), 0u);
  a.train.validate();
  // Train statistics normalize both splits.
  EXPECT_LT(a.train.inputs.rowwise().mean().cwiseAbs().maxCoeff(), 1e-4);
  s.seed = 1;
  EXPECT_NE(generate_synthetic(s).train.inputs, a.train.inputs);
}

TEST(Synthetic, BayesNoiseIsNotCorruption) {
  SyntheticTaskSpec s;
  s.train_size = 1000;
  s.bayes_noise = 0.2;
  const auto noisy = generate_synthetic(s);
  s.bayes_noise = 0;
  const auto clean = generate_synthetic(s);
  EXPECT_EQ(noisy.train.corrupted_count(), 0u);
  EXPECT_EQ(noisy.train.labels, noisy.train.original_labels);
  std::size_t changed = 0;
  for (std::size_t i = 0; i < 1000; ++i) changed += noisy.train.labels[i] != clean.train.labels[i];
  EXPECT_GT(changed, 100u);
  EXPECT_LE(changed, 200u);
}

TEST(Synthetic, RejectsBadSpecs) {
  SyntheticTaskSpec s;
  s.num_classes = 1;
  EXPECT_THROW(generate_synthetic(s), ConfigError);
  s.num_classes = 3;
  s.bayes_noise = 1.5;
  EXPECT_THROW(generate_synthetic(s), ConfigError);
}

TEST(Corruption, PermutesSelectedLabels) {
  const auto data = small_dataset(500, 5, 4);
  const auto noisy = corrupt_labels(data, 0.1, 42);
  EXPECT_EQ(histogram(noisy.labels), histogram(data.labels));
  EXPECT_EQ(noisy.original_labels, data.labels);
  std::size_t changed = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const bool differs = noisy.labels[i] != data.labels[i];
    changed += differs;
    EXPECT_EQ(static_cast<bool>(noisy.corrupted[i]), differs);
  }
  EXPECT_EQ(changed, noisy.corrupted_count());
  EXPECT_LE(changed, 50u);
  EXPECT_GT(changed, 25u);
  EXPECT_EQ(corrupt_labels(data, 0.1, 42).labels, noisy.labels);
  EXPECT_NE(corrupt_labels(data, 0.1, 43).labels, noisy.labels);
  noisy.validate();
}

TEST(Corruption, Boundaries) {
  const auto data = small_dataset(100);
  EXPECT_EQ(corrupt_labels(data, 0.0, 1).labels, data.labels);
  EXPECT_THROW(corrupt_labels(data, 1.5, 1), ConfigError);
  EXPECT_THROW(corrupt_labels(data, 0.01, 1), ConfigError);  // selects a single example
  EXPECT_NO_THROW(corrupt_labels(data, 0.02, 1));
}

TEST(Subset, PreservesOrderAndRejectsUnknownIds) {
  const auto data = small_dataset(20);
  const auto sub = take_subset(data, {3, 7, 11});
  ASSERT_EQ(sub.size(), 3u);
  EXPECT_EQ(sub.ids, (std::vector<ExampleId>{3, 7, 11}));
  EXPECT_EQ(sub.inputs.col(1), data.inputs.col(7));
  EXPECT_EQ(sub.labels[2], data.labels[11]);
  EXPECT_THROW(take_subset(data, {3, 999}), LookupError);
}

TEST(Idx, LoadsAndNormalizes) {
  TempDir dir;
  write_idx_pair(dir / "img", dir / "lab");
  const auto ds = load_idx(dir / "img", dir / "lab");
  EXPECT_EQ(ds.size(), 3u);
  EXPECT_EQ(ds.dim(), 4);
  EXPECT_EQ(ds.labels, (std::vector<int>{0, 1, 2}));
  EXPECT_EQ(ds.num_classes, 3);
  EXPECT_EQ(ds.image, (ImageShape{1, 2, 2}));
  EXPECT_NEAR(ds.inputs.mean(), 0.0, 1e-5);
  // Pixel ordering survives: raw values grow with index.
  EXPECT_LT(ds.inputs(0, 0), ds.inputs(1, 0));
  EXPECT_LT(ds.inputs(3, 0), ds.inputs(0, 1));
}

TEST(Idx, BadMagicReportsExpectedValue) {
  TempDir dir;
  write_idx_pair(dir / "img", dir / "lab");
  try {
    load_idx(dir / "lab", dir / "lab");
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("0x00000803"), std::string::npos) << e.what();
  }
}

TEST(Idx, TruncationAndCountMismatch) {
  TempDir dir;
  write_idx_pair(dir / "img", dir / "lab");
  auto bytes = read_file(dir / "img");
  write_bytes(dir / "short", bytes.substr(0, bytes.size() - 1));
  EXPECT_THROW(load_idx(dir / "short", dir / "lab"), FormatError);
  std::string lab;
  put_be32(lab, 0x801);
  put_be32(lab, 2);
  lab += std::string(2, '\0');
  write_bytes(dir / "lab2", lab);
  EXPECT_THROW(load_idx(dir / "img", dir / "lab2"), FormatError);
}

TEST(Cifar, RecordsAndLengthCheck) {
  TempDir dir;
  std::string bytes;
  for (int r = 0; r < 2; ++r) {
    bytes.push_back(static_cast<char>(r == 0 ? 7 : 2));
    for (int p = 0; p < 3072; ++p) bytes.push_back(static_cast<char>((p / 1024) * 100 + r));
  }
  write_bytes(dir / "batch.bin", bytes);
  const auto ds = load_cifar_binary({dir / "batch.bin"});
  EXPECT_EQ(ds.size(), 2u);
  EXPECT_EQ(ds.labels, (std::vector<int>{7, 2}));
  EXPECT_EQ(ds.dim(), 3072);
  EXPECT_EQ(ds.image, (ImageShape{3, 32, 32}));
  write_bytes(dir / "bad.bin", bytes.substr(0, 3073 + 100));
  EXPECT_THROW(load_cifar_binary({dir / "bad.bin"}), FormatError);
}

TEST(Snapshot, RoundTripIsExact) {
  TempDir dir;
  const auto data = corrupt_labels(small_dataset(64, 4, 6), 0.25, 5);
  save_snapshot(dir / "s.ddset", data);
  const auto back = load_snapshot(dir / "s.ddset");
  EXPECT_EQ(back.inputs, data.inputs);
  EXPECT_EQ(back.labels, data.labels);
  EXPECT_EQ(back.original_labels, data.original_labels);
  EXPECT_EQ(back.ids, data.ids);
  EXPECT_EQ(back.corrupted, data.corrupted);
  EXPECT_EQ(back.num_classes, data.num_classes);
  EXPECT_EQ(back.normalization, data.normalization);
  EXPECT_EQ(snapshot_bytes(back), snapshot_bytes(data));
  EXPECT_EQ(dataset_digest(back), dataset_digest(data));
}

TEST(Snapshot, CorruptFilesFail) {
  TempDir dir;
  const auto data = small_dataset(16);
  const auto bytes = snapshot_bytes(data);
  write_bytes(dir / "trunc", bytes.substr(0, bytes.size() - 3));
  EXPECT_THROW(load_snapshot(dir / "trunc"), FormatError);
  std::string bad = bytes;
  bad[0] = 'X';
  write_bytes(dir / "magic", bad);
  EXPECT_THROW(load_snapshot(dir / "magic"), FormatError);
  EXPECT_THROW(load_snapshot(dir / "missing"), ArtifactError);
}

TEST(Dataset, ValidateCatchesInconsistency) {
  auto data = small_dataset(10);
  data.labels[0] = 99;
  EXPECT_THROW(data.validate(), ShapeError);
  auto dup = small_dataset(10);
  dup.ids[1] = dup.ids[0];
  EXPECT_THROW(dup.validate(), ShapeError);
}
