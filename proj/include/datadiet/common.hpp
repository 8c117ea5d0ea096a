#pragma once

#include <Eigen/Dense>

#include <cstdint>

namespace datadiet {

template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

using Index = Eigen::Index;
using ExampleId = std::int64_t;

// splitmix64 finalizer; used to derive independent seed streams.
constexpr std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream, std::uint64_t index) {
  return mix_seed(mix_seed(base ^ mix_seed(stream)) + index);
}

// Seed pair for one independent training run.
struct RunSeeds {
  std::uint64_t init = 0;
  std::uint64_t data = 0;
  friend bool operator==(const RunSeeds&, const RunSeeds&) = default;
};

}  // namespace datadiet
