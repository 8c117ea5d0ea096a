#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace datadiet {

// Every library failure derives from Error so the CLI can map it to an exit code.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::uint64_t byte_offset)
      : Error(what + " (at byte offset " + std::to_string(byte_offset) + ")"),
        offset_(byte_offset) {}
  std::uint64_t byte_offset() const { return offset_; }

 private:
  std::uint64_t offset_;
};

class LookupError : public Error {
 public:
  using Error::Error;
};

class AggregationError : public Error {
 public:
  using Error::Error;
};

class DivergenceError : public Error {
 public:
  explicit DivergenceError(std::int64_t step)
      : Error("training diverged: non-finite gradient at step " + std::to_string(step)),
        step_(step) {}
  std::int64_t step() const { return step_; }

 private:
  std::int64_t step_;
};

class UndefinedError : public Error {
 public:
  using Error::Error;
};

class ResourceError : public Error {
 public:
  using Error::Error;
};

// Missing or unreadable on-disk artifact (checkpoint, score file, dataset file).
class ArtifactError : public Error {
 public:
  using Error::Error;
};

}  // namespace datadiet
