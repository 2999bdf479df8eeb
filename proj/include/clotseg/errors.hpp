#pragma once

#include <stdexcept>
#include <string>

namespace clotseg {

/// Shape or dimension disagreement between tensors / volumes.
class ShapeError : public std::runtime_error {
 public:
  explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Invalid argument value (non-finite data, bad window size, out-of-range epoch, ...).
class ValueError : public std::runtime_error {
 public:
  explicit ValueError(const std::string& msg) : std::runtime_error(msg) {}
};

/// File format / IO failures (bad magic, truncation, dimension overflow).
class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Configuration parse or validation failure.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Unrecoverable training-time failure (NaN gradients, divergence).
class TrainError : public std::runtime_error {
 public:
  explicit TrainError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace clotseg
