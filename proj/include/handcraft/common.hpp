#pragma once

#include <Eigen/Core>

#include <stdexcept>
#include <string>

namespace handcraft {

// All internal math runs in double precision; on-disk formats store float32.
using Scalar = double;
using Index = Eigen::Index;

// Row-major to match the on-disk layout of pose frames and checkpoint tensors.
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

struct ShapeError : Error {
  explicit ShapeError(const std::string& msg) : Error("shape error: " + msg) {}
};

struct RangeError : Error {
  explicit RangeError(const std::string& msg) : Error("range error: " + msg) {}
};

struct IndexError : Error {
  explicit IndexError(const std::string& msg) : Error("index error: " + msg) {}
};

struct ConfigError : Error {
  explicit ConfigError(const std::string& msg) : Error("config error: " + msg) {}
};

struct NonFiniteError : Error {
  explicit NonFiniteError(const std::string& msg) : Error("non-finite error: " + msg) {}
};

struct IoError : Error {
  explicit IoError(const std::string& msg) : Error("io error: " + msg) {}
};

}  // namespace handcraft
