#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>

namespace fmu {

using Index = Eigen::Index;

// Dense row-major matrices are the universal currency. Rows index positions
// (pixels, tokens, patches), columns index channels/features.
template <typename S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using Vec = Eigen::Matrix<S, Eigen::Dynamic, 1>;

// Runtime scalar. Tests instantiate the same templates with double where
// finite-difference precision matters.
using Real = float;
using MatR = Mat<Real>;
using VecR = Vec<Real>;
using Matd = Mat<double>;
using Vecd = Vec<double>;

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DimensionError : Error { using Error::Error; };
struct ParameterError : Error { using Error::Error; };
struct RangeError : Error { using Error::Error; };
struct DegenerateInputError : Error { using Error::Error; };
struct FormatError : Error { using Error::Error; };
struct ProtocolError : Error { using Error::Error; };
struct IoError : Error { using Error::Error; };
struct CheckpointError : Error { using Error::Error; };

inline void check_dim(bool ok, const std::string& msg) {
  if (!ok) throw DimensionError(msg);
}
inline void check_param(bool ok, const std::string& msg) {
  if (!ok) throw ParameterError(msg);
}
inline void check_range(bool ok, const std::string& msg) {
  if (!ok) throw RangeError(msg);
}

}  // namespace fmu
