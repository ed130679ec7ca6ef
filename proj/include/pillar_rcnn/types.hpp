#pragma once

#include <array>
#include <stdexcept>
#include <string>

#include <Eigen/Core>

namespace pillar_rcnn {

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using ColMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

template <typename Scalar>
using RowVector = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

template <typename Scalar>
using Vector2 = Eigen::Matrix<Scalar, 2, 1>;

using RowMatrixf = RowMatrix<float>;
using RowMatrixd = RowMatrix<double>;
using Vector2d = Vector2<double>;

/// Object categories. Values are the on-disk class ids.
enum class ObjectClass : int { kVehicle = 0, kPedestrian = 1, kCyclist = 2 };

inline constexpr int kNumClasses = 3;
inline constexpr std::array<const char*, kNumClasses> kClassNames = {"vehicle", "pedestrian",
                                                                     "cyclist"};

/// Thrown for malformed inputs that are the caller's fault (bad config, shape mismatch).
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Thrown for unreadable/unwritable files and corrupt binary payloads.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace pillar_rcnn
