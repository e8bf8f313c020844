#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include "gsd/core/types.hpp"

namespace gsd {

using Vec2 = Eigen::Matrix<real, 2, 1>;
using Vec3 = Eigen::Matrix<real, 3, 1>;
using Vec4 = Eigen::Matrix<real, 4, 1>;
using Mat2 = Eigen::Matrix<real, 2, 2>;
using Mat3 = Eigen::Matrix<real, 3, 3>;
using Mat4 = Eigen::Matrix<real, 4, 4>;

}  // namespace gsd
