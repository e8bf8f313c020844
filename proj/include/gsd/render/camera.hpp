#pragma once

#include "gsd/core/types.hpp"
#include "gsd/field/geom3.hpp"

namespace gsd {

// Pinhole camera. Camera space is x-right / y-down / z-forward; a world point
// maps to pixels as u = fx*X/Z + cx, v = fy*Y/Z + cy with (X,Y,Z) =
// rotation*x + translation (world-to-camera).
struct Camera {
    real fx = 0, fy = 0, cx = 0, cy = 0;
    Mat3 rotation = Mat3::Identity();   // world-to-camera
    Vec3 translation = Vec3::Zero();
    int width = 0, height = 0;
    real near_plane = real(0.01);
    real far_plane = real(100.0);

    Vec3 to_camera(const Vec3& world) const { return rotation * world + translation; }
    Vec3 center() const { return -(rotation.transpose() * translation); }

    real tan_half_fov_x() const { return static_cast<real>(width) / (2 * fx); }
    real tan_half_fov_y() const { return static_cast<real>(height) / (2 * fy); }

    void validate() const {
        if (!(fx > 0) || !(fy > 0)) throw ParamError("camera: focal lengths must be positive");
        if (!(near_plane > 0) || !(near_plane < far_plane))
            throw ParamError("camera: requires 0 < near < far");
        if (width <= 0 || height <= 0) throw ParamError("camera: empty image plane");
        const Mat3 rtr = rotation.transpose() * rotation;
        if ((rtr - Mat3::Identity()).cwiseAbs().maxCoeff() > real(1e-6) ||
            std::abs(rotation.determinant() - real(1)) > real(1e-6))
            throw ParamError("camera: rotation must be orthonormal with determinant +1");
    }
};

}  // namespace gsd
