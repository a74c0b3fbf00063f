#pragma once

#include "vpt/error.hpp"

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <cmath>
#include <cstddef>
#include <numbers>
#include <string>
#include <vector>

namespace vpt {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;

// Pinhole camera. Focal length (pixels) = width / (2 tan(fov_x / 2)); square pixels.
struct CameraIntrinsics {
    int width = 0;
    int height = 0;
    double fov_x = 0.0;

    double focal() const { return 0.5 * width / std::tan(0.5 * fov_x); }

    void validate() const {
        if (width < 1 || height < 1) throw UsageError("camera intrinsics: width and height must be >= 1");
        if (!(fov_x > 0.0 && fov_x < std::numbers::pi)) throw UsageError("camera intrinsics: fov_x must lie in (0, pi)");
    }

    friend bool operator==(const CameraIntrinsics &, const CameraIntrinsics &) = default;
};

struct Ray {
    Vec3 origin = Vec3::Zero();
    Vec3 direction = Vec3::UnitZ();
    double t_near = 0.0;
    double t_far = 1.0;

    Vec3 at(double t) const { return origin + t * direction; }
};

struct Pixel {
    int u = 0;  // column
    int v = 0;  // row

    friend bool operator==(const Pixel &, const Pixel &) = default;
};

// Checks the 4x4 camera-to-world matrix is a rigid transform: orthonormal
// rotation block with det +1 and an affine last row.
inline bool is_rigid(const Mat4 &pose, double tol = 1e-6) {
    const Mat3 r = pose.topLeftCorner<3, 3>();
    if (((r.transpose() * r) - Mat3::Identity()).cwiseAbs().maxCoeff() > tol) return false;
    if (std::fabs(r.determinant() - 1.0) > tol) return false;
    const Eigen::RowVector4d last = pose.row(3);
    return (last - Eigen::RowVector4d(0, 0, 0, 1)).cwiseAbs().maxCoeff() <= tol;
}

// Camera-space direction for the center of pixel (u, v). Blender convention:
// x right, y up, the camera looks down -z.
inline Vec3 camera_direction(const CameraIntrinsics &k, double px, double py) {
    const double f = k.focal();
    return Vec3((px - 0.5 * k.width) / f, -(py - 0.5 * k.height) / f, -1.0);
}

inline Ray ray_for_pixel(const CameraIntrinsics &k, const Mat4 &pose, int u, int v, double t_near = 0.0,
                         double t_far = 1.0) {
    if (u < 0 || u >= k.width || v < 0 || v >= k.height) {
        throw RangeError("pixel (" + std::to_string(u) + ", " + std::to_string(v) + ") outside " +
                         std::to_string(k.width) + "x" + std::to_string(k.height) + " image");
    }
    const Vec3 dc = camera_direction(k, u + 0.5, v + 0.5);
    Ray r;
    r.origin = pose.topRightCorner<3, 1>();
    r.direction = (pose.topLeftCorner<3, 3>() * dc).normalized();
    r.t_near = t_near;
    r.t_far = t_far;
    return r;
}

// Projects a world point into continuous pixel coordinates (x = column, y = row).
inline Eigen::Vector2d project(const CameraIntrinsics &k, const Mat4 &pose, const Vec3 &world) {
    const Mat3 r = pose.topLeftCorner<3, 3>();
    const Vec3 c = r.transpose() * (world - pose.topRightCorner<3, 1>());
    const double f = k.focal();
    return {0.5 * k.width + f * (c.x() / -c.z()), 0.5 * k.height - f * (c.y() / -c.z())};
}

struct PixelRay {
    Pixel pixel;
    Ray ray;
};

// Every pixel of the view, row-major.
inline std::vector<PixelRay> rays_for_view(const CameraIntrinsics &k, const Mat4 &pose, double t_near = 0.0,
                                           double t_far = 1.0) {
    k.validate();
    std::vector<PixelRay> out;
    out.reserve(static_cast<std::size_t>(k.width) * k.height);
    for (int v = 0; v < k.height; ++v) {
        for (int u = 0; u < k.width; ++u) out.push_back({{u, v}, ray_for_pixel(k, pose, u, v, t_near, t_far)});
    }
    return out;
}

// Camera-to-world pose at `eye` looking at `target`, with world +z as up.
inline Mat4 look_at(const Vec3 &eye, const Vec3 &target, const Vec3 &up = Vec3::UnitZ()) {
    const Vec3 back = (eye - target).normalized();  // camera +z
    Vec3 right = up.cross(back);
    if (right.norm() < 1e-12) right = Vec3::UnitX().cross(back);
    right.normalize();
    const Vec3 cam_up = back.cross(right);
    Mat4 m = Mat4::Identity();
    m.block<3, 1>(0, 0) = right;
    m.block<3, 1>(0, 1) = cam_up;
    m.block<3, 1>(0, 2) = back;
    m.block<3, 1>(0, 3) = eye;
    return m;
}

} // namespace vpt
