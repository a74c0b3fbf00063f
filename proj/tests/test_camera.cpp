#include "vpt/camera.hpp"
#include "vpt/rng.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <set>

using namespace vpt;

namespace {

Mat4 random_pose(Rng &rng) {
    const Vec3 eye(rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(0.5, 3));
    const Vec3 target(rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3));
    return look_at(eye, target);
}

} // namespace

TEST(Camera, FocalFromFov) {
    const CameraIntrinsics k{64, 48, std::numbers::pi / 3};
    EXPECT_NEAR(k.focal(), 32.0 / std::tan(std::numbers::pi / 6), 1e-12);
}

TEST(Camera, IntrinsicsValidation) {
    EXPECT_THROW((CameraIntrinsics{0, 4, 1.0}).validate(), UsageError);
    EXPECT_THROW((CameraIntrinsics{4, 4, 0.0}).validate(), UsageError);
    EXPECT_THROW((CameraIntrinsics{4, 4, std::numbers::pi}).validate(), UsageError);
    EXPECT_NO_THROW((CameraIntrinsics{1, 1, 0.5}).validate());
}

TEST(Camera, CenterPixelLooksForward) {
    const CameraIntrinsics k{5, 5, 0.9};
    const Ray r = ray_for_pixel(k, Mat4::Identity(), 2, 2, 0.5, 3.0);
    EXPECT_EQ(r.direction, Vec3(0, 0, -1));
    EXPECT_EQ(r.origin, Vec3::Zero());
    EXPECT_EQ(r.t_near, 0.5);
    EXPECT_EQ(r.t_far, 3.0);
}

TEST(Camera, MirrorSymmetry) {
    const CameraIntrinsics k{8, 6, 1.1};
    for (int v = 0; v < k.height; ++v) {
        for (int u = 0; u < k.width; ++u) {
            const Vec3 a = ray_for_pixel(k, Mat4::Identity(), u, v).direction;
            const Vec3 b = ray_for_pixel(k, Mat4::Identity(), k.width - 1 - u, v).direction;
            EXPECT_NEAR(a.x(), -b.x(), 1e-15);
            EXPECT_NEAR(a.y(), b.y(), 1e-15);
            EXPECT_NEAR(a.z(), b.z(), 1e-15);
        }
    }
}

TEST(Camera, CornerAngleClosedForm) {
    const CameraIntrinsics k{64, 64, std::numbers::pi / 3};
    const Ray r = ray_for_pixel(k, Mat4::Identity(), 0, 0);
    const double f = 32.0 / std::tan(std::numbers::pi / 6);
    const double off = std::hypot(31.5, 31.5);
    const double angle = std::acos(-r.direction.z());
    EXPECT_NEAR(angle, std::atan(off / f), 1e-12);
    // Top-left pixel points left (-x) and up (+y) in the camera frame.
    EXPECT_LT(r.direction.x(), 0.0);
    EXPECT_GT(r.direction.y(), 0.0);
}

TEST(Camera, OutOfBoundsIsRangeError) {
    const CameraIntrinsics k{4, 3, 1.0};
    EXPECT_THROW(ray_for_pixel(k, Mat4::Identity(), 4, 0), RangeError);
    EXPECT_THROW(ray_for_pixel(k, Mat4::Identity(), 0, 3), RangeError);
    EXPECT_THROW(ray_for_pixel(k, Mat4::Identity(), -1, 0), RangeError);
}

TEST(Camera, RaysForViewRowMajorUnitNorm) {
    const CameraIntrinsics k{2, 2, 1.0};
    Rng rng(4);
    const Mat4 pose = random_pose(rng);
    const auto rays = rays_for_view(k, pose);
    ASSERT_EQ(rays.size(), 4u);
    const Pixel expect[] = {{0, 0}, {1, 0}, {0, 1}, {1, 1}};
    for (std::size_t i = 0; i < 4; ++i) {
        EXPECT_EQ(rays[i].pixel, expect[i]);
        EXPECT_NEAR(rays[i].ray.direction.norm(), 1.0, 1e-12);
        EXPECT_EQ(rays[i].ray.direction, ray_for_pixel(k, pose, expect[i].u, expect[i].v).direction);
    }
}

TEST(Camera, PartitionedPixelsReassembleTheView) {
    const CameraIntrinsics k{7, 5, 0.8};
    Rng rng(21);
    const Mat4 pose = random_pose(rng);
    const auto all = rays_for_view(k, pose);
    std::vector<PixelRay> even, odd;
    for (int v = 0; v < k.height; ++v) {
        for (int u = 0; u < k.width; ++u) {
            auto &part = (u + v) % 2 == 0 ? even : odd;
            part.push_back({{u, v}, ray_for_pixel(k, pose, u, v)});
        }
    }
    EXPECT_EQ(even.size() + odd.size(), all.size());
    std::set<std::pair<int, int>> even_px;
    for (const auto &pr : even) even_px.insert({pr.pixel.u, pr.pixel.v});
    std::size_t e = 0, o = 0;
    for (const auto &pr : all) {
        const bool in_even = even_px.contains({pr.pixel.u, pr.pixel.v});
        const PixelRay &part = in_even ? even[e++] : odd[o++];
        EXPECT_EQ(part.pixel, pr.pixel);
        EXPECT_EQ(part.ray.direction, pr.ray.direction);
        EXPECT_EQ(part.ray.origin, pr.ray.origin);
    }
    EXPECT_EQ(e, even.size());
    EXPECT_EQ(o, odd.size());
}

TEST(Camera, ProjectionInvertsRayGeneration) {
    const CameraIntrinsics k{32, 24, 0.7};
    Rng rng(12);
    for (int trial = 0; trial < 20; ++trial) {
        const Mat4 pose = random_pose(rng);
        ASSERT_TRUE(is_rigid(pose));
        const int u = static_cast<int>(rng.uniform(0, k.width));
        const int v = static_cast<int>(rng.uniform(0, k.height));
        const Ray r = ray_for_pixel(k, pose, u, v);
        for (double t : {0.1, 1.0, 3.7, 50.0}) {
            const Eigen::Vector2d p = project(k, pose, r.at(t));
            EXPECT_NEAR(p.x(), u + 0.5, 1e-6);
            EXPECT_NEAR(p.y(), v + 0.5, 1e-6);
        }
    }
}

TEST(Camera, LookAtIsRigidAndAimed) {
    Rng rng(2);
    for (int i = 0; i < 10; ++i) {
        const Vec3 eye(rng.uniform(-4, 4), rng.uniform(-4, 4), rng.uniform(0.2, 4));
        const Mat4 pose = look_at(eye, Vec3::Zero());
        EXPECT_TRUE(is_rigid(pose));
        const Vec3 fwd = -pose.block<3, 1>(0, 2);
        EXPECT_NEAR((fwd - (-eye).normalized()).norm(), 0.0, 1e-12);
    }
    // Straight down the up axis still yields a valid frame.
    EXPECT_TRUE(is_rigid(look_at(Vec3(0, 0, 3), Vec3::Zero())));
}

TEST(Camera, NonRigidDetected) {
    Mat4 m = Mat4::Identity();
    m(0, 0) = 2.0;
    EXPECT_FALSE(is_rigid(m));
    Mat4 reflect = Mat4::Identity();
    reflect(2, 2) = -1.0;
    EXPECT_FALSE(is_rigid(reflect));
    Mat4 row = Mat4::Identity();
    row(3, 0) = 0.5;
    EXPECT_FALSE(is_rigid(row));
}
