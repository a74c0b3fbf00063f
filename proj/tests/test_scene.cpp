#include "vpt/scene.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <numbers>

using namespace vpt;
using vpt::testing::scratch_dir;
using vpt::testing::tiny_dataset;

namespace {

std::string slurp(const std::filesystem::path &p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void rewrite_json(const std::filesystem::path &p, const std::function<void(nlohmann::json &)> &edit) {
    auto j = detail::read_json(p);
    edit(j);
    detail::write_json(p, j);
}

} // namespace

TEST(Scene, FieldIsTotalAndBounded) {
    for (const auto &name : builtin_scene_names()) {
        const AnalyticField f = builtin_scene(name);
        Rng rng(5);
        for (int i = 0; i < 2000; ++i) {
            const Vec3 x(rng.uniform(-1.5, 1.5), rng.uniform(-1.5, 1.5), rng.uniform(-1.5, 1.5));
            const Vec3 d = Vec3(rng.normal(0, 1), rng.normal(0, 1), rng.normal(0, 1)).normalized();
            const double s = f.density(x);
            EXPECT_TRUE(std::isfinite(s));
            EXPECT_GE(s, 0.0);
            if (x.norm() > f.bound_radius) {
                EXPECT_EQ(s, 0.0);
            }
            const Vec3 c = f.color(x, d);
            EXPECT_TRUE((c.array() >= 0.0).all() && (c.array() <= 1.0).all()) << name;
        }
    }
    EXPECT_THROW(builtin_scene("teapot"), UsageError);
}

TEST(Scene, EmptyFieldRendersBackground) {
    const AnalyticField f = builtin_scene("empty");
    const CameraIntrinsics k{6, 5, 0.8};
    const OracleRender r = oracle_render(f, k, look_at(Vec3(0, -3, 1), Vec3::Zero()), 2.0, 4.0, 256);
    for (double v : r.rgb.data) EXPECT_EQ(v, 1.0);
    for (double v : r.depth.data) EXPECT_EQ(v, 4.0);
    for (auto v : r.valid) EXPECT_EQ(v, 0);
}

TEST(Scene, OracleRejectsCoarseQuadrature) {
    const CameraIntrinsics k{4, 4, 0.8};
    EXPECT_THROW(oracle_render(builtin_scene("sphere"), k, Mat4::Identity(), 1.0, 2.0, 128), UsageError);
}

TEST(Scene, SphereCenterDepthMatchesGeometry) {
    const AnalyticField f = builtin_scene("sphere");
    const double rho = 2.8;
    const CameraIntrinsics k{33, 33, 0.7};
    const double tn = rho - 1.0, tf = rho + 1.0;
    const int n = 512;
    const OracleRender r = oracle_render(f, k, look_at(Vec3(0, -rho, 0.4).normalized() * rho, Vec3::Zero()), tn, tf, n);
    const double step = (tf - tn) / n;
    EXPECT_TRUE(r.valid[16 * 33 + 16]);
    EXPECT_NEAR(r.depth.at(16, 16), rho - f.spheres[0].radius, 2 * step);
}

TEST(Scene, WallDepthsWithinOneStep) {
    // Slab |z| <= 0.1 seen from above. Its faces are soft, so the reference is
    // the expected termination distance, integrated with the trapezoid rule
    // on a grid 200x finer than the oracle's.
    const AnalyticField f = builtin_scene("wall");
    const double rho = 2.0;
    const CameraIntrinsics k{9, 9, 0.3};
    const Mat4 pose = look_at(Vec3(0, 0, rho), Vec3::Zero(), Vec3::UnitY());
    const int n = 1024;
    const double tn = 1.0, tf = 3.0, step = (tf - tn) / n;
    const OracleRender r = oracle_render(f, k, pose, tn, tf, n);
    for (int v = 0; v < k.height; v += 4) {
        for (int u = 0; u < k.width; u += 4) {
            const Ray ray = ray_for_pixel(k, pose, u, v, tn, tf);
            const int m = 200 * n;
            const double h = (tf - tn) / m;
            double tau = 0.0, num = 0.0, den = 0.0, prev_s = f.density(ray.at(tn));
            for (int i = 1; i <= m; ++i) {
                const double t = tn + i * h, s = f.density(ray.at(t));
                const double t_prev = std::exp(-tau);
                tau += 0.5 * h * (prev_s + s);
                const double w = t_prev - std::exp(-tau);
                num += w * (t - 0.5 * h);
                den += w;
                prev_s = s;
            }
            ASSERT_TRUE(r.valid[v * k.width + u]);
            // The face sits 0.1 above the center plane; the soft shell
            // pushes termination at most one shell width past it.
            const double face = (rho - f.boxes[0].half.z()) / -ray.direction.z();
            EXPECT_GT(num / den, face - f.boxes[0].shell);
            EXPECT_LT(num / den, face + f.boxes[0].shell);
            EXPECT_NEAR(r.depth.at(u, v), num / den, step) << u << "," << v;
        }
    }
}

TEST(Scene, QuadratureConverges) {
    const CameraIntrinsics k{10, 10, 0.7};
    for (const auto &name : builtin_scene_names()) {
        const AnalyticField f = builtin_scene(name);
        const Mat4 pose = hemisphere_pose(2.8, 0.7, 0.5);
        double prev_diff = std::numeric_limits<double>::infinity();
        OracleRender prev = oracle_render(f, k, pose, 1.8, 3.8, 256);
        for (int n : {512, 1024, 2048}) {
            const OracleRender cur = oracle_render(f, k, pose, 1.8, 3.8, n);
            double diff = 0.0;
            for (std::size_t i = 0; i < cur.rgb.data.size(); ++i) {
                diff = std::max(diff, std::fabs(cur.rgb.data[i] - prev.rgb.data[i]));
            }
            EXPECT_LE(diff, prev_diff) << name << " n=" << n;
            if (n == 1024) {
                EXPECT_LE(diff, 1e-3) << name;
            }
            prev_diff = diff;
            prev = cur;
        }
    }
}

TEST(Scene, GenSceneDeterministicAndWellFormed) {
    const SceneDataset a = tiny_dataset(10, 4, 2, 2);
    const SceneDataset b = tiny_dataset(10, 4, 2, 2);
    EXPECT_TRUE(a == b);
    EXPECT_EQ(dataset_hash(a), dataset_hash(b));
    EXPECT_NO_THROW(a.validate());
    EXPECT_EQ(a.split("train").size(), 4u);
    EXPECT_EQ(a.split("val").size(), 2u);
    EXPECT_EQ(a.split("test").size(), 2u);
    for (const auto &v : a.views) {
        EXPECT_TRUE(is_rigid(v.pose));
        const Vec3 eye = v.pose.topRightCorner<3, 1>();
        const Vec3 fwd = -v.pose.block<3, 1>(0, 2);
        EXPECT_LE(std::acos(std::min(1.0, fwd.dot(-eye.normalized()))), 1e-6);
        EXPECT_GT(eye.z(), 0.0);
        for (double p : v.image.data) {
            EXPECT_GE(p, 0.0);
            EXPECT_LE(p, 1.0);
        }
    }
    SceneSpec other;
    other.resolution = 10;
    other.n_train = 4;
    other.n_val = 2;
    other.n_test = 2;
    other.quadrature_n = 256;
    other.seed = 2;
    EXPECT_NE(dataset_hash(gen_scene(other)), dataset_hash(a));
}

TEST(Scene, GenSceneRejectsBadSpecs) {
    SceneSpec s;
    s.resolution = 4;
    EXPECT_THROW(gen_scene(s), UsageError);
    s.resolution = 8;
    s.n_val = 0;
    EXPECT_THROW(gen_scene(s), UsageError);
    s.n_val = 1;
    s.scene = "nope";
    EXPECT_THROW(gen_scene(s), UsageError);
}

TEST(Scene, SplitSizes20_5_5) {
    SceneSpec s;
    s.resolution = 8;
    s.n_train = 20;
    s.n_val = 5;
    s.n_test = 5;
    s.quadrature_n = 256;
    const auto dir = scratch_dir();
    save_dataset(gen_scene(s), dir);
    const SceneDataset ds = load_dataset(dir);
    EXPECT_EQ(ds.split("train").size(), 20u);
    EXPECT_EQ(ds.split("val").size(), 5u);
    EXPECT_EQ(ds.split("test").size(), 5u);
}

TEST(Scene, EmptySceneImagesAreBackground) {
    const SceneDataset ds = tiny_dataset(8, 2, 1, 1, "empty");
    for (const auto &v : ds.views) {
        for (double p : v.image.data) EXPECT_EQ(p, 1.0);
        for (double d : v.depth->data) EXPECT_EQ(d, static_cast<double>(static_cast<float>(ds.t_far)));
    }
}

TEST(Scene, SaveLoadRoundTripIsExact) {
    const SceneDataset ds = tiny_dataset(10, 3, 1, 1);
    const auto dir = scratch_dir();
    save_dataset(ds, dir);
    const SceneDataset back = load_dataset(dir);
    EXPECT_TRUE(back == ds);
    EXPECT_EQ(dataset_hash(back), dataset_hash(ds));

    // Saving what was loaded reproduces the files byte for byte.
    const auto dir2 = scratch_dir("_again");
    save_dataset(back, dir2);
    for (const auto &e : std::filesystem::recursive_directory_iterator(dir)) {
        if (!e.is_regular_file()) continue;
        const auto rel = std::filesystem::relative(e.path(), dir);
        EXPECT_EQ(slurp(e.path()), slurp(dir2 / rel)) << rel;
    }
}

TEST(Scene, LoadFallsBackToPngWithoutSidecars) {
    const SceneDataset ds = tiny_dataset(8, 2, 1, 1);
    const auto dir = scratch_dir();
    save_dataset(ds, dir);
    std::filesystem::remove_all(dir / "images_f32");
    const SceneDataset back = load_dataset(dir);
    for (std::size_t i = 0; i < ds.views.size(); ++i) {
        for (std::size_t j = 0; j < ds.views[i].image.data.size(); ++j) {
            EXPECT_NEAR(back.views[i].image.data[j], ds.views[i].image.data[j], 0.5 / 255.0 + 1e-12);
        }
    }
}

TEST(Scene, LoadErrorsNameTheFile) {
    const SceneDataset ds = tiny_dataset(8, 2, 1, 1);
    const auto base = scratch_dir();

    auto fresh = [&](const std::string &tag) {
        const auto d = base / tag;
        save_dataset(ds, d);
        return d;
    };
    auto expect_parse_error = [](const std::filesystem::path &dir, const std::string &file_part) {
        try {
            load_dataset(dir);
            ADD_FAILURE() << "expected ParseError";
        } catch (const ParseError &e) {
            EXPECT_NE(e.file().find(file_part), std::string::npos) << e.file() << ": " << e.what();
        }
    };

    {
        const auto d = fresh("missing");
        std::filesystem::remove(d / "transforms_val.json");
        expect_parse_error(d, "transforms_val.json");
    }
    {
        const auto d = fresh("malformed");
        std::ofstream(d / "transforms_test.json") << "{ not json";
        expect_parse_error(d, "transforms_test.json");
    }
    {
        const auto d = fresh("nonrigid");
        rewrite_json(d / "transforms_train.json", [](nlohmann::json &j) {
            j["frames"][0]["transform_matrix"][0][0] = 1.7;
        });
        expect_parse_error(d, "transforms_train.json");
    }
    {
        const auto d = fresh("resolution");
        Image small(4, 4, 3);
        write_png((d / "images" / (ds.split("train")[1] + ".png")).string(), small);
        expect_parse_error(d, ds.split("train")[1] + ".png");
    }
    {
        const auto d = fresh("noimage");
        std::filesystem::remove(d / "images" / (ds.split("val")[0] + ".png"));
        expect_parse_error(d, ds.split("val")[0] + ".png");
    }
}

TEST(Scene, SubsampleKeepsPrefix) {
    const SceneDataset ds = tiny_dataset(8, 4, 2, 1);
    const SceneDataset s = subsample(ds, {{"train", 2}});
    ASSERT_EQ(s.split("train").size(), 2u);
    EXPECT_EQ(s.split("train")[0], ds.split("train")[0]);
    EXPECT_EQ(s.split("train")[1], ds.split("train")[1]);
    EXPECT_EQ(s.split("val"), ds.split("val"));
    EXPECT_EQ(s.views.size(), 5u);
    EXPECT_NO_THROW(s.validate());
    EXPECT_THROW(subsample(ds, {{"train", 5}}), UsageError);
}

TEST(Scene, PositionExtentCoversSamples) {
    const SceneDataset ds = tiny_dataset(8, 2, 1, 1);
    const double e = position_extent(ds);
    EXPECT_GT(e, 1.0);
    for (const auto &v : ds.views) {
        for (const auto &pr : rays_for_view(ds.intrinsics, v.pose, ds.t_near, ds.t_far)) {
            for (double t = ds.t_near; t <= ds.t_far; t += 0.05) {
                EXPECT_LE(pr.ray.at(t).cwiseAbs().maxCoeff(), e + 1e-12);
            }
        }
    }
}
