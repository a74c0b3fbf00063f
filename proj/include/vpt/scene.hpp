#pragma once

#include "vpt/camera.hpp"
#include "vpt/error.hpp"
#include "vpt/hash.hpp"
#include "vpt/image_io.hpp"
#include "vpt/parallel.hpp"
#include "vpt/rng.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

namespace vpt {

// ---------------------------------------------------------------------------
// Analytic radiance fields
// ---------------------------------------------------------------------------

// C2 step from 0 (x <= 0) to 1 (x >= 1).
inline double smootherstep(double x) {
    x = std::clamp(x, 0.0, 1.0);
    return x * x * x * (x * (x * 6.0 - 15.0) + 10.0);
}

// Stripe texture plus a view-dependent tint. Channel k is
// base_k + stripe_amp_k * sin(stripe_freq_k * <axis_k, x> + phase_k) + tint_k * <d, light>.
struct Appearance {
    Vec3 base{0.5, 0.5, 0.5};
    Vec3 stripe_amp = Vec3::Zero();
    Vec3 stripe_freq = Vec3::Zero();
    Vec3 phase = Vec3::Zero();
    std::array<Vec3, 3> axis{Vec3::UnitX(), Vec3::UnitY(), Vec3::UnitZ()};
    Vec3 tint = Vec3::Zero();
    Vec3 light = Vec3::UnitZ();

    Vec3 eval(const Vec3 &x, const Vec3 &d) const {
        Vec3 c;
        const double view = d.dot(light);
        for (int k = 0; k < 3; ++k) {
            c[k] = base[k] + stripe_amp[k] * std::sin(stripe_freq[k] * axis[k].dot(x) + phase[k]) + tint[k] * view;
        }
        return c.cwiseMax(0.0).cwiseMin(1.0);
    }
};

// Density `peak` inside, falling to zero across a shell of half-width `shell`
// around the nominal surface.
struct SoftSphere {
    Vec3 center = Vec3::Zero();
    double radius = 0.5;
    double shell = 0.05;
    double peak = 50.0;
    Appearance look;

    double density(const Vec3 &x) const {
        const double r = (x - center).norm();
        return peak * (1.0 - smootherstep((r - (radius - shell)) / (2.0 * shell)));
    }
};

struct SoftBox {
    Vec3 center = Vec3::Zero();
    Vec3 half = Vec3(0.3, 0.3, 0.3);
    double shell = 0.05;
    double peak = 50.0;
    Appearance look;

    double density(const Vec3 &x) const {
        double s = peak;
        for (int a = 0; a < 3; ++a) {
            const double q = std::fabs(x[a] - center[a]) - half[a];
            s *= 1.0 - smootherstep((q + shell) / (2.0 * shell));
        }
        return s;
    }
};

// Closed-form ground truth: density and color are total functions, zero
// density outside the bounding sphere. Where primitives overlap the color is
// their density-weighted blend.
struct AnalyticField {
    std::string name;
    std::vector<SoftSphere> spheres;
    std::vector<SoftBox> boxes;
    double bound_radius = 1.0;

    double density(const Vec3 &x) const {
        if (x.squaredNorm() > bound_radius * bound_radius) return 0.0;
        double s = 0.0;
        for (const auto &p : spheres) s += p.density(x);
        for (const auto &p : boxes) s += p.density(x);
        return s;
    }

    Vec3 color(const Vec3 &x, const Vec3 &d) const {
        double total = 0.0;
        Vec3 acc = Vec3::Zero();
        auto blend = [&](double w, const Appearance &a) {
            if (w > 0.0) {
                acc += w * a.eval(x, d);
                total += w;
            }
        };
        for (const auto &p : spheres) blend(p.density(x), p.look);
        for (const auto &p : boxes) blend(p.density(x), p.look);
        if (total <= 0.0) return Vec3::Constant(0.5);
        return acc / total;
    }
};

inline const std::vector<std::string> &builtin_scene_names() {
    static const std::vector<std::string> names{"sphere", "boxes", "wall", "empty"};
    return names;
}

inline AnalyticField builtin_scene(const std::string &name) {
    AnalyticField f;
    f.name = name;
    f.bound_radius = 1.0;
    if (name == "sphere") {
        SoftSphere s;
        s.radius = 0.65;
        s.shell = 0.06;
        s.peak = 60.0;
        s.look.base = Vec3(0.55, 0.45, 0.40);
        s.look.stripe_amp = Vec3(0.25, 0.22, 0.20);
        s.look.stripe_freq = Vec3(7.0, 9.0, 5.0);
        s.look.phase = Vec3(0.3, 1.1, 2.0);
        s.look.axis = {Vec3(1, 0, 0), Vec3(0, 0.6, 0.8), Vec3(0.8, -0.6, 0)};
        s.look.tint = Vec3(0.12, 0.06, -0.10);
        s.look.light = Vec3(0.48, 0.6, 0.64);
        f.spheres.push_back(s);
    } else if (name == "boxes") {
        SoftBox b;
        b.center = Vec3(-0.15, 0.1, -0.1);
        b.half = Vec3(0.35, 0.3, 0.3);
        b.shell = 0.05;
        b.peak = 60.0;
        b.look.base = Vec3(0.3, 0.55, 0.7);
        b.look.stripe_amp = Vec3(0.15, 0.15, 0.1);
        b.look.stripe_freq = Vec3(8.0, 6.0, 4.0);
        b.look.tint = Vec3(0.05, 0.1, 0.08);
        f.boxes.push_back(b);
        SoftSphere s;
        s.center = Vec3(0.35, -0.25, 0.2);
        s.radius = 0.3;
        s.shell = 0.05;
        s.peak = 60.0;
        s.look.base = Vec3(0.8, 0.35, 0.3);
        s.look.stripe_amp = Vec3(0.1, 0.1, 0.1);
        s.look.stripe_freq = Vec3(10.0, 10.0, 10.0);
        s.look.tint = Vec3(0.1, 0.0, -0.05);
        f.spheres.push_back(s);
    } else if (name == "wall") {
        SoftBox b;
        b.half = Vec3(0.6, 0.6, 0.1);
        b.shell = 0.03;
        b.peak = 80.0;
        b.look.base = Vec3(0.7, 0.7, 0.6);
        b.look.stripe_amp = Vec3(0.2, 0.1, 0.1);
        b.look.stripe_freq = Vec3(6.0, 6.0, 6.0);
        f.boxes.push_back(b);
    } else if (name != "empty") {
        throw UsageError("unknown scene '" + name + "'");
    }
    return f;
}

// ---------------------------------------------------------------------------
// Oracle renderer
// ---------------------------------------------------------------------------

struct OracleRender {
    Image rgb;    // H x W x 3
    Image depth;  // H x W x 1, t_far where the ray is empty or mostly transparent
    std::vector<std::uint8_t> valid;  // accumulated opacity >= 0.5
};

// Midpoint-rule quadrature of the volume rendering integral along one ray:
// n equal steps over [t_near, t_far], field sampled at step centers,
// transmittance accumulated as a running product of per-step exp(-sigma h).
struct OracleRay {
    Vec3 rgb = Vec3::Zero();
    double depth = 0.0;
    double opacity = 0.0;
};

inline OracleRay oracle_ray(const AnalyticField &field, const Ray &ray, int n, bool white_background = true) {
    const double h = (ray.t_far - ray.t_near) / n;
    double trans = 1.0, acc = 0.0, tsum = 0.0;
    Vec3 c = Vec3::Zero();
    for (int k = 0; k < n; ++k) {
        const double t = ray.t_near + (k + 0.5) * h;
        const Vec3 x = ray.at(t);
        const double sigma = field.density(x);
        if (sigma <= 0.0) continue;
        const double step_t = std::exp(-sigma * h);
        const double w = trans * (1.0 - step_t);
        c += w * field.color(x, ray.direction);
        acc += w;
        tsum += w * t;
        trans *= step_t;
    }
    OracleRay out;
    out.rgb = c + (white_background ? trans : 0.0) * Vec3::Ones();
    out.opacity = acc;
    out.depth = acc > 1e-10 ? tsum / acc : ray.t_far;
    return out;
}

inline OracleRender oracle_render(const AnalyticField &field, const CameraIntrinsics &k, const Mat4 &pose,
                                  double t_near, double t_far, int quadrature_n, int workers = 1) {
    if (quadrature_n < 256) throw UsageError("oracle_render: quadrature_n must be >= 256");
    k.validate();
    OracleRender out{Image(k.width, k.height, 3), Image(k.width, k.height, 1),
                     std::vector<std::uint8_t>(static_cast<std::size_t>(k.width) * k.height, 0)};
    parallel_for(static_cast<std::size_t>(k.height), workers, [&](std::size_t row) {
        const int v = static_cast<int>(row);
        for (int u = 0; u < k.width; ++u) {
            const OracleRay r = oracle_ray(field, ray_for_pixel(k, pose, u, v, t_near, t_far), quadrature_n);
            for (int c = 0; c < 3; ++c) out.rgb.at(u, v, c) = r.rgb[c];
            const bool ok = r.opacity >= 0.5;
            out.valid[static_cast<std::size_t>(v) * k.width + u] = ok ? 1 : 0;
            out.depth.at(u, v) = ok ? r.depth : t_far;
        }
    });
    return out;
}

// ---------------------------------------------------------------------------
// Datasets
// ---------------------------------------------------------------------------

inline const std::array<std::string, 3> &split_names() {
    static const std::array<std::string, 3> names{"train", "val", "test"};
    return names;
}

struct View {
    std::string id;
    Mat4 pose = Mat4::Identity();
    Image image;                 // H x W x 3 in [0, 1]
    std::optional<Image> depth;  // H x W x 1; t_far marks invalid pixels

    friend bool operator==(const View &a, const View &b) {
        return a.id == b.id && a.pose == b.pose && a.image == b.image && a.depth == b.depth;
    }
};

struct SceneMeta {
    std::string scene;
    std::uint64_t seed = 0;
    int quadrature_n = 0;
    double bound_radius = 1.0;
    bool white_background = true;

    friend bool operator==(const SceneMeta &, const SceneMeta &) = default;
};

struct SceneDataset {
    CameraIntrinsics intrinsics;
    std::vector<View> views;
    std::map<std::string, std::vector<std::string>> splits;
    double t_near = 2.0;
    double t_far = 6.0;
    SceneMeta meta;

    const View &view(const std::string &id) const {
        for (const auto &v : views) {
            if (v.id == id) return v;
        }
        throw RangeError("unknown view '" + id + "'");
    }

    std::size_t view_index(const std::string &id) const {
        for (std::size_t i = 0; i < views.size(); ++i) {
            if (views[i].id == id) return i;
        }
        throw RangeError("unknown view '" + id + "'");
    }

    const std::vector<std::string> &split(const std::string &name) const {
        static const std::vector<std::string> none;
        auto it = splits.find(name);
        return it == splits.end() ? none : it->second;
    }

    std::string split_of(const std::string &id) const {
        for (const auto &[name, ids] : splits) {
            if (std::find(ids.begin(), ids.end(), id) != ids.end()) return name;
        }
        throw RangeError("view '" + id + "' is in no split");
    }

    void validate() const {
        intrinsics.validate();
        if (!(t_near > 0.0 && t_near < t_far)) throw UsageError("dataset bounds must satisfy 0 < t_near < t_far");
        std::set<std::string> seen;
        for (const auto &[name, ids] : splits) {
            for (const auto &id : ids) {
                if (!seen.insert(id).second) throw UsageError("view '" + id + "' appears in more than one split");
                view(id);
            }
        }
        for (const auto &v : views) {
            if (!seen.contains(v.id)) throw UsageError("view '" + v.id + "' is in no split");
            if (v.image.width != intrinsics.width || v.image.height != intrinsics.height || v.image.channels != 3) {
                throw UsageError("view '" + v.id + "' resolution differs from the dataset");
            }
        }
    }

    friend bool operator==(const SceneDataset &a, const SceneDataset &b) {
        return a.intrinsics == b.intrinsics && a.views == b.views && a.splits == b.splits && a.t_near == b.t_near &&
               a.t_far == b.t_far && a.meta == b.meta;
    }
};

// Content hash over everything that influences training: bounds, camera,
// splits, poses and the float32 pixel values.
inline std::string dataset_hash(const SceneDataset &ds) {
    Sha256 h;
    h.update("vpt-dataset-v1");
    h.update_pod(ds.intrinsics.width).update_pod(ds.intrinsics.height).update_pod(ds.intrinsics.fov_x);
    h.update_pod(ds.t_near).update_pod(ds.t_far).update_pod(ds.meta.bound_radius);
    for (const auto &[name, ids] : ds.splits) {
        h.update(name);
        for (const auto &id : ids) {
            const View &v = ds.view(id);
            h.update(id);
            h.update(v.pose.data(), sizeof(double) * 16);
            for (double d : v.image.data) h.update_pod(static_cast<float>(d));
            if (v.depth) {
                for (double d : v.depth->data) h.update_pod(static_cast<float>(d));
            }
        }
    }
    return h.hex();
}

// Largest |coordinate| reached by any ray segment [t_near, t_far] of any view.
// Coordinates are linear in t, so checking both endpoints of every pixel ray suffices.
inline double position_extent(const SceneDataset &ds) {
    double e = 0.0;
    for (const auto &v : ds.views) {
        for (const auto &pr : rays_for_view(ds.intrinsics, v.pose, ds.t_near, ds.t_far)) {
            e = std::max({e, pr.ray.at(ds.t_near).cwiseAbs().maxCoeff(), pr.ray.at(ds.t_far).cwiseAbs().maxCoeff()});
        }
    }
    return e;
}

// Keeps the first n views of each split (order as listed). Used for sparse-view runs.
inline SceneDataset subsample(const SceneDataset &ds, const std::map<std::string, std::size_t> &keep) {
    SceneDataset out = ds;
    out.views.clear();
    for (auto &[name, ids] : out.splits) {
        auto it = keep.find(name);
        if (it != keep.end()) {
            if (it->second < 1 || it->second > ids.size()) {
                throw UsageError("cannot keep " + std::to_string(it->second) + " of " + std::to_string(ids.size()) +
                                 " views in split '" + name + "'");
            }
            ids.resize(it->second);
        }
    }
    for (const auto &v : ds.views) {
        for (const auto &[name, ids] : out.splits) {
            if (std::find(ids.begin(), ids.end(), v.id) != ids.end()) out.views.push_back(v);
        }
    }
    return out;
}

struct SceneSpec {
    std::string scene = "sphere";
    std::size_t n_train = 10;
    std::size_t n_val = 3;
    std::size_t n_test = 3;
    int resolution = 32;
    std::uint64_t seed = 1;
    double fov_x = 0.7;
    double camera_radius = 2.8;
    int quadrature_n = 512;
    // Elevation range of cameras on the upper hemisphere, radians.
    double min_elevation = 0.15;
    double max_elevation = 1.05;
};

// Camera pose on the upper hemisphere of radius `radius`, looking at the origin.
inline Mat4 hemisphere_pose(double radius, double azimuth, double elevation) {
    const Vec3 eye(radius * std::cos(elevation) * std::cos(azimuth), radius * std::cos(elevation) * std::sin(azimuth),
                   radius * std::sin(elevation));
    return look_at(eye, Vec3::Zero());
}

inline SceneDataset gen_scene(const SceneSpec &spec, int workers = 1) {
    const AnalyticField field = builtin_scene(spec.scene);
    if (spec.resolution < 8) throw UsageError("gen_scene: resolution must be >= 8");
    if (spec.n_train < 1 || spec.n_val < 1 || spec.n_test < 1) throw UsageError("gen_scene: each split needs >= 1 view");

    SceneDataset ds;
    ds.intrinsics = {spec.resolution, spec.resolution, spec.fov_x};
    ds.t_near = spec.camera_radius - field.bound_radius;
    ds.t_far = spec.camera_radius + field.bound_radius;
    ds.meta = {spec.scene, spec.seed, spec.quadrature_n, field.bound_radius, true};

    const std::array<std::size_t, 3> counts{spec.n_train, spec.n_val, spec.n_test};
    for (std::size_t s = 0; s < 3; ++s) {
        const std::string &split = split_names()[s];
        auto &ids = ds.splits[split];
        for (std::size_t i = 0; i < counts[s]; ++i) {
            Rng rng(derive_seed({spec.seed, s, i}));
            const double az = rng.uniform(0.0, 2.0 * std::numbers::pi);
            const double el = rng.uniform(spec.min_elevation, spec.max_elevation);
            View v;
            char buf[32];
            std::snprintf(buf, sizeof buf, "%s_%03zu", split.c_str(), i);
            v.id = buf;
            v.pose = hemisphere_pose(spec.camera_radius, az, el);
            OracleRender r = oracle_render(field, ds.intrinsics, v.pose, ds.t_near, ds.t_far, spec.quadrature_n, workers);
            quantize_to_f32(r.rgb);
            quantize_to_f32(r.depth);
            v.image = std::move(r.rgb);
            v.depth = std::move(r.depth);
            ids.push_back(v.id);
            ds.views.push_back(std::move(v));
        }
    }
    return ds;
}

namespace detail {

inline nlohmann::json read_json(const std::filesystem::path &p) {
    std::ifstream in(p);
    if (!in) throw ParseError(p.string(), "missing file");
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception &e) {
        throw ParseError(p.string(), std::string("malformed JSON: ") + e.what());
    }
}

inline void write_json(const std::filesystem::path &p, const nlohmann::json &j) {
    ensure_parent(p);
    std::ofstream out(p, std::ios::trunc);
    if (!out) throw Error("cannot write " + p.string());
    out << j.dump(2) << '\n';
}

inline nlohmann::json pose_to_json(const Mat4 &m) {
    nlohmann::json rows = nlohmann::json::array();
    for (int r = 0; r < 4; ++r) rows.push_back({m(r, 0), m(r, 1), m(r, 2), m(r, 3)});
    return rows;
}

inline Mat4 pose_from_json(const nlohmann::json &j, const std::string &file) {
    if (!j.is_array() || j.size() != 4) throw ParseError(file, "transform_matrix must be 4x4");
    Mat4 m;
    for (int r = 0; r < 4; ++r) {
        if (!j[r].is_array() || j[r].size() != 4) throw ParseError(file, "transform_matrix must be 4x4");
        for (int c = 0; c < 4; ++c) m(r, c) = j[r][c].get<double>();
    }
    return m;
}

} // namespace detail

// Writes the blender-style layout: transforms_{split}.json, images/*.png,
// images_f32/*.bin, depth_f32/*.bin and scene.meta.json.
inline void save_dataset(const SceneDataset &ds, const std::filesystem::path &dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    for (const auto &split : split_names()) {
        nlohmann::json t;
        t["camera_angle_x"] = ds.intrinsics.fov_x;
        t["frames"] = nlohmann::json::array();
        for (const auto &id : ds.split(split)) {
            const View &v = ds.view(id);
            t["frames"].push_back({{"file_path", "./images/" + id}, {"transform_matrix", detail::pose_to_json(v.pose)}});
            write_png((dir / "images" / (id + ".png")).string(), v.image);
            write_f32((dir / "images_f32" / (id + ".bin")).string(), v.image);
            if (v.depth) write_f32((dir / "depth_f32" / (id + ".bin")).string(), *v.depth);
        }
        detail::write_json(dir / ("transforms_" + split + ".json"), t);
    }
    nlohmann::json meta{{"width", ds.intrinsics.width},
                        {"height", ds.intrinsics.height},
                        {"t_near", ds.t_near},
                        {"t_far", ds.t_far},
                        {"bound_radius", ds.meta.bound_radius},
                        {"seed", ds.meta.seed},
                        {"scene", ds.meta.scene},
                        {"quadrature_n", ds.meta.quadrature_n},
                        {"white_background", ds.meta.white_background}};
    detail::write_json(dir / "scene.meta.json", meta);
}

inline SceneDataset load_dataset(const std::filesystem::path &dir) {
    namespace fs = std::filesystem;
    SceneDataset ds;
    std::optional<int> meta_w, meta_h;
    const fs::path meta_path = dir / "scene.meta.json";
    if (fs::exists(meta_path)) {
        const auto m = detail::read_json(meta_path);
        try {
            meta_w = m.at("width").get<int>();
            meta_h = m.at("height").get<int>();
            ds.t_near = m.at("t_near").get<double>();
            ds.t_far = m.at("t_far").get<double>();
            ds.meta.bound_radius = m.value("bound_radius", 1.0);
            ds.meta.seed = m.value("seed", std::uint64_t{0});
            ds.meta.scene = m.value("scene", std::string());
            ds.meta.quadrature_n = m.value("quadrature_n", 0);
            ds.meta.white_background = m.value("white_background", true);
        } catch (const nlohmann::json::exception &e) {
            throw ParseError(meta_path.string(), std::string("bad field: ") + e.what());
        }
    } else {
        ds.meta.bound_radius = 1.5;
    }

    std::optional<double> fov;
    for (const auto &split : split_names()) {
        const fs::path tp = dir / ("transforms_" + split + ".json");
        const std::string file = tp.string();
        const auto t = detail::read_json(tp);
        if (!t.contains("camera_angle_x") || !t["camera_angle_x"].is_number()) {
            throw ParseError(file, "missing camera_angle_x");
        }
        const double f = t["camera_angle_x"].get<double>();
        if (fov && *fov != f) throw ParseError(file, "camera_angle_x differs between splits");
        fov = f;
        if (!t.contains("frames") || !t["frames"].is_array()) throw ParseError(file, "missing frames array");
        auto &ids = ds.splits[split];
        std::size_t k = 0;
        for (const auto &fr : t["frames"]) {
            if (!fr.contains("file_path") || !fr["file_path"].is_string()) {
                throw ParseError(file, "frame " + std::to_string(k) + ": missing file_path");
            }
            View v;
            const fs::path rel = fr["file_path"].get<std::string>();
            v.id = rel.stem().string();
            try {
                v.pose = detail::pose_from_json(fr.at("transform_matrix"), file);
            } catch (const nlohmann::json::exception &e) {
                throw ParseError(file, "frame " + std::to_string(k) + ": " + e.what());
            }
            if (!is_rigid(v.pose)) {
                throw ParseError(file, "frame " + std::to_string(k) + " ('" + v.id + "'): pose is not a rigid transform");
            }
            fs::path png = dir / rel;
            if (!png.has_extension()) png += ".png";
            if (!fs::exists(png)) throw ParseError(png.string(), "referenced image is missing");
            const auto [pw, ph] = png_size(png.string());
            if (!meta_w) {
                meta_w = pw;
                meta_h = ph;
            }
            if (pw != *meta_w || ph != *meta_h) {
                throw ParseError(png.string(), "resolution " + std::to_string(pw) + "x" + std::to_string(ph) +
                                                   " differs from " + std::to_string(*meta_w) + "x" +
                                                   std::to_string(*meta_h));
            }
            const fs::path f32 = dir / "images_f32" / (v.id + ".bin");
            v.image = fs::exists(f32) ? read_f32(f32.string(), *meta_w, *meta_h, 3) : read_png(png.string());
            for (double d : v.image.data) {
                if (!(d >= 0.0 && d <= 1.0)) throw ParseError(f32.string(), "pixel value outside [0, 1]");
            }
            const fs::path dp = dir / "depth_f32" / (v.id + ".bin");
            if (fs::exists(dp)) v.depth = read_f32(dp.string(), *meta_w, *meta_h, 1);
            ids.push_back(v.id);
            ds.views.push_back(std::move(v));
            ++k;
        }
    }
    ds.intrinsics = {meta_w.value_or(0), meta_h.value_or(0), fov.value_or(0.0)};
    try {
        ds.validate();
    } catch (const Error &e) {
        throw ParseError(dir.string(), e.what());
    }
    return ds;
}

} // namespace vpt
