#pragma once

#include "vpt/error.hpp"
#include "vpt/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

namespace vpt {

inline constexpr double kPsnrCap = 100.0;

namespace detail {

inline void require_same_shape(const Image &a, const Image &b, const char *what) {
    if (!a.same_shape(b)) {
        throw ShapeError(std::string(what) + ": image shapes differ (" + std::to_string(a.width) + "x" +
                         std::to_string(a.height) + "x" + std::to_string(a.channels) + " vs " +
                         std::to_string(b.width) + "x" + std::to_string(b.height) + "x" +
                         std::to_string(b.channels) + ")");
    }
}

} // namespace detail

inline double mse(const Image &a, const Image &b) {
    detail::require_same_shape(a, b, "mse");
    if (a.data.empty()) throw UsageError("mse: empty images");
    double s = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        const double d = a.data[i] - b.data[i];
        s += d * d;
    }
    return s / static_cast<double>(a.data.size());
}

// Peak 1.0; a zero error reports the cap.
inline double psnr(const Image &a, const Image &b) {
    const double m = mse(a, b);
    if (m <= 0.0) return kPsnrCap;
    return std::min(kPsnrCap, -10.0 * std::log10(m));
}

// ITU-R 601 luma as an H x W x 1 image; single-channel input passes through.
inline Image luma(const Image &img) {
    if (img.channels == 1) return img;
    if (img.channels != 3) throw UsageError("luma: 1 or 3 channels required");
    Image out(img.width, img.height, 1);
    for (std::size_t i = 0; i < img.pixel_count(); ++i) {
        out.data[i] = 0.299 * img.data[i * 3] + 0.587 * img.data[i * 3 + 1] + 0.114 * img.data[i * 3 + 2];
    }
    return out;
}

struct SsimParams {
    int window = 11;
    double sigma = 1.5;
    double k1 = 0.01;
    double k2 = 0.03;
    double range = 1.0;
};

inline std::vector<double> gaussian_window_1d(int size, double sigma) {
    std::vector<double> g(static_cast<std::size_t>(size));
    const double c = 0.5 * (size - 1);
    for (int i = 0; i < size; ++i) g[static_cast<std::size_t>(i)] = std::exp(-0.5 * (i - c) * (i - c) / (sigma * sigma));
    const double s = std::accumulate(g.begin(), g.end(), 0.0);
    for (double &v : g) v /= s;
    return g;
}

// Mean local SSIM on luma over every window position fully inside the image,
// using a separable Gaussian window.
inline double ssim(const Image &a, const Image &b, const SsimParams &p = {}) {
    detail::require_same_shape(a, b, "ssim");
    if (a.width < p.window || a.height < p.window) {
        throw UsageError("ssim: image " + std::to_string(a.width) + "x" + std::to_string(a.height) +
                         " is smaller than the " + std::to_string(p.window) + "x" + std::to_string(p.window) +
                         " window");
    }
    const Image x = luma(a), y = luma(b);
    const int W = a.width, H = a.height, K = p.window;
    const int ow = W - K + 1, oh = H - K + 1;
    const auto g = gaussian_window_1d(K, p.sigma);
    const double c1 = (p.k1 * p.range) * (p.k1 * p.range), c2 = (p.k2 * p.range) * (p.k2 * p.range);

    // Horizontal pass for the five moment images, then vertical.
    const std::size_t hsz = static_cast<std::size_t>(ow) * H;
    std::vector<double> hx(hsz), hy(hsz), hxx(hsz), hyy(hsz), hxy(hsz);
    for (int v = 0; v < H; ++v) {
        for (int u = 0; u < ow; ++u) {
            double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
            for (int k = 0; k < K; ++k) {
                const double wx = x.at(u + k, v), wy = y.at(u + k, v), gk = g[static_cast<std::size_t>(k)];
                sx += gk * wx;
                sy += gk * wy;
                sxx += gk * (wx * wx);
                syy += gk * (wy * wy);
                sxy += gk * (wx * wy);
            }
            const std::size_t i = static_cast<std::size_t>(v) * ow + u;
            hx[i] = sx, hy[i] = sy, hxx[i] = sxx, hyy[i] = syy, hxy[i] = sxy;
        }
    }
    double total = 0.0;
    for (int v = 0; v < oh; ++v) {
        for (int u = 0; u < ow; ++u) {
            double mx = 0, my = 0, exx = 0, eyy = 0, exy = 0;
            for (int k = 0; k < K; ++k) {
                const std::size_t i = static_cast<std::size_t>(v + k) * ow + u;
                const double gk = g[static_cast<std::size_t>(k)];
                mx += gk * hx[i];
                my += gk * hy[i];
                exx += gk * hxx[i];
                eyy += gk * hyy[i];
                exy += gk * hxy[i];
            }
            const double vx = exx - mx * mx, vy = eyy - my * my, cxy = exy - mx * my;
            total += ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
        }
    }
    return total / (static_cast<double>(ow) * oh);
}

// Mean squared difference over pixels where mask != 0.
inline double depth_mse(const Image &pred, const Image &gt, const std::vector<std::uint8_t> &mask) {
    detail::require_same_shape(pred, gt, "depth_mse");
    if (pred.channels != 1) throw UsageError("depth_mse: depth maps must have one channel");
    if (mask.size() != pred.pixel_count()) throw ShapeError("depth_mse: mask size differs from the depth map");
    double s = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < mask.size(); ++i) {
        if (!mask[i]) continue;
        const double d = pred.data[i] - gt.data[i];
        s += d * d;
        ++n;
    }
    if (n == 0) throw UsageError("depth_mse: validity mask is empty");
    return s / static_cast<double>(n);
}

// Ground-truth depth files mark invalid pixels with t_far.
inline std::vector<std::uint8_t> depth_mask(const Image &gt_depth, double t_far) {
    std::vector<std::uint8_t> m(gt_depth.pixel_count());
    for (std::size_t i = 0; i < m.size(); ++i) m[i] = gt_depth.data[i] < static_cast<float>(t_far) ? 1 : 0;
    return m;
}

struct ViewMetrics {
    std::string view_id;
    double psnr = 0.0;
    double ssim = 0.0;
    std::optional<double> depth_mse;
};

struct MetricReport {
    std::vector<ViewMetrics> views;

    double mean_psnr() const { return mean([](const ViewMetrics &v) { return v.psnr; }); }
    double mean_ssim() const { return mean([](const ViewMetrics &v) { return v.ssim; }); }
    std::optional<double> mean_depth_mse() const {
        double s = 0.0;
        std::size_t n = 0;
        for (const auto &v : views) {
            if (v.depth_mse) {
                s += *v.depth_mse;
                ++n;
            }
        }
        if (n == 0) return std::nullopt;
        return s / static_cast<double>(n);
    }

private:
    template <class F>
    double mean(F f) const {
        if (views.empty()) throw UsageError("metric report has no views");
        double s = 0.0;
        for (const auto &v : views) s += f(v);
        return s / static_cast<double>(views.size());
    }
};

} // namespace vpt
