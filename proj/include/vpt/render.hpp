#pragma once

#include "vpt/autodiff.hpp"
#include "vpt/camera.hpp"
#include "vpt/field.hpp"
#include "vpt/image_io.hpp"
#include "vpt/parallel.hpp"
#include "vpt/rng.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <utility>
#include <vector>

namespace vpt {

struct RenderConfig {
    int n_coarse = 64;
    int n_fine = 0;
    bool perturb = true;
    bool white_background = true;

    void validate() const {
        if (n_coarse < 2) throw UsageError("render: n_coarse must be >= 2");
        if (n_fine < 0) throw UsageError("render: n_fine must be >= 0");
    }
};

inline constexpr double kImportanceEps = 1e-5;
inline constexpr double kDepthEps = 1e-10;

struct RenderResult {
    Vec3 rgb = Vec3::Zero();
    double depth = 0.0;
    bool valid = false;  // accumulated opacity >= 0.5
    std::vector<double> t;
    std::vector<double> weights;
    double t_final = 1.0;
};

// n equal bins over [t_near, t_far], one sample per bin: the midpoint, or a
// uniform draw inside the bin when perturbed.
inline std::vector<double> sample_stratified(double t_near, double t_far, int n, bool perturb, Rng *rng) {
    if (n < 2) throw UsageError("sample_stratified: n must be >= 2");
    if (!(t_near < t_far)) throw UsageError("sample_stratified: need t_near < t_far");
    if (perturb && !rng) throw UsageError("sample_stratified: perturb requires an rng");
    std::vector<double> t(static_cast<std::size_t>(n));
    const double h = (t_far - t_near) / n;
    for (int i = 0; i < n; ++i) {
        const double u = perturb ? rng->uniform() : 0.5;
        t[static_cast<std::size_t>(i)] = t_near + (i + u) * h;
    }
    return t;
}

inline std::vector<double> sample_stratified(const Ray &ray, int n, bool perturb, Rng *rng) {
    return sample_stratified(ray.t_near, ray.t_far, n, perturb, rng);
}

// Bin k of a coarse sample set spans [e_k, e_{k+1}] with interior edges at
// midpoints between samples and the outer edges at the ray bounds.
inline std::vector<double> sample_bin_edges(std::span<const double> t, double t_near, double t_far) {
    std::vector<double> e(t.size() + 1);
    e.front() = std::min(t_near, t.front());
    e.back() = std::max(t_far, t.back());
    for (std::size_t i = 1; i < t.size(); ++i) e[i] = 0.5 * (t[i - 1] + t[i]);
    return e;
}

// Inverse-CDF draw of n_fine samples from the piecewise-constant pdf
// proportional to (weights + eps), merged and sorted with t_coarse. Without
// an rng the quantiles (j + 0.5) / n_fine are used.
inline std::vector<double> sample_importance(std::span<const double> t_coarse, std::span<const double> weights,
                                             int n_fine, double t_near, double t_far, Rng *rng) {
    if (weights.size() != t_coarse.size()) throw UsageError("sample_importance: weights/t length mismatch");
    if (t_coarse.empty()) throw UsageError("sample_importance: no coarse samples");
    if (n_fine < 0) throw UsageError("sample_importance: n_fine must be >= 0");
    const std::size_t n = t_coarse.size();
    const auto edges = sample_bin_edges(t_coarse, t_near, t_far);
    std::vector<double> cdf(n + 1, 0.0);
    for (std::size_t k = 0; k < n; ++k) {
        if (!(weights[k] >= 0.0)) throw UsageError("sample_importance: weights must be >= 0");
        cdf[k + 1] = cdf[k] + weights[k] + kImportanceEps;
    }
    const double total = cdf[n];
    for (double &c : cdf) c /= total;
    cdf[n] = 1.0;

    std::vector<double> out(t_coarse.begin(), t_coarse.end());
    out.reserve(n + static_cast<std::size_t>(n_fine));
    for (int j = 0; j < n_fine; ++j) {
        const double u = rng ? rng->uniform() : (j + 0.5) / n_fine;
        auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
        std::size_t k = static_cast<std::size_t>(std::max<std::ptrdiff_t>(it - cdf.begin() - 1, 0));
        k = std::min(k, n - 1);
        const double span = cdf[k + 1] - cdf[k];
        const double f = span > 0.0 ? std::clamp((u - cdf[k]) / span, 0.0, 1.0) : 0.5;
        out.push_back(edges[k] + f * (edges[k + 1] - edges[k]));
    }
    std::sort(out.begin(), out.end());
    return out;
}

// Discrete compositing: delta_i = t_{i+1} - t_i, delta_last = t_far - t_last,
// w_i = T_i (1 - exp(-sigma_i delta_i)), T_i = exp(-sum_{j<i} sigma_j delta_j).
inline RenderResult composite(std::span<const Vec3> colors, std::span<const double> sigmas, std::span<const double> t,
                              double t_far, bool white_background) {
    const std::size_t n = t.size();
    if (colors.size() != n || sigmas.size() != n) throw UsageError("composite: input lengths differ");
    if (n == 0) throw UsageError("composite: no samples");
    for (std::size_t i = 0; i + 1 < n; ++i) {
        if (!(t[i + 1] >= t[i])) throw UsageError("composite: t values must be non-decreasing");
    }
    if (t_far < t[n - 1]) throw UsageError("composite: t_far precedes the last sample");
    RenderResult r;
    r.t.assign(t.begin(), t.end());
    r.weights.assign(n, 0.0);
    double acc = 0.0, sum_w = 0.0, sum_wt = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        if (!(sigmas[i] >= 0.0)) throw UsageError("composite: sigma must be >= 0");
        const double delta = (i + 1 < n ? t[i + 1] : t_far) - t[i];
        const double trans = std::exp(-acc);
        const double sd = sigmas[i] * delta;
        // Same expression as composite_tape, so both paths agree bit for bit.
        const double w = trans * (1.0 - std::exp(-sd));
        r.weights[i] = w;
        r.rgb += w * colors[i];
        sum_w += w;
        sum_wt += w * t[i];
        acc += sd;
    }
    r.t_final = std::exp(-acc);
    if (white_background) r.rgb += r.t_final * Vec3::Ones();
    r.depth = sum_w < kDepthEps ? t_far : sum_wt / std::max(sum_w, kDepthEps);
    r.valid = sum_w >= 0.5;
    return r;
}

// Differentiable compositing of R rays with S samples each. `sigma` is
// [R*S,1], `rgb` [R*S,3] (ray-major), `delta` holds the [R,S] step lengths.
// Returns ([R,3] colors, [R,S] weights).
inline std::pair<ad::Var, ad::Var> composite_tape(ad::Tape &tape, ad::Var sigma, ad::Var rgb, const Tensor &delta,
                                                  bool white_background) {
    const std::size_t R = delta.rows(), S = delta.cols();
    const ad::Var sd = tape.mul(tape.reshape(sigma, R, S), tape.constant(delta));
    const ad::Var trans = tape.exp(tape.neg(tape.cumsum_exclusive(sd)));
    const ad::Var alpha = tape.add_scalar(tape.neg(tape.exp(tape.neg(sd))), 1.0);
    const ad::Var w = tape.mul(trans, alpha);
    ad::Var c = tape.group_sum(tape.row_scale(rgb, tape.reshape(w, R * S, 1)), S);
    if (white_background) {
        const ad::Var tf = tape.exp(tape.neg(tape.row_sum(sd)));
        c = tape.add(c, tape.concat({tf, tf, tf}));
    }
    return {c, w};
}

// One ray of a batch.
struct RayTask {
    Ray ray;
    std::optional<Vec3> prompt;
    std::uint64_t seed = 0;  // used only when perturbing
};

struct TracedBatch {
    ad::Var coarse_rgb;                 // [R,3]
    std::optional<ad::Var> fine_rgb;    // [R,3]
    std::vector<RenderResult> coarse;   // plain per-ray results (values of the tape)
    std::vector<RenderResult> fine;
};

namespace detail {

inline Tensor step_lengths(const std::vector<std::vector<double>> &ts, const std::vector<RayTask> &rays) {
    const std::size_t R = ts.size(), S = ts.front().size();
    Tensor delta = Tensor::zeros(R, S);
    for (std::size_t r = 0; r < R; ++r) {
        for (std::size_t i = 0; i < S; ++i) {
            delta(r, i) = (i + 1 < S ? ts[r][i + 1] : rays[r].ray.t_far) - ts[r][i];
        }
    }
    return delta;
}

struct NetPass {
    ad::Var rgb;
    std::vector<RenderResult> results;
};

inline NetPass run_pass(ad::Tape &tape, const FieldArch &arch, int net, const std::vector<RayTask> &rays,
                        const std::vector<std::vector<double>> &ts, bool white_background) {
    const std::size_t R = rays.size(), S = ts.front().size();
    Tensor x = Tensor::zeros(R * S, 3), d = Tensor::zeros(R * S, 3);
    Tensor p = arch.prompted() ? Tensor::zeros(R * S, 3) : Tensor::zeros(0, 3);
    for (std::size_t r = 0; r < R; ++r) {
        const Ray &ray = rays[r].ray;
        if (arch.prompted() != rays[r].prompt.has_value()) {
            throw UsageError("ray prompt presence does not match the architecture's prompt site");
        }
        for (std::size_t i = 0; i < S; ++i) {
            const Vec3 pt = ray.at(ts[r][i]);
            const std::size_t row = r * S + i;
            for (int c = 0; c < 3; ++c) {
                x(row, c) = pt[c];
                d(row, c) = ray.direction[c];
                if (arch.prompted()) p(row, c) = (*rays[r].prompt)[c];
            }
        }
    }
    std::optional<ad::Var> pv;
    if (arch.prompted()) pv = tape.constant(std::move(p));
    const NetworkOutput out = eval_network(tape, arch, net, tape.constant(std::move(x)), tape.constant(std::move(d)), pv);
    const Tensor delta = step_lengths(ts, rays);
    auto [rgb, w] = composite_tape(tape, out.sigma, out.rgb, delta, white_background);

    NetPass pass{rgb, std::vector<RenderResult>(R)};
    const Tensor &wv = tape.value(w), &cv = tape.value(rgb), &sv = tape.value(out.sigma);
    for (std::size_t r = 0; r < R; ++r) {
        RenderResult &res = pass.results[r];
        res.t = ts[r];
        res.weights.resize(S);
        double sum_w = 0.0, sum_wt = 0.0, acc = 0.0;
        for (std::size_t i = 0; i < S; ++i) {
            res.weights[i] = wv(r, i);
            sum_w += wv(r, i);
            sum_wt += wv(r, i) * ts[r][i];
            acc += sv.values[r * S + i] * delta(r, i);
        }
        res.rgb = Vec3(cv(r, 0), cv(r, 1), cv(r, 2));
        res.t_final = std::exp(-acc);
        res.depth = sum_w < kDepthEps ? rays[r].ray.t_far : sum_wt / std::max(sum_w, kDepthEps);
        res.valid = sum_w >= 0.5;
    }
    return pass;
}

} // namespace detail

// Coarse pass over stratified samples, then (n_fine > 0) a fine pass through
// the fine network over the merged sample set. Sample placement is a constant
// of the tape; gradients flow through the network outputs only.
inline TracedBatch trace_batch(ad::Tape &tape, const FieldArch &arch, const std::vector<RayTask> &rays,
                               const RenderConfig &cfg) {
    cfg.validate();
    if (rays.empty()) throw UsageError("trace_batch: no rays");
    if (cfg.n_fine > 0 && !arch.hierarchical) throw UsageError("n_fine > 0 requires a hierarchical architecture");
    const std::size_t R = rays.size();
    std::vector<Rng> rngs;
    rngs.reserve(R);
    for (const auto &r : rays) rngs.emplace_back(r.seed);

    std::vector<std::vector<double>> tc(R);
    for (std::size_t r = 0; r < R; ++r) tc[r] = sample_stratified(rays[r].ray, cfg.n_coarse, cfg.perturb, &rngs[r]);
    detail::NetPass coarse = detail::run_pass(tape, arch, 0, rays, tc, cfg.white_background);

    TracedBatch out{coarse.rgb, std::nullopt, std::move(coarse.results), {}};
    if (cfg.n_fine > 0) {
        std::vector<std::vector<double>> tf(R);
        for (std::size_t r = 0; r < R; ++r) {
            tf[r] = sample_importance(tc[r], out.coarse[r].weights, cfg.n_fine, rays[r].ray.t_near, rays[r].ray.t_far,
                                      cfg.perturb ? &rngs[r] : nullptr);
        }
        detail::NetPass fine = detail::run_pass(tape, arch, 1, rays, tf, cfg.white_background);
        out.fine_rgb = fine.rgb;
        out.fine = std::move(fine.results);
    }
    return out;
}

inline std::pair<RenderResult, std::optional<RenderResult>> render_ray(const ParamStore &params, const FieldArch &arch,
                                                                       const Ray &ray, const RenderConfig &cfg,
                                                                       std::optional<Vec3> prompt_rgb = std::nullopt,
                                                                       std::uint64_t seed = 0) {
    ad::Tape tape(&params);
    TracedBatch b = trace_batch(tape, arch, {RayTask{ray, prompt_rgb, seed}}, cfg);
    std::optional<RenderResult> fine;
    if (!b.fine.empty()) fine = std::move(b.fine[0]);
    return {std::move(b.coarse[0]), std::move(fine)};
}

struct ViewRender {
    Image rgb;    // H x W x 3
    Image depth;  // H x W x 1
    std::vector<std::uint8_t> valid;
};

// Rays per tape when rendering full views. Fixed so the floating-point path
// does not depend on the worker count.
inline constexpr std::size_t kRenderChunk = 128;

inline ViewRender render_view(const ParamStore &params, const FieldArch &arch, const CameraIntrinsics &k,
                              const Mat4 &pose, double t_near, double t_far, RenderConfig cfg,
                              const Image *prompt_image = nullptr, int workers = 1) {
    k.validate();
    if (prompt_image && (prompt_image->width != k.width || prompt_image->height != k.height ||
                         prompt_image->channels != 3)) {
        throw UsageError("render_view: prompt image is " + std::to_string(prompt_image->width) + "x" +
                         std::to_string(prompt_image->height) + ", view is " + std::to_string(k.width) + "x" +
                         std::to_string(k.height));
    }
    if (arch.prompted() != (prompt_image != nullptr)) {
        throw UsageError(arch.prompted() ? "render_view: prompted architecture needs a prompt image"
                                         : "render_view: prompt image given to an unprompted architecture");
    }
    cfg.perturb = false;
    const std::size_t n = static_cast<std::size_t>(k.width) * k.height;
    ViewRender out{Image(k.width, k.height, 3), Image(k.width, k.height, 1), std::vector<std::uint8_t>(n, 0)};
    const std::size_t chunks = (n + kRenderChunk - 1) / kRenderChunk;
    parallel_for(chunks, workers, [&](std::size_t c) {
        const std::size_t lo = c * kRenderChunk, hi = std::min(n, lo + kRenderChunk);
        std::vector<RayTask> rays;
        rays.reserve(hi - lo);
        for (std::size_t i = lo; i < hi; ++i) {
            const int u = static_cast<int>(i % k.width), v = static_cast<int>(i / k.width);
            RayTask t{ray_for_pixel(k, pose, u, v, t_near, t_far), std::nullopt, 0};
            if (prompt_image) t.prompt = Vec3(prompt_image->at(u, v, 0), prompt_image->at(u, v, 1), prompt_image->at(u, v, 2));
            rays.push_back(std::move(t));
        }
        ad::Tape tape(&params);
        const TracedBatch b = trace_batch(tape, arch, rays, cfg);
        const auto &res = b.fine.empty() ? b.coarse : b.fine;
        for (std::size_t i = lo; i < hi; ++i) {
            const RenderResult &r = res[i - lo];
            for (int ch = 0; ch < 3; ++ch) out.rgb.data[i * 3 + ch] = r.rgb[ch];
            out.depth.data[i] = r.depth;
            out.valid[i] = r.valid ? 1 : 0;
        }
    });
    return out;
}

} // namespace vpt
