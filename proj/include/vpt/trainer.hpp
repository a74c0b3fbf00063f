#pragma once

#include "vpt/autodiff.hpp"
#include "vpt/field.hpp"
#include "vpt/metrics.hpp"
#include "vpt/parallel.hpp"
#include "vpt/prompt_bank.hpp"
#include "vpt/render.hpp"
#include "vpt/rng.hpp"
#include "vpt/scene.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

namespace vpt {

struct TrainConfig {
    int iterations = 1500;
    int batch_rays = 256;
    double learning_rate = 2e-3;
    double lr_decay = 0.1;     // factor reached at lr_decay_steps
    int lr_decay_steps = 0;    // 0 = the stage's iteration count
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    std::uint64_t seed = 0;
    int val_every = 0;         // 0 = validate once, after the last iteration
    int chunk_rays = 64;       // rays per tape; fixes the floating-point path
    int workers = 1;
    RenderConfig render{48, 0, true, true};

    void validate() const {
        if (iterations < 1) throw UsageError("train: iterations must be >= 1");
        if (batch_rays < 1) throw UsageError("train: batch_rays must be >= 1");
        if (!(learning_rate > 0.0)) throw UsageError("train: learning_rate must be > 0");
        if (!(lr_decay > 0.0)) throw UsageError("train: lr_decay must be > 0");
        if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) throw UsageError("train: betas must lie in [0,1)");
        if (!(adam_eps > 0.0)) throw UsageError("train: adam_eps must be > 0");
        if (chunk_rays < 1) throw UsageError("train: chunk_rays must be >= 1");
        if (val_every < 0) throw UsageError("train: val_every must be >= 0");
        render.validate();
    }

    // lr_t = lr * decay^(t / horizon)
    double lr_at(int iter) const {
        const int horizon = lr_decay_steps > 0 ? lr_decay_steps : iterations;
        return learning_rate * std::pow(lr_decay, static_cast<double>(iter) / horizon);
    }
};

// Mean squared error over all elements of a batch.
inline ad::Var photometric_loss(ad::Tape &tape, ad::Var pred, ad::Var gt) { return tape.mse(pred, gt); }

inline double photometric_loss(std::span<const Vec3> pred, std::span<const Vec3> gt) {
    if (pred.size() != gt.size()) throw ShapeError("photometric_loss: batch sizes differ");
    if (pred.empty()) throw ShapeError("photometric_loss: empty batch");
    double s = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) s += (pred[i] - gt[i]).squaredNorm();
    return s / (3.0 * static_cast<double>(pred.size()));
}

struct AdamState {
    ParamStore m;
    ParamStore v;
    long step = 0;

    static AdamState for_params(const ParamStore &p) { return {p.zeros_like(), p.zeros_like(), 0}; }
};

// Bias-corrected adaptive-moment update. Throws before touching anything if
// a gradient is non-finite.
inline void optimizer_step(ParamStore &params, AdamState &state, const ParamStore &grads, double lr, double beta1,
                           double beta2, double eps) {
    if (!grads.same_layout(params) || !state.m.same_layout(params)) {
        throw ShapeError("optimizer_step: gradient/state layout differs from the parameters");
    }
    for (const auto &g : grads) {
        if (!g.value.all_finite()) throw OverflowError("non-finite gradient for parameter '" + g.name + "'");
    }
    ++state.step;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));
    for (std::size_t k = 0; k < params.size(); ++k) {
        auto &p = params.entry(k).value.values;
        auto &m = state.m.entry(k).value.values;
        auto &v = state.v.entry(k).value.values;
        const auto &g = grads.entry(k).value.values;
        for (std::size_t i = 0; i < p.size(); ++i) {
            m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
            v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
            const double mh = m[i] / bc1, vh = v[i] / bc2;
            p[i] -= lr * mh / (std::sqrt(vh) + eps);
        }
    }
}

// One supervised ray: the pixel's ray, its prompt (if any) and target color.
struct RaySample {
    RayTask task;
    Vec3 target;
};

struct BatchResult {
    double loss = 0.0;
    ParamStore grads;
};

// Loss (coarse + fine MSE) and its gradient over a batch. The batch is cut
// into fixed chunks, each recorded on its own tape; chunk gradients are
// summed in chunk order, so the result is independent of the worker count.
inline BatchResult batch_loss_and_grad(const ParamStore &params, const FieldArch &arch,
                                       const std::vector<RaySample> &batch, const RenderConfig &rcfg, int chunk_rays,
                                       int workers, bool with_grad = true) {
    if (batch.empty()) throw UsageError("empty ray batch");
    const std::size_t B = batch.size(), C = static_cast<std::size_t>(std::max(1, chunk_rays));
    const std::size_t nchunks = (B + C - 1) / C;
    std::vector<double> losses(nchunks, 0.0);
    std::vector<ParamStore> grads(with_grad ? nchunks : 0);
    parallel_for(nchunks, workers, [&](std::size_t c) {
        const std::size_t lo = c * C, hi = std::min(B, lo + C);
        std::vector<RayTask> rays;
        Tensor gt = Tensor::zeros(hi - lo, 3);
        rays.reserve(hi - lo);
        for (std::size_t i = lo; i < hi; ++i) {
            rays.push_back(batch[i].task);
            for (int ch = 0; ch < 3; ++ch) gt(i - lo, ch) = batch[i].target[ch];
        }
        ad::Tape tape(&params);
        const TracedBatch tb = trace_batch(tape, arch, rays, rcfg);
        const ad::Var target = tape.constant(std::move(gt));
        ad::Var loss = photometric_loss(tape, tb.coarse_rgb, target);
        if (tb.fine_rgb) loss = tape.add(loss, photometric_loss(tape, *tb.fine_rgb, target));
        loss = tape.scale(loss, static_cast<double>(hi - lo) / static_cast<double>(B));
        losses[c] = tape.value(loss).values[0];
        if (with_grad) grads[c] = tape.backward(loss);
    });
    BatchResult out{0.0, with_grad ? params.zeros_like() : ParamStore{}};
    for (std::size_t c = 0; c < nchunks; ++c) {
        out.loss += losses[c];
        if (with_grad) out.grads.accumulate(grads[c]);
    }
    return out;
}

// Epoch-wise shuffled stream of (train view, pixel) indices.
class PixelSampler {
public:
    PixelSampler(std::size_t n_views, std::size_t pixels_per_view, std::uint64_t seed)
        : n_views_(n_views), ppv_(pixels_per_view), seed_(seed), order_(n_views * pixels_per_view) {
        if (order_.empty()) throw UsageError("pixel sampler: no training pixels");
        reshuffle();
    }

    // Returns (view slot, pixel index).
    std::pair<std::size_t, std::size_t> next() {
        if (pos_ == order_.size()) {
            ++epoch_;
            reshuffle();
        }
        const std::size_t k = order_[pos_++];
        return {k / ppv_, k % ppv_};
    }

private:
    void reshuffle() {
        std::iota(order_.begin(), order_.end(), std::size_t{0});
        Rng rng(derive_seed({seed_, 0x5A3, epoch_}));
        for (std::size_t i = order_.size(); i > 1; --i) {
            const std::size_t j = static_cast<std::size_t>(rng.next() % i);
            std::swap(order_[i - 1], order_[j]);
        }
        pos_ = 0;
    }

    std::size_t n_views_, ppv_;
    std::uint64_t seed_;
    std::vector<std::size_t> order_;
    std::size_t pos_ = 0;
    std::uint64_t epoch_ = 0;
};

struct IterRecord {
    int iter = 0;
    double loss = 0.0;
    double lr = 0.0;
    double elapsed = 0.0;
};

struct ValRecord {
    int iter = 0;
    double psnr = 0.0;
    double ssim = 0.0;
    double elapsed = 0.0;
};

struct StageLog {
    std::vector<IterRecord> iterations;
    std::vector<ValRecord> validations;
    double wall_time = 0.0;
    std::string checkpoint;

    void write_jsonl(const std::filesystem::path &path) const {
        detail::ensure_parent(path);
        std::ofstream out(path, std::ios::trunc);
        if (!out) throw Error("cannot write " + path.string());
        for (const auto &r : iterations) {
            out << nlohmann::json{{"type", "iter"}, {"iter", r.iter}, {"loss", r.loss}, {"lr", r.lr}, {"t", r.elapsed}}.dump()
                << '\n';
        }
        for (const auto &r : validations) {
            out << nlohmann::json{{"type", "val"}, {"iter", r.iter}, {"psnr", r.psnr}, {"ssim", r.ssim}, {"t", r.elapsed}}
                       .dump()
                << '\n';
        }
        out << nlohmann::json{{"type", "end"}, {"wall_time", wall_time}, {"checkpoint", checkpoint}}.dump() << '\n';
    }
};

// Renders every view of `split` and scores it against the dataset's float
// images (and depth, where available).
inline MetricReport evaluate_split(const ParamStore &params, const FieldArch &arch, const SceneDataset &ds,
                                   const std::string &split, const RenderConfig &rcfg, const PromptBank *bank,
                                   int workers, std::vector<ViewRender> *renders = nullptr) {
    MetricReport rep;
    for (const auto &id : ds.split(split)) {
        const View &v = ds.view(id);
        const Image *prompt = bank ? &bank->image(id) : nullptr;
        ViewRender r = render_view(params, arch, ds.intrinsics, v.pose, ds.t_near, ds.t_far, rcfg, prompt, workers);
        ViewMetrics m{id, psnr(r.rgb, v.image), ssim(r.rgb, v.image), std::nullopt};
        if (v.depth) {
            const auto mask = depth_mask(*v.depth, ds.t_far);
            if (std::any_of(mask.begin(), mask.end(), [](std::uint8_t b) { return b != 0; })) {
                m.depth_mse = depth_mse(r.depth, *v.depth, mask);
            }
        }
        rep.views.push_back(std::move(m));
        if (renders) renders->push_back(std::move(r));
    }
    return rep;
}

inline std::vector<RaySample> make_batch(const SceneDataset &ds, const std::vector<std::size_t> &train_views,
                                         PixelSampler &sampler, const PromptBank *bank, int batch_rays, int iter,
                                         std::uint64_t seed) {
    std::vector<RaySample> batch;
    batch.reserve(static_cast<std::size_t>(batch_rays));
    const int W = ds.intrinsics.width;
    for (int b = 0; b < batch_rays; ++b) {
        const auto [slot, pix] = sampler.next();
        const View &v = ds.views[train_views[slot]];
        const int u = static_cast<int>(pix % static_cast<std::size_t>(W)), vv = static_cast<int>(pix / W);
        RaySample s;
        s.task.ray = ray_for_pixel(ds.intrinsics, v.pose, u, vv, ds.t_near, ds.t_far);
        s.task.seed = derive_seed({seed, static_cast<std::uint64_t>(iter), train_views[slot], pix});
        if (bank) s.task.prompt = lookup(*bank, v.id, u, vv);
        s.target = Vec3(v.image.at(u, vv, 0), v.image.at(u, vv, 1), v.image.at(u, vv, 2));
        batch.push_back(std::move(s));
    }
    return batch;
}

// Fills in pos_scale = 0 ("auto") from the dataset's sampled extent, with 5%
// headroom, rounded up to a multiple of 1/64 so the value prints cleanly.
inline FieldArch resolve_arch(FieldArch arch, const SceneDataset &ds) {
    if (arch.pos_scale == 0.0) arch.pos_scale = std::ceil(position_extent(ds) * 1.05 * 64.0) / 64.0;
    return arch;
}

struct StageResult {
    ParamStore params;
    StageLog log;
};

using ProgressFn = std::function<void(const IterRecord &)>;

inline StageResult train_stage(const SceneDataset &ds, const PromptBank *bank, const FieldArch &arch,
                               const TrainConfig &cfg, const ParamStore *warm_from = nullptr,
                               const ProgressFn &progress = {}) {
    cfg.validate();
    arch.validate();
    if (!(arch.pos_scale > 0.0)) throw UsageError("train_stage: arch.pos_scale is unresolved; call resolve_arch");
    if (arch.prompted() != (bank != nullptr)) {
        throw UsageError(arch.prompted() ? "train_stage: prompted architecture requires a prompt bank"
                                         : "train_stage: prompt bank supplied to an unprompted architecture");
    }
    if (cfg.render.n_fine > 0 && !arch.hierarchical) throw UsageError("train_stage: n_fine > 0 needs a fine network");
    if (ds.split("train").empty()) throw UsageError("train_stage: dataset has no train views");
    if (bank) check_bank_covers(*bank, ds, {"train", "val"});

    const auto t0 = std::chrono::steady_clock::now();
    auto elapsed = [&] { return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(); };

    StageResult res{init_params(arch, derive_seed({cfg.seed, 0x1A17}), warm_from), {}};
    AdamState adam = AdamState::for_params(res.params);
    std::vector<std::size_t> train_views;
    for (const auto &id : ds.split("train")) train_views.push_back(ds.view_index(id));
    PixelSampler sampler(train_views.size(), ds.intrinsics.width * static_cast<std::size_t>(ds.intrinsics.height),
                         derive_seed({cfg.seed, 0x5A}));

    RenderConfig eval_cfg = cfg.render;
    eval_cfg.perturb = false;
    auto validate_now = [&](int iter) {
        if (ds.split("val").empty()) return;
        const MetricReport rep = evaluate_split(res.params, arch, ds, "val", eval_cfg, bank, cfg.workers);
        res.log.validations.push_back({iter, rep.mean_psnr(), rep.mean_ssim(), elapsed()});
    };

    for (int it = 1; it <= cfg.iterations; ++it) {
        const auto batch = make_batch(ds, train_views, sampler, bank, cfg.batch_rays, it, cfg.seed);
        BatchResult br = batch_loss_and_grad(res.params, arch, batch, cfg.render, cfg.chunk_rays, cfg.workers);
        if (!std::isfinite(br.loss)) throw OverflowError("non-finite loss at iteration " + std::to_string(it));
        const double lr = cfg.lr_at(it - 1);
        optimizer_step(res.params, adam, br.grads, lr, cfg.beta1, cfg.beta2, cfg.adam_eps);
        res.log.iterations.push_back({it, br.loss, lr, elapsed()});
        if (progress) progress(res.log.iterations.back());
        if (cfg.val_every > 0 && it % cfg.val_every == 0 && it != cfg.iterations) validate_now(it);
    }
    validate_now(cfg.iterations);
    res.log.wall_time = elapsed();
    return res;
}

} // namespace vpt
