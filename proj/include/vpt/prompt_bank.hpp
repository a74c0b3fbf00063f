#pragma once

#include "vpt/field.hpp"
#include "vpt/hash.hpp"
#include "vpt/image_io.hpp"
#include "vpt/render.hpp"
#include "vpt/rng.hpp"
#include "vpt/scene.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace vpt {

enum class PromptSourceKind { Rendered, GroundTruth, GaussianNoise };

inline const char *prompt_source_name(PromptSourceKind k) {
    switch (k) {
    case PromptSourceKind::Rendered: return "rendered";
    case PromptSourceKind::GroundTruth: return "ground_truth";
    case PromptSourceKind::GaussianNoise: return "gaussian_noise";
    }
    return "?";
}

inline PromptSourceKind parse_prompt_source(const std::string &s) {
    if (s == "rendered") return PromptSourceKind::Rendered;
    if (s == "ground_truth" || s == "ground-truth" || s == "gt") return PromptSourceKind::GroundTruth;
    if (s == "gaussian_noise" || s == "noise") return PromptSourceKind::GaussianNoise;
    throw UsageError("unknown prompt source '" + s + "' (expected rendered, ground-truth or noise)");
}

struct PromptSource {
    PromptSourceKind kind = PromptSourceKind::Rendered;
    double mean = 0.5;
    double stddev = 0.25;
    std::uint64_t seed = 0;

    void validate() const {
        if (kind == PromptSourceKind::GaussianNoise && !(std::isfinite(mean) && std::isfinite(stddev) && stddev > 0.0)) {
            throw UsageError("noise prompt source needs finite mean and stddev > 0");
        }
    }
};

inline constexpr int kSyntheticStage = -1;

struct PromptBank {
    int stage = kSyntheticStage;
    PromptSource source;
    std::string checkpoint_hash;  // empty for synthetic banks
    int width = 0;
    int height = 0;
    std::map<std::string, std::string> view_split;  // view id -> split
    std::map<std::string, Image> images;            // float32-representable values in [0,1]

    std::vector<std::string> view_ids() const {
        std::vector<std::string> ids;
        for (const auto &[id, _] : images) ids.push_back(id);
        return ids;
    }

    std::vector<std::string> splits() const {
        std::vector<std::string> out;
        for (const auto &s : split_names()) {
            for (const auto &[id, sp] : view_split) {
                if (sp == s) {
                    out.push_back(s);
                    break;
                }
            }
        }
        return out;
    }

    bool covers(const std::string &split) const {
        for (const auto &[id, sp] : view_split) {
            if (sp == split) return true;
        }
        return false;
    }

    const Image &image(const std::string &id) const {
        auto it = images.find(id);
        if (it == images.end()) throw RangeError("prompt bank has no view '" + id + "'");
        return it->second;
    }

    friend bool operator==(const PromptBank &a, const PromptBank &b) {
        return a.stage == b.stage && a.source.kind == b.source.kind && a.source.mean == b.source.mean &&
               a.source.stddev == b.source.stddev && a.source.seed == b.source.seed &&
               a.checkpoint_hash == b.checkpoint_hash && a.width == b.width && a.height == b.height &&
               a.view_split == b.view_split && a.images == b.images;
    }
};

inline Vec3 lookup(const PromptBank &bank, const std::string &view_id, int u, int v) {
    const Image &img = bank.image(view_id);
    if (u < 0 || u >= img.width || v < 0 || v >= img.height) {
        throw RangeError("prompt lookup (" + std::to_string(u) + ", " + std::to_string(v) + ") outside " +
                         std::to_string(img.width) + "x" + std::to_string(img.height) + " view '" + view_id + "'");
    }
    return {img.at(u, v, 0), img.at(u, v, 1), img.at(u, v, 2)};
}

namespace detail {

inline std::vector<std::string> ids_for_splits(const SceneDataset &ds, const std::vector<std::string> &splits) {
    if (splits.empty()) throw UsageError("prompt bank: no splits requested");
    std::vector<std::string> ids;
    for (const auto &s : splits) {
        const auto &v = ds.split(s);
        if (v.empty()) throw UsageError("prompt bank: dataset split '" + s + "' is empty");
        ids.insert(ids.end(), v.begin(), v.end());
    }
    return ids;
}

inline void clamp_and_round(Image &img) {
    for (double &d : img.data) d = static_cast<double>(static_cast<float>(std::clamp(d, 0.0, 1.0)));
}

} // namespace detail

// Renders every view of `splits` with perturbation off. Prompted
// architectures read their own input prompts from `input`.
inline PromptBank build_bank(const ParamStore &params, const FieldArch &arch, const SceneDataset &ds,
                             const RenderConfig &cfg, const std::vector<std::string> &splits, int stage,
                             const std::string &checkpoint_hash, const PromptBank *input = nullptr, int workers = 1) {
    if (arch.prompted() && !input) throw UsageError("build_bank: prompted stage needs its input prompt bank");
    if (!arch.prompted() && input) throw UsageError("build_bank: unprompted stage given an input prompt bank");
    PromptBank bank;
    bank.stage = stage;
    bank.source.kind = PromptSourceKind::Rendered;
    bank.checkpoint_hash = checkpoint_hash;
    bank.width = ds.intrinsics.width;
    bank.height = ds.intrinsics.height;
    for (const auto &id : detail::ids_for_splits(ds, splits)) {
        const View &v = ds.view(id);
        const Image *prompt = input ? &input->image(id) : nullptr;
        ViewRender r = render_view(params, arch, ds.intrinsics, v.pose, ds.t_near, ds.t_far, cfg, prompt, workers);
        detail::clamp_and_round(r.rgb);
        bank.view_split[id] = ds.split_of(id);
        bank.images[id] = std::move(r.rgb);
    }
    return bank;
}

inline PromptBank synth_bank(const PromptSource &source, const SceneDataset &ds, const std::vector<std::string> &splits) {
    source.validate();
    if (source.kind == PromptSourceKind::Rendered) throw UsageError("synth_bank: rendered banks come from build_bank");
    PromptBank bank;
    bank.stage = kSyntheticStage;
    bank.source = source;
    if (source.kind == PromptSourceKind::GroundTruth) bank.source.mean = bank.source.stddev = 0.0, bank.source.seed = 0;
    bank.width = ds.intrinsics.width;
    bank.height = ds.intrinsics.height;
    for (const auto &id : detail::ids_for_splits(ds, splits)) {
        const View &v = ds.view(id);
        Image img;
        if (source.kind == PromptSourceKind::GroundTruth) {
            if (v.image.data.empty()) throw UsageError("synth_bank: view '" + id + "' has no ground-truth image");
            img = v.image;
        } else {
            img = Image(bank.width, bank.height, 3);
            Rng rng(derive_seed({source.seed, 0x9015E, ds.view_index(id)}));
            for (double &d : img.data) d = rng.normal(source.mean, source.stddev);
        }
        detail::clamp_and_round(img);
        bank.view_split[id] = ds.split_of(id);
        bank.images[id] = std::move(img);
    }
    return bank;
}

// Mean absolute per-channel difference over all views.
inline double bank_distance(const PromptBank &a, const PromptBank &b) {
    if (a.view_ids() != b.view_ids()) throw UsageError("bank_distance: banks cover different views");
    double s = 0.0;
    std::size_t n = 0;
    for (const auto &[id, ia] : a.images) {
        const Image &ib = b.image(id);
        if (!ia.same_shape(ib)) throw UsageError("bank_distance: resolution differs for view '" + id + "'");
        for (std::size_t i = 0; i < ia.data.size(); ++i) s += std::fabs(ia.data[i] - ib.data[i]);
        n += ia.data.size();
    }
    if (n == 0) throw UsageError("bank_distance: empty banks");
    return s / static_cast<double>(n);
}

// Hash over every manifest field and every float32 sample.
inline std::string bank_content_hash(const PromptBank &bank) {
    Sha256 h;
    h.update("vpt-bank-v1");
    h.update_pod(bank.stage).update(prompt_source_name(bank.source.kind));
    h.update_pod(bank.source.mean).update_pod(bank.source.stddev).update_pod(bank.source.seed);
    h.update(bank.checkpoint_hash).update_pod(bank.width).update_pod(bank.height);
    for (const auto &[id, img] : bank.images) {
        h.update(id).update(bank.view_split.at(id));
        for (double d : img.data) h.update_pod(static_cast<float>(d));
    }
    return h.hex();
}

// Layout under `dir`: {split}/{id}.png, {split}/{id}.f32.bin, manifest.json.
inline void save_bank(const PromptBank &bank, const std::filesystem::path &dir) {
    std::filesystem::create_directories(dir);
    nlohmann::json views = nlohmann::json::array();
    for (const auto &[id, img] : bank.images) {
        const std::string &split = bank.view_split.at(id);
        write_f32((dir / split / (id + ".f32.bin")).string(), img);
        write_png((dir / split / (id + ".png")).string(), img);
        views.push_back({{"id", id}, {"split", split}});
    }
    nlohmann::json m{{"stage", bank.stage == kSyntheticStage ? nlohmann::json("synthetic") : nlohmann::json(bank.stage)},
                     {"source", prompt_source_name(bank.source.kind)},
                     {"checkpoint_hash", bank.checkpoint_hash},
                     {"width", bank.width},
                     {"height", bank.height},
                     {"views", views},
                     {"content_hash", bank_content_hash(bank)}};
    if (bank.source.kind == PromptSourceKind::GaussianNoise) {
        m["noise"] = {{"mean", bank.source.mean}, {"stddev", bank.source.stddev}, {"seed", bank.source.seed}};
    }
    detail::write_json(dir / "manifest.json", m);
}

inline PromptBank load_bank(const std::filesystem::path &dir) {
    const auto mpath = dir / "manifest.json";
    const auto m = detail::read_json(mpath);
    PromptBank bank;
    std::string recorded;
    try {
        const auto &st = m.at("stage");
        bank.stage = st.is_string() && st.get<std::string>() == "synthetic" ? kSyntheticStage : st.get<int>();
        bank.source.kind = parse_prompt_source(m.at("source").get<std::string>());
        if (m.contains("noise")) {
            bank.source.mean = m["noise"].at("mean").get<double>();
            bank.source.stddev = m["noise"].at("stddev").get<double>();
            bank.source.seed = m["noise"].at("seed").get<std::uint64_t>();
        } else if (bank.source.kind != PromptSourceKind::Rendered) {
            bank.source.mean = bank.source.stddev = 0.0;
        }
        bank.checkpoint_hash = m.at("checkpoint_hash").get<std::string>();
        bank.width = m.at("width").get<int>();
        bank.height = m.at("height").get<int>();
        recorded = m.at("content_hash").get<std::string>();
        for (const auto &v : m.at("views")) {
            const auto id = v.at("id").get<std::string>();
            const auto split = v.at("split").get<std::string>();
            const auto f = dir / split / (id + ".f32.bin");
            if (!std::filesystem::exists(f)) throw IntegrityError("prompt bank " + dir.string() + ": missing " + f.string());
            bank.view_split[id] = split;
            bank.images[id] = read_f32(f.string(), bank.width, bank.height, 3);
        }
    } catch (const nlohmann::json::exception &e) {
        throw IntegrityError("prompt bank manifest " + mpath.string() + ": " + e.what());
    } catch (const ParseError &e) {
        throw IntegrityError(std::string("prompt bank ") + dir.string() + ": " + e.what());
    }
    if (bank_content_hash(bank) != recorded) {
        throw IntegrityError("prompt bank " + dir.string() + ": content hash does not match the manifest");
    }
    return bank;
}

// The bank must hold every view of the listed splits at the dataset resolution.
inline void check_bank_covers(const PromptBank &bank, const SceneDataset &ds, const std::vector<std::string> &splits) {
    if (bank.width != ds.intrinsics.width || bank.height != ds.intrinsics.height) {
        throw UsageError("prompt bank resolution differs from the dataset");
    }
    for (const auto &s : splits) {
        for (const auto &id : ds.split(s)) {
            if (!bank.images.contains(id)) throw UsageError("prompt bank lacks view '" + id + "' of split '" + s + "'");
        }
    }
}

} // namespace vpt
