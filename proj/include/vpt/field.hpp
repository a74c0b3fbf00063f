#pragma once

#include "vpt/autodiff.hpp"
#include "vpt/camera.hpp"
#include "vpt/encoding.hpp"
#include "vpt/error.hpp"
#include "vpt/image_io.hpp"
#include "vpt/params.hpp"
#include "vpt/rng.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace vpt {

enum class PromptSite { None, Direction, Position };

inline const char *prompt_site_name(PromptSite s) {
    switch (s) {
    case PromptSite::None: return "none";
    case PromptSite::Direction: return "direction";
    case PromptSite::Position: return "position";
    }
    return "?";
}

inline PromptSite parse_prompt_site(const std::string &s) {
    if (s == "none") return PromptSite::None;
    if (s == "direction" || s == "dir") return PromptSite::Direction;
    if (s == "position" || s == "pos") return PromptSite::Position;
    throw UsageError("unknown prompt site '" + s + "' (expected none, direction or position)");
}

// MLP layout. Layer `skip_at` of the trunk takes concat(h, PE(x)); 0 disables
// the skip (layer 0 already sees PE(x)). With `hierarchical` a second
// ("fine") network of the same shape is instantiated.
// Positions are divided by `pos_scale` before encoding so every sampled point
// lands inside (-1, 1)^3, where sin(2^k pi x) does not alias. 0 means "derive
// from the dataset" (see resolve_arch); a network cannot run until resolved.
struct FieldArch {
    int trunk_depth = 4;
    int trunk_width = 64;
    int skip_at = 2;
    int dir_branch_width = 32;
    PromptSite prompt_site = PromptSite::None;
    int prompt_dim = 0;
    int pos_freqs = static_cast<int>(kDefaultPositionFreqs);
    int dir_freqs = static_cast<int>(kDefaultDirectionFreqs);
    bool include_input = false;
    bool hierarchical = false;
    double pos_scale = 0.0;

    EncodingConfig pos_encoding() const { return {static_cast<std::size_t>(pos_freqs), include_input}; }
    EncodingConfig dir_encoding() const { return {static_cast<std::size_t>(dir_freqs), include_input}; }
    int pos_dim() const { return static_cast<int>(pos_encoding().output_dim(3)); }
    int dir_dim() const { return static_cast<int>(dir_encoding().output_dim(3)); }
    int networks() const { return hierarchical ? 2 : 1; }
    bool prompted() const { return prompt_site != PromptSite::None; }

    void validate() const {
        if (trunk_depth < 1 || trunk_width < 1 || dir_branch_width < 1) {
            throw UsageError("arch: depth and widths must be >= 1");
        }
        if (skip_at < 0 || skip_at >= trunk_depth) throw UsageError("arch: need 0 <= skip_at < trunk_depth");
        if (prompt_dim != 0 && prompt_dim != 3) throw UsageError("arch: prompt_dim must be 0 or 3");
        if ((prompt_site == PromptSite::None) != (prompt_dim == 0)) {
            throw UsageError("arch: prompt_site=none iff prompt_dim=0");
        }
        if (pos_freqs < 0 || dir_freqs < 0) throw UsageError("arch: frequency counts must be >= 0");
        if (pos_dim() == 0 || dir_dim() == 0) throw UsageError("arch: encodings must have nonzero width");
        if (!(pos_scale >= 0.0) || !std::isfinite(pos_scale)) throw UsageError("arch: pos_scale must be >= 0");
    }

    FieldArch with_prompt(PromptSite site) const {
        FieldArch a = *this;
        a.prompt_site = site;
        a.prompt_dim = site == PromptSite::None ? 0 : 3;
        return a;
    }

    friend bool operator==(const FieldArch &, const FieldArch &) = default;
};

inline FieldArch desk_arch() { return FieldArch{}; }

// The original NeRF shape: 8x256 trunk, skip at 4, 128-wide direction layer,
// raw inputs kept in the encodings, coarse + fine networks.
inline FieldArch full_arch() {
    FieldArch a;
    a.trunk_depth = 8;
    a.trunk_width = 256;
    a.skip_at = 4;
    a.dir_branch_width = 128;
    a.include_input = true;
    a.hierarchical = true;
    return a;
}

inline nlohmann::json arch_to_json(const FieldArch &a) {
    return {{"trunk_depth", a.trunk_depth},       {"trunk_width", a.trunk_width},
            {"skip_at", a.skip_at},               {"dir_branch_width", a.dir_branch_width},
            {"prompt_site", prompt_site_name(a.prompt_site)},
            {"prompt_dim", a.prompt_dim},         {"pos_freqs", a.pos_freqs},
            {"dir_freqs", a.dir_freqs},           {"include_input", a.include_input},
            {"hierarchical", a.hierarchical},     {"pos_scale", a.pos_scale}};
}

inline FieldArch arch_from_json(const nlohmann::json &j) {
    FieldArch a;
    a.trunk_depth = j.at("trunk_depth").get<int>();
    a.trunk_width = j.at("trunk_width").get<int>();
    a.skip_at = j.at("skip_at").get<int>();
    a.dir_branch_width = j.at("dir_branch_width").get<int>();
    a.prompt_site = parse_prompt_site(j.at("prompt_site").get<std::string>());
    a.prompt_dim = j.at("prompt_dim").get<int>();
    a.pos_freqs = j.at("pos_freqs").get<int>();
    a.dir_freqs = j.at("dir_freqs").get<int>();
    a.include_input = j.at("include_input").get<bool>();
    a.hierarchical = j.at("hierarchical").get<bool>();
    a.pos_scale = j.at("pos_scale").get<double>();
    a.validate();
    return a;
}

inline const char *network_name(int net) { return net == 0 ? "coarse" : "fine"; }

struct TensorSpec {
    std::string name;
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::size_t fan_in = 0;
    bool prompt = false;  // prompt input columns (zeroed on warm start)
};

// Every tensor of the architecture in canonical order. Weights are
// [out, in]; biases are [1, out].
inline std::vector<TensorSpec> param_layout(const FieldArch &a) {
    a.validate();
    const std::size_t W = a.trunk_width, D = a.dir_branch_width, pe = a.pos_dim(), de = a.dir_dim();
    std::vector<TensorSpec> out;
    for (int net = 0; net < a.networks(); ++net) {
        const std::string p = network_name(net);
        for (int i = 0; i < a.trunk_depth; ++i) {
            const std::size_t in = i == 0 ? pe : W + (i == a.skip_at ? pe : 0);
            const std::string l = p + ".trunk" + std::to_string(i);
            out.push_back({l + ".w", W, in, in, false});
            out.push_back({l + ".b", 1, W, in, false});
            if (i == 0 && a.prompt_site == PromptSite::Position) out.push_back({l + ".prompt_w", W, 3, in + 3, true});
        }
        out.push_back({p + ".sigma.w", 1, W, W, false});
        out.push_back({p + ".sigma.b", 1, 1, W, false});
        out.push_back({p + ".feature.w", W, W, W, false});
        out.push_back({p + ".feature.b", 1, W, W, false});
        out.push_back({p + ".dir.w", D, W + de, W + de, false});
        out.push_back({p + ".dir.b", 1, D, W + de, false});
        if (a.prompt_site == PromptSite::Direction) out.push_back({p + ".dir.prompt_w", D, 3, W + de + 3, true});
        out.push_back({p + ".rgb.w", 3, D, D, false});
        out.push_back({p + ".rgb.b", 1, 3, D, false});
    }
    return out;
}

// Closed form, independent of param_layout.
inline std::size_t param_count(const FieldArch &a) {
    a.validate();
    const std::size_t W = a.trunk_width, D = a.dir_branch_width, pe = a.pos_dim(), de = a.dir_dim();
    const std::size_t L = a.trunk_depth;
    std::size_t n = (pe * W + W) + (L - 1) * (W * W + W) + (a.skip_at > 0 ? pe * W : 0);
    n += (W + 1) + (W * W + W) + (D * (W + de) + D) + (3 * D + 3);
    if (a.prompt_site == PromptSite::Direction) n += 3 * D;
    if (a.prompt_site == PromptSite::Position) n += 3 * W;
    return n * static_cast<std::size_t>(a.networks());
}

// Fresh init: every tensor ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), drawn from a
// stream derived from (seed, tensor index). With warm_from, tensors present
// there are copied (shapes must match) and new prompt tensors start at zero.
inline ParamStore init_params(const FieldArch &a, std::uint64_t seed, const ParamStore *warm_from = nullptr) {
    const auto layout = param_layout(a);
    ParamStore ps;
    if (warm_from) {
        std::size_t copied = 0;
        for (const auto &t : layout) {
            if (auto idx = warm_from->find(t.name)) {
                const Tensor &src = warm_from->entry(*idx).value;
                if (src.rows() != t.rows || src.cols() != t.cols) {
                    throw ShapeError("warm start: '" + t.name + "' is " + Tensor::shape_string(src.shape) +
                                     ", architecture expects [" + std::to_string(t.rows) + "," +
                                     std::to_string(t.cols) + "]");
                }
                ps.add(t.name, Tensor({t.rows, t.cols}, src.values));
                ++copied;
            } else if (t.prompt) {
                ps.add(t.name, Tensor::zeros(t.rows, t.cols));
            } else {
                throw ShapeError("warm start: source has no tensor '" + t.name + "'");
            }
        }
        if (copied != warm_from->size()) {
            throw ShapeError("warm start: source has tensors the architecture does not use");
        }
        return ps;
    }
    for (std::size_t k = 0; k < layout.size(); ++k) {
        const auto &t = layout[k];
        Rng rng(derive_seed({seed, 0x1417, k}));
        const double bound = 1.0 / std::sqrt(static_cast<double>(t.fan_in));
        Tensor v = Tensor::zeros(t.rows, t.cols);
        for (double &x : v.values) x = rng.uniform(-bound, bound);
        ps.add(t.name, std::move(v));
    }
    return ps;
}

struct NetworkOutput {
    ad::Var sigma;  // [N,1]
    ad::Var rgb;    // [N,3]
};

// Evaluates network `net` (0 coarse, 1 fine) on N points. `x`, `d` are [N,3];
// `prompt` is [N,3] and must be given exactly when the arch is prompted.
inline NetworkOutput eval_network(ad::Tape &tape, const FieldArch &a, int net, ad::Var x, ad::Var d,
                                  std::optional<ad::Var> prompt) {
    if (prompt.has_value() != a.prompted()) {
        throw UsageError(a.prompted() ? std::string("arch has prompt_site=") + prompt_site_name(a.prompt_site) +
                                            " but no prompt was supplied"
                                      : std::string("prompt supplied to an unprompted network"));
    }
    if (net < 0 || net >= a.networks()) throw UsageError("network index out of range");
    if (!(a.pos_scale > 0.0)) throw UsageError("arch.pos_scale is unresolved (0); call resolve_arch first");
    const std::string p = network_name(net);
    const ad::Var pe = encode(tape, tape.scale(x, 1.0 / a.pos_scale), a.pos_encoding());
    const ad::Var de = encode(tape, d, a.dir_encoding());

    ad::Var h = pe;
    for (int i = 0; i < a.trunk_depth; ++i) {
        const std::string l = p + ".trunk" + std::to_string(i);
        if (i > 0 && i == a.skip_at) h = tape.concat({h, pe});
        ad::Var z = tape.affine(h, tape.param(l + ".w"), tape.param(l + ".b"));
        if (i == 0 && a.prompt_site == PromptSite::Position) {
            z = tape.add(z, tape.affine(*prompt, tape.param(l + ".prompt_w")));
        }
        h = tape.relu(z);
    }
    const ad::Var sigma = tape.softplus(tape.affine(h, tape.param(p + ".sigma.w"), tape.param(p + ".sigma.b")));
    const ad::Var feature = tape.affine(h, tape.param(p + ".feature.w"), tape.param(p + ".feature.b"));
    ad::Var z = tape.affine(tape.concat({feature, de}), tape.param(p + ".dir.w"), tape.param(p + ".dir.b"));
    if (a.prompt_site == PromptSite::Direction) z = tape.add(z, tape.affine(*prompt, tape.param(p + ".dir.prompt_w")));
    const ad::Var rgb = tape.sigmoid(tape.affine(tape.relu(z), tape.param(p + ".rgb.w"), tape.param(p + ".rgb.b")));
    return {sigma, rgb};
}

struct RadianceOutput {
    Vec3 color = Vec3::Zero();
    double sigma = 0.0;
};

// Single-point evaluation.
inline RadianceOutput query(const ParamStore &params, const FieldArch &a, const Vec3 &x, const Vec3 &d,
                            std::optional<Vec3> prompt_rgb = std::nullopt, int net = 0) {
    if (prompt_rgb) {
        for (int c = 0; c < 3; ++c) {
            if (!((*prompt_rgb)[c] >= 0.0 && (*prompt_rgb)[c] <= 1.0)) throw RangeError("prompt_rgb outside [0,1]");
        }
    }
    ad::Tape tape(&params);
    const ad::Var xv = tape.constant(Tensor({1, 3}, {x.x(), x.y(), x.z()}));
    const ad::Var dv = tape.constant(Tensor({1, 3}, {d.x(), d.y(), d.z()}));
    std::optional<ad::Var> pv;
    if (prompt_rgb) pv = tape.constant(Tensor({1, 3}, {prompt_rgb->x(), prompt_rgb->y(), prompt_rgb->z()}));
    const NetworkOutput o = eval_network(tape, a, net, xv, dv, pv);
    const Tensor &c = tape.value(o.rgb);
    return {Vec3(c.values[0], c.values[1], c.values[2]), tape.value(o.sigma).values[0]};
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

// What a prompted checkpoint was trained against, so eval can demand the
// matching bank.
struct PromptRequirement {
    int bank_stage = -1;
    std::string source;  // rendered | ground_truth | gaussian_noise

    friend bool operator==(const PromptRequirement &, const PromptRequirement &) = default;
};

struct Checkpoint {
    FieldArch arch;
    int stage = 0;
    std::uint64_t seed = 0;
    std::optional<PromptRequirement> prompt;
    nlohmann::json meta = nlohmann::json::object();
    ParamStore params;

    friend bool operator==(const Checkpoint &a, const Checkpoint &b) {
        return a.arch == b.arch && a.stage == b.stage && a.seed == b.seed && a.prompt == b.prompt &&
               a.meta == b.meta && a.params == b.params;
    }
};

inline constexpr char kCheckpointMagic[8] = {'V', 'P', 'T', 'C', 'K', 'P', 'T', '1'};

// Layout: 8-byte magic, u64 header length, JSON header, u64 tensor count,
// then per tensor: u32 name length, name, u64 rows, u64 cols, f64 values.
// All integers and floats little-endian.
inline void save_checkpoint(const Checkpoint &ck, const std::filesystem::path &path) {
    nlohmann::json header{{"arch", arch_to_json(ck.arch)}, {"stage", ck.stage}, {"seed", ck.seed}, {"meta", ck.meta}};
    if (ck.prompt) header["prompt"] = {{"bank_stage", ck.prompt->bank_stage}, {"source", ck.prompt->source}};
    const std::string hs = header.dump();
    detail::ensure_parent(path);
    const std::filesystem::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error("cannot write " + tmp.string());
        out.write(kCheckpointMagic, 8);
        detail::write_le<std::uint64_t>(out, hs.size());
        out.write(hs.data(), static_cast<std::streamsize>(hs.size()));
        detail::write_le<std::uint64_t>(out, ck.params.size());
        for (const auto &e : ck.params) {
            detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(e.name.size()));
            out.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
            detail::write_le<std::uint64_t>(out, e.value.rows());
            detail::write_le<std::uint64_t>(out, e.value.cols());
            for (double v : e.value.values) detail::write_le(out, v);
        }
        if (!out) throw Error("write failed: " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

inline Checkpoint load_checkpoint(const std::filesystem::path &path) {
    const std::string file = path.string();
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError(file, "cannot open checkpoint");
    char magic[8];
    if (!in.read(magic, 8) || !std::equal(magic, magic + 8, kCheckpointMagic)) {
        throw ParseError(file, "not a checkpoint (bad magic)");
    }
    const auto hlen = detail::read_le<std::uint64_t>(in, file);
    if (hlen > (1u << 24)) throw ParseError(file, "implausible header length");
    std::string hs(hlen, '\0');
    if (!in.read(hs.data(), static_cast<std::streamsize>(hlen))) throw ParseError(file, "truncated header");
    Checkpoint ck;
    try {
        const auto h = nlohmann::json::parse(hs);
        ck.arch = arch_from_json(h.at("arch"));
        ck.stage = h.at("stage").get<int>();
        ck.seed = h.at("seed").get<std::uint64_t>();
        ck.meta = h.value("meta", nlohmann::json::object());
        if (h.contains("prompt")) {
            ck.prompt = PromptRequirement{h["prompt"].at("bank_stage").get<int>(),
                                          h["prompt"].at("source").get<std::string>()};
        }
    } catch (const nlohmann::json::exception &e) {
        throw ParseError(file, std::string("bad header: ") + e.what());
    } catch (const UsageError &e) {
        throw ParseError(file, std::string("bad architecture: ") + e.what());
    }
    const auto n = detail::read_le<std::uint64_t>(in, file);
    const auto layout = param_layout(ck.arch);
    if (n != layout.size()) throw ParseError(file, "tensor count does not match the architecture");
    for (std::uint64_t k = 0; k < n; ++k) {
        const auto len = detail::read_le<std::uint32_t>(in, file);
        if (len > 4096) throw ParseError(file, "implausible tensor name length");
        std::string name(len, '\0');
        if (!in.read(name.data(), len)) throw ParseError(file, "truncated tensor name");
        const auto rows = detail::read_le<std::uint64_t>(in, file);
        const auto cols = detail::read_le<std::uint64_t>(in, file);
        const auto &spec = layout[k];
        if (name != spec.name || rows != spec.rows || cols != spec.cols) {
            throw ParseError(file, "tensor '" + name + "' does not match the architecture layout");
        }
        Tensor t = Tensor::zeros(rows, cols);
        for (double &v : t.values) v = detail::read_le<double>(in, file);
        if (!t.all_finite()) throw ParseError(file, "tensor '" + name + "' has non-finite values");
        ck.params.add(std::move(name), std::move(t));
    }
    if (in.peek() != std::char_traits<char>::eof()) throw ParseError(file, "trailing bytes after tensors");
    return ck;
}

} // namespace vpt
