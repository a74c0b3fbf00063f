// vpt: command-line front end (gen-scene, train, render-prompts, cascade, eval, render).

#include "vpt/cascade.hpp"
#include "vpt/config.hpp"
#include "vpt/metrics.hpp"
#include "vpt/prompt_bank.hpp"
#include "vpt/render.hpp"
#include "vpt/scene.hpp"
#include "vpt/trainer.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace vpt;

namespace {

std::vector<std::size_t> parse_counts(const std::string &s, const char *what) {
    std::vector<std::size_t> out;
    std::stringstream in(s);
    std::string tok;
    while (std::getline(in, tok, ',')) {
        try {
            std::size_t pos = 0;
            const long v = std::stol(tok, &pos);
            if (pos != tok.size() || v < 0) throw std::invalid_argument(tok);
            out.push_back(static_cast<std::size_t>(v));
        } catch (const std::exception &) {
            throw UsageError(std::string(what) + ": '" + s + "' is not a comma-separated list of counts");
        }
    }
    if (out.size() != 3) throw UsageError(std::string(what) + " needs three counts: train,val,test");
    return out;
}

std::vector<std::string> parse_splits(const std::string &s) {
    std::vector<std::string> out;
    std::stringstream in(s);
    std::string tok;
    while (std::getline(in, tok, ',')) {
        if (tok != "train" && tok != "val" && tok != "test") throw UsageError("unknown split '" + tok + "'");
        out.push_back(tok);
    }
    return out;
}

// Shared config plumbing: defaults < --config file < --set overrides < dedicated flags.
struct ConfigArgs {
    std::string file;
    std::vector<std::string> sets;
    std::optional<std::uint64_t> seed;
    int workers = default_workers();

    void attach(CLI::App *cmd) {
        cmd->add_option("--config", file, "key = value configuration file");
        cmd->add_option("--set", sets, "override a config key (key=value), repeatable");
        cmd->add_option("--seed", seed, "global seed");
        cmd->add_option("--workers", workers, "worker threads (default: $VPT_WORKERS or 1)")->check(CLI::PositiveNumber);
    }

    RunConfig build(const std::vector<std::pair<std::string, std::string>> &flag_sets = {}) const {
        RunConfig c;
        if (!file.empty()) config_load_file(c, file);
        for (const auto &s : sets) config_apply_override(c, s);
        for (const auto &[k, v] : flag_sets) config_set(c, k, v);
        if (seed) config_set(c, "seed", std::to_string(*seed));
        c.workers = workers;
        config_finalize(c);
        return c;
    }
};

const PromptBank *maybe_bank(const std::string &dir, std::optional<PromptBank> &slot) {
    if (dir.empty()) return nullptr;
    slot = load_bank(dir);
    return &*slot;
}

void require_bank_for(const Checkpoint &ck, const PromptBank *bank, const std::string &path) {
    if (ck.arch.prompted() && !bank) {
        std::string need = ck.prompt ? (ck.prompt->bank_stage >= 0 ? "the stage-" + std::to_string(ck.prompt->bank_stage) +
                                                                       " prompt bank"
                                                                 : "its " + ck.prompt->source + " prompt bank")
                                     : "a prompt bank";
        throw UsageError("checkpoint " + path + " is stage " + std::to_string(ck.stage) + " (prompt site " +
                         prompt_site_name(ck.arch.prompt_site) + ") and requires " + need + "; pass --prompts");
    }
    if (!ck.arch.prompted() && bank) {
        throw UsageError("checkpoint " + path + " is unprompted (stage " + std::to_string(ck.stage) +
                         "); do not pass --prompts");
    }
}

int cmd_gen_scene(const std::string &scene, int res, const std::string &views, std::uint64_t seed, int quadrature,
                  const std::string &out, int workers) {
    const auto counts = parse_counts(views, "--views");
    SceneSpec spec;
    spec.scene = scene;
    spec.resolution = res;
    spec.n_train = counts[0];
    spec.n_val = counts[1];
    spec.n_test = counts[2];
    spec.seed = seed;
    spec.quadrature_n = quadrature;
    const SceneDataset ds = gen_scene(spec, workers);
    save_dataset(ds, out);
    const SceneDataset back = load_dataset(out);
    if (!(back == ds)) throw Error("dataset written to " + out + " does not load back identically");
    std::cout << dataset_hash(ds) << "\n";
    return 0;
}

}  // namespace

int main(int argc, char **argv) {
    CLI::App app{"vpt: cascaded view-prompt radiance fields"};
    app.require_subcommand(1);

    // gen-scene
    auto *gen = app.add_subcommand("gen-scene", "generate a synthetic dataset from an analytic scene");
    std::string g_scene = "sphere", g_views = "10,3,3", g_out;
    int g_res = 32, g_quad = 512;
    std::uint64_t g_seed = 1;
    int g_workers = default_workers();
    gen->add_option("--scene", g_scene, "sphere | boxes | wall | empty");
    gen->add_option("--res", g_res, "image width and height");
    gen->add_option("--views", g_views, "train,val,test view counts");
    gen->add_option("--seed", g_seed);
    gen->add_option("--quadrature", g_quad, "oracle quadrature steps (>= 256)");
    gen->add_option("--out", g_out)->required();
    gen->add_option("--workers", g_workers)->check(CLI::PositiveNumber);

    // train
    auto *train = app.add_subcommand("train", "train one stage");
    std::string t_data, t_out, t_prompts, t_warm, t_site = "direction";
    int t_stage = 0;
    ConfigArgs t_cfg;
    train->add_option("--data", t_data)->required();
    train->add_option("--out", t_out, "stage directory (checkpoint, log.jsonl)")->required();
    train->add_option("--prompts", t_prompts, "input prompt bank directory (prompted stage)");
    train->add_option("--prompt-site", t_site, "direction | position (with --prompts)");
    train->add_option("--warm-from", t_warm, "checkpoint to warm-start from");
    train->add_option("--stage", t_stage, "stage index recorded in the checkpoint");
    t_cfg.attach(train);

    // render-prompts
    auto *rp = app.add_subcommand("render-prompts", "render a prompt bank from a checkpoint");
    std::string r_data, r_ck, r_prompts, r_out, r_splits = "train,val,test";
    int r_workers = default_workers();
    rp->add_option("--data", r_data)->required();
    rp->add_option("--checkpoint", r_ck)->required();
    rp->add_option("--prompts", r_prompts, "the checkpoint's own input bank (prompted stages)");
    rp->add_option("--splits", r_splits);
    rp->add_option("--out", r_out)->required();
    rp->add_option("--workers", r_workers)->check(CLI::PositiveNumber);

    // cascade
    auto *cas = app.add_subcommand("cascade", "run (or resume) the staged prompt cascade");
    std::string c_data, c_out, c_stages, c_site, c_source, c_views;
    std::optional<double> c_threshold;
    std::optional<bool> c_warm;
    bool c_resume = false;
    ConfigArgs c_cfg;
    cas->add_option("--data", c_data);
    cas->add_option("--out", c_out, "run directory")->required();
    cas->add_option("--stages", c_stages, "maximum number of stages, or 1-prompted");
    cas->add_option("--threshold", c_threshold, "stop when the bank distance falls to this value");
    cas->add_option("--prompt-site", c_site, "direction | position");
    cas->add_option("--prompt-source", c_source, "rendered | ground-truth | noise");
    cas->add_option("--warm-start", c_warm, "warm-start every prompted stage from its predecessor")
        ->expected(0, 1)
        ->default_str("true");
    cas->add_option("--views-per-split", c_views, "keep the first train,val,test views");
    cas->add_flag("--resume", c_resume, "continue an interrupted run in --out");
    c_cfg.attach(cas);

    // eval
    auto *ev = app.add_subcommand("eval", "score a checkpoint on a split");
    std::string e_data, e_ck, e_prompts, e_split = "val", e_out;
    int e_workers = default_workers();
    std::optional<int> e_coarse, e_fine;
    ev->add_option("--data", e_data)->required();
    ev->add_option("--checkpoint", e_ck)->required();
    ev->add_option("--prompts", e_prompts);
    ev->add_option("--split", e_split);
    ev->add_option("--out", e_out, "CSV report path (default: stdout)");
    ev->add_option("--n-coarse", e_coarse);
    ev->add_option("--n-fine", e_fine);
    ev->add_option("--workers", e_workers)->check(CLI::PositiveNumber);

    // render
    auto *rn = app.add_subcommand("render", "render one view (image + depth)");
    std::string n_data, n_ck, n_prompts, n_view, n_out;
    int n_workers = default_workers();
    std::optional<int> n_coarse, n_fine;
    rn->add_option("--data", n_data)->required();
    rn->add_option("--checkpoint", n_ck)->required();
    rn->add_option("--prompts", n_prompts);
    rn->add_option("--view", n_view)->required();
    rn->add_option("--out", n_out, "output prefix")->required();
    rn->add_option("--n-coarse", n_coarse);
    rn->add_option("--n-fine", n_fine);
    rn->add_option("--workers", n_workers)->check(CLI::PositiveNumber);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError &e) {
        return app.exit(e);
    }

    auto render_cfg_for = [](const Checkpoint &ck, std::optional<int> nc, std::optional<int> nf) {
        RenderConfig rc;
        rc.n_coarse = ck.meta.value("n_coarse", RenderConfig{}.n_coarse);
        rc.n_fine = ck.meta.value("n_fine", 0);
        if (nc) rc.n_coarse = *nc;
        if (nf) rc.n_fine = *nf;
        rc.perturb = false;
        return rc;
    };

    try {
        if (*gen) return cmd_gen_scene(g_scene, g_res, g_views, g_seed, g_quad, g_out, g_workers);

        if (*train) {
            RunConfig cfg = t_cfg.build();
            const SceneDataset ds = load_dataset(t_data);
            std::optional<PromptBank> bank_slot;
            const PromptBank *bank = maybe_bank(t_prompts, bank_slot);
            const FieldArch arch = resolve_arch(cfg.arch, ds).with_prompt(bank ? parse_prompt_site(t_site) : PromptSite::None);
            std::optional<Checkpoint> warm;
            if (!t_warm.empty()) warm = load_checkpoint(t_warm);
            TrainConfig tc = cfg.cascade.train;
            tc.seed = derive_seed({cfg.cascade.seed, static_cast<std::uint64_t>(t_stage)});
            StageResult sr = train_stage(ds, bank, arch, tc, warm ? &warm->params : nullptr);
            Checkpoint ck;
            ck.arch = arch;
            ck.stage = t_stage;
            ck.seed = tc.seed;
            if (bank) ck.prompt = PromptRequirement{bank->stage, prompt_source_name(bank->source.kind)};
            ck.meta = {{"warm_started", warm.has_value()}, {"iterations", tc.iterations},
                       {"n_coarse", tc.render.n_coarse}, {"n_fine", tc.render.n_fine}};
            ck.params = std::move(sr.params);
            save_checkpoint(ck, fs::path(t_out) / "checkpoint");
            sr.log.checkpoint = "checkpoint";
            sr.log.write_jsonl(fs::path(t_out) / "log.jsonl");
            if (!sr.log.validations.empty()) {
                std::printf("val psnr %.4f ssim %.4f\n", sr.log.validations.back().psnr, sr.log.validations.back().ssim);
            }
            return 0;
        }

        if (*rp) {
            const SceneDataset ds = load_dataset(r_data);
            const Checkpoint ck = load_checkpoint(r_ck);
            std::optional<PromptBank> slot;
            const PromptBank *input = maybe_bank(r_prompts, slot);
            require_bank_for(ck, input, r_ck);
            const PromptBank bank = build_bank(ck.params, ck.arch, ds, render_cfg_for(ck, {}, {}), parse_splits(r_splits),
                                               ck.stage, sha256_file(r_ck), input, r_workers);
            save_bank(bank, r_out);
            std::cout << bank_content_hash(bank) << "\n";
            return 0;
        }

        if (*cas) {
            if (c_resume) {
                if (!c_stages.empty() || c_threshold || !c_site.empty() || !c_source.empty() || c_warm ||
                    !c_views.empty() || !c_cfg.file.empty() || !c_cfg.sets.empty() || c_cfg.seed) {
                    throw UsageError("--resume takes its configuration from run.json; drop the other run flags");
                }
                RunConfig cfg = config_from_run(c_out);
                cfg.workers = c_cfg.workers;
                config_finalize(cfg);
                const auto run = detail::read_json(fs::path(c_out) / "run.json");
                const std::string data = c_data.empty() ? run.at("dataset").at("path").get<std::string>() : c_data;
                SceneDataset ds = load_dataset(data);
                const std::string vps = run.at("dataset").value("views_per_split", std::string());
                if (!vps.empty()) {
                    const auto k = parse_counts(vps, "views_per_split");
                    ds = subsample(ds, {{"train", k[0]}, {"val", k[1]}, {"test", k[2]}});
                }
                const CascadeState st = resume_cascade(c_out, ds, cfg.arch, cfg.cascade);
                std::printf("stages %zu stop %s\n", st.stages.size(), st.stop_reason.c_str());
                return 0;
            }
            if (c_data.empty()) throw UsageError("cascade needs --data (or --resume)");
            std::vector<std::pair<std::string, std::string>> flags;
            bool synthetic_source = false;
            if (!c_source.empty()) {
                synthetic_source = parse_prompt_source(c_source) != PromptSourceKind::Rendered;
                flags.push_back({"cascade.prompt_source", c_source});
            }
            if (!c_stages.empty()) {
                if (c_stages == "1-prompted") {
                    flags.push_back({"cascade.max_stages", "2"});
                } else {
                    flags.push_back({"cascade.max_stages", c_stages});
                }
            } else if (synthetic_source) {
                flags.push_back({"cascade.max_stages", "2"});
            }
            if (c_threshold) {
                if (synthetic_source) throw UsageError("--threshold conflicts with a fixed (non-rendered) prompt source");
                flags.push_back({"cascade.stop_threshold", detail::fmt_double(*c_threshold)});
            }
            if (!c_site.empty()) flags.push_back({"cascade.prompt_site", c_site});
            if (c_warm) {
                flags.push_back({"cascade.warm_start", *c_warm ? "true" : "false"});
                flags.push_back({"cascade.warm_start_first", *c_warm ? "true" : "false"});
            }
            RunConfig cfg = c_cfg.build(flags);
            SceneDataset ds = load_dataset(c_data);
            if (!c_views.empty()) {
                const auto k = parse_counts(c_views, "--views-per-split");
                ds = subsample(ds, {{"train", k[0]}, {"val", k[1]}, {"test", k[2]}});
            }
            RunInfo info{fs::absolute(c_data).string(), config_effective(cfg), c_views};
            CascadeHooks hooks;
            hooks.on_stage = [](const StageRecord &r) {
                std::printf("stage %d: val psnr %.4f ssim %.4f%s\n", r.stage, r.val_psnr, r.val_ssim,
                            r.bank_distance ? (" bank distance " + detail::fmt_num(*r.bank_distance)).c_str() : "");
                std::fflush(stdout);
            };
            const CascadeState st = run_cascade(ds, cfg.arch, cfg.cascade, c_out, info, hooks);
            std::printf("stages %zu stop %s\n", st.stages.size(), st.stop_reason.c_str());
            return 0;
        }

        if (*ev) {
            const SceneDataset ds = load_dataset(e_data);
            const Checkpoint ck = load_checkpoint(e_ck);
            std::optional<PromptBank> slot;
            const PromptBank *bank = maybe_bank(e_prompts, slot);
            require_bank_for(ck, bank, e_ck);
            if (ds.split(e_split).empty()) throw UsageError("split '" + e_split + "' is empty");
            const MetricReport rep = evaluate_split(ck.params, ck.arch, ds, e_split, render_cfg_for(ck, e_coarse, e_fine),
                                                    bank, e_workers);
            std::ostringstream csv;
            csv << "stage,split,view_id,psnr,ssim,depth_mse\n";
            for (const auto &row : detail::split_rows(ck.stage, e_split, rep)) {
                csv << row.stage << ',' << row.split << ',' << row.view_id << ',' << detail::fmt_num(row.psnr) << ','
                    << detail::fmt_num(row.ssim) << ',' << (row.depth_mse ? detail::fmt_num(*row.depth_mse) : "") << '\n';
            }
            if (e_out.empty()) {
                std::cout << csv.str();
            } else {
                detail::ensure_parent(e_out);
                std::ofstream(e_out) << csv.str();
            }
            return 0;
        }

        if (*rn) {
            const SceneDataset ds = load_dataset(n_data);
            const Checkpoint ck = load_checkpoint(n_ck);
            std::optional<PromptBank> slot;
            const PromptBank *bank = maybe_bank(n_prompts, slot);
            require_bank_for(ck, bank, n_ck);
            const View &v = ds.view(n_view);
            const ViewRender r = render_view(ck.params, ck.arch, ds.intrinsics, v.pose, ds.t_near, ds.t_far,
                                             render_cfg_for(ck, n_coarse, n_fine), bank ? &bank->image(n_view) : nullptr,
                                             n_workers);
            write_png(n_out + ".png", r.rgb);
            write_f32(n_out + ".f32.bin", r.rgb);
            Image depth_vis(r.depth.width, r.depth.height, 1);
            for (std::size_t i = 0; i < depth_vis.data.size(); ++i) {
                depth_vis.data[i] = (ds.t_far - r.depth.data[i]) / (ds.t_far - ds.t_near);
            }
            write_png(n_out + ".depth.png", depth_vis);
            write_f32(n_out + ".depth.f32.bin", r.depth);
            return 0;
        }
    } catch (const std::exception &e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
