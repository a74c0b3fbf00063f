#pragma once

#include "vpt/field.hpp"
#include "vpt/hash.hpp"
#include "vpt/metrics.hpp"
#include "vpt/prompt_bank.hpp"
#include "vpt/scene.hpp"
#include "vpt/trainer.hpp"

#include <nlohmann/json.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace vpt {

struct CascadeConfig {
    int max_stages = 6;
    double stop_threshold = 0.002;
    bool warm_start = true;         // stages >= 2 start from stage i-1
    bool warm_start_first = false;  // stage 1 starts from stage 0 (zero prompt columns)
    PromptSite prompt_site = PromptSite::Direction;
    PromptSource prompt_source;     // rendered = the cascade proper
    double iteration_shrink = 0.75;
    int min_iterations = 1;
    std::uint64_t seed = 0;
    TrainConfig train;              // stage-0 budget; train.seed is replaced per stage
    int halt_after_stage = -1;      // test hook: stop (unfinished) after this stage

    bool synthetic() const { return prompt_source.kind != PromptSourceKind::Rendered; }

    void validate() const {
        if (max_stages < 1) throw UsageError("cascade: max_stages must be >= 1");
        if (!(stop_threshold >= 0.0)) throw UsageError("cascade: stop_threshold must be >= 0");
        if (prompt_site == PromptSite::None) throw UsageError("cascade: prompt_site must be direction or position");
        if (!(iteration_shrink > 0.0)) throw UsageError("cascade: iteration_shrink must be > 0");
        if (min_iterations < 1) throw UsageError("cascade: min_iterations must be >= 1");
        if (synthetic() && max_stages != 2) {
            throw UsageError(std::string("cascade: a ") + prompt_source_name(prompt_source.kind) +
                             " prompt source fixes a single prompted stage (max_stages must be 2)");
        }
        prompt_source.validate();
        train.validate();
    }

    int iterations_for(int stage) const {
        const double it = train.iterations * std::pow(iteration_shrink, stage);
        return std::max(min_iterations, static_cast<int>(std::lround(it)));
    }

    bool warm_for(int stage) const { return stage == 1 ? warm_start_first : stage >= 2 && warm_start; }
};

struct MetricRow {
    int stage = 0;
    std::string split;
    std::string view_id;  // "mean" for the per-split summary row
    double psnr = 0.0;
    double ssim = 0.0;
    std::optional<double> depth_mse;
};

struct StageRecord {
    int stage = 0;
    int iterations = 0;
    std::string checkpoint;       // relative to the run directory
    std::string checkpoint_hash;  // sha256 of the file
    std::string bank;             // relative path of C_stage
    std::string bank_hash;        // content hash of C_stage
    std::string input_bank;       // relative path of the bank this stage consumed, if any
    std::optional<double> bank_distance;  // |C_stage - C_{stage-1}|
    double val_psnr = 0.0;
    double val_ssim = 0.0;
    std::optional<double> val_depth_mse;
    double train_time = 0.0;
    std::vector<MetricRow> metrics;
};

struct CascadeState {
    std::filesystem::path run_dir;
    std::vector<StageRecord> stages;
    std::string stop_reason;  // threshold | max_stages | fixed_prompt | halted | error
    bool finished = false;

    const StageRecord &stage(int i) const { return stages.at(static_cast<std::size_t>(i)); }
};

namespace detail {

inline nlohmann::json opt_json(const std::optional<double> &v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); }

inline std::optional<double> opt_from(const nlohmann::json &j) {
    if (j.is_null()) return std::nullopt;
    return j.get<double>();
}

inline nlohmann::json state_to_json(const CascadeState &s) {
    nlohmann::json stages = nlohmann::json::array();
    for (const auto &r : s.stages) {
        nlohmann::json rows = nlohmann::json::array();
        for (const auto &m : r.metrics) {
            rows.push_back({{"stage", m.stage}, {"split", m.split}, {"view_id", m.view_id}, {"psnr", m.psnr},
                            {"ssim", m.ssim}, {"depth_mse", opt_json(m.depth_mse)}});
        }
        stages.push_back({{"stage", r.stage},
                          {"iterations", r.iterations},
                          {"checkpoint", r.checkpoint},
                          {"checkpoint_hash", r.checkpoint_hash},
                          {"bank", r.bank},
                          {"bank_hash", r.bank_hash},
                          {"input_bank", r.input_bank},
                          {"bank_distance", opt_json(r.bank_distance)},
                          {"val_psnr", r.val_psnr},
                          {"val_ssim", r.val_ssim},
                          {"val_depth_mse", opt_json(r.val_depth_mse)},
                          {"train_time", r.train_time},
                          {"metrics", rows}});
    }
    return {{"stages", stages}, {"stop_reason", s.stop_reason}, {"finished", s.finished}};
}

inline CascadeState state_from_json(const nlohmann::json &j, const std::filesystem::path &run_dir) {
    CascadeState s;
    s.run_dir = run_dir;
    s.stop_reason = j.at("stop_reason").get<std::string>();
    s.finished = j.at("finished").get<bool>();
    for (const auto &r : j.at("stages")) {
        StageRecord rec;
        rec.stage = r.at("stage").get<int>();
        rec.iterations = r.at("iterations").get<int>();
        rec.checkpoint = r.at("checkpoint").get<std::string>();
        rec.checkpoint_hash = r.at("checkpoint_hash").get<std::string>();
        rec.bank = r.at("bank").get<std::string>();
        rec.bank_hash = r.at("bank_hash").get<std::string>();
        rec.input_bank = r.at("input_bank").get<std::string>();
        rec.bank_distance = opt_from(r.at("bank_distance"));
        rec.val_psnr = r.at("val_psnr").get<double>();
        rec.val_ssim = r.at("val_ssim").get<double>();
        rec.val_depth_mse = opt_from(r.at("val_depth_mse"));
        rec.train_time = r.at("train_time").get<double>();
        for (const auto &m : r.at("metrics")) {
            rec.metrics.push_back({m.at("stage").get<int>(), m.at("split").get<std::string>(),
                                   m.at("view_id").get<std::string>(), m.at("psnr").get<double>(),
                                   m.at("ssim").get<double>(), opt_from(m.at("depth_mse"))});
        }
        if (rec.stage != static_cast<int>(s.stages.size())) throw IntegrityError("state.json: stage indices are not contiguous");
        s.stages.push_back(std::move(rec));
    }
    return s;
}

inline std::string fmt_num(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

// metrics.csv holds only deterministic quantities; timings go to timing.csv.
inline void write_metrics_files(const CascadeState &s) {
    std::ofstream m(s.run_dir / "metrics.csv", std::ios::trunc);
    m << "stage,split,view_id,psnr,ssim,depth_mse\n";
    for (const auto &r : s.stages) {
        for (const auto &row : r.metrics) {
            m << row.stage << ',' << row.split << ',' << row.view_id << ',' << fmt_num(row.psnr) << ','
              << fmt_num(row.ssim) << ',' << (row.depth_mse ? fmt_num(*row.depth_mse) : std::string()) << '\n';
        }
    }
    std::ofstream t(s.run_dir / "timing.csv", std::ios::trunc);
    t << "stage,iterations,wall_time\n";
    for (const auto &r : s.stages) t << r.stage << ',' << r.iterations << ',' << fmt_num(r.train_time) << '\n';
}

inline void persist_state(const CascadeState &s) {
    write_json(s.run_dir / "state.json", state_to_json(s));
    write_metrics_files(s);
}

inline std::vector<MetricRow> split_rows(int stage, const std::string &split, const MetricReport &rep) {
    std::vector<MetricRow> rows;
    for (const auto &v : rep.views) rows.push_back({stage, split, v.view_id, v.psnr, v.ssim, v.depth_mse});
    rows.push_back({stage, split, "mean", rep.mean_psnr(), rep.mean_ssim(), rep.mean_depth_mse()});
    return rows;
}

inline std::string stage_dir(int i) { return "stage_" + std::to_string(i); }
inline std::string bank_dir(int i) { return "prompts/stage_" + std::to_string(i); }
inline std::string synthetic_bank_dir(PromptSourceKind k) { return std::string("prompts/") + prompt_source_name(k); }

} // namespace detail

using StageCallback = std::function<void(const StageRecord &)>;

struct CascadeHooks {
    StageCallback on_stage;
    ProgressFn on_iteration;
};

namespace detail {

// Runs stages state.stages.size() .. until a stop condition. Assumes the run
// directory, run.json and any completed stages are already on disk.
inline void continue_cascade(CascadeState &state, const SceneDataset &ds, const FieldArch &arch_base,
                             const CascadeConfig &cfg, const CascadeHooks &hooks) {
    namespace fs = std::filesystem;
    const std::vector<std::string> bank_splits{"train", "val", "test"};
    std::vector<std::string> present;
    for (const auto &s : bank_splits) {
        if (!ds.split(s).empty()) present.push_back(s);
    }

    // Material carried between stages.
    std::optional<Checkpoint> prev_ck;
    std::optional<PromptBank> prev_bank;  // C_{i-1}
    std::optional<PromptBank> synthetic;
    if (cfg.synthetic()) {
        const fs::path sp = state.run_dir / synthetic_bank_dir(cfg.prompt_source.kind);
        if (fs::exists(sp / "manifest.json")) {
            synthetic = load_bank(sp);
            if (!(*synthetic == synth_bank(cfg.prompt_source, ds, present))) {
                throw IntegrityError("synthetic prompt bank on disk differs from its regenerated content");
            }
        } else {
            synthetic = synth_bank(cfg.prompt_source, ds, present);
            save_bank(*synthetic, sp);
        }
    }
    if (!state.stages.empty()) {
        const StageRecord &last = state.stages.back();
        const fs::path ckp = state.run_dir / last.checkpoint;
        if (sha256_file(ckp.string()) != last.checkpoint_hash) {
            throw IntegrityError("checkpoint " + ckp.string() + " does not match its recorded hash");
        }
        prev_ck = load_checkpoint(ckp);
        prev_bank = load_bank(state.run_dir / last.bank);
        if (bank_content_hash(*prev_bank) != last.bank_hash) {
            throw IntegrityError("prompt bank " + last.bank + " does not match its recorded hash");
        }
    }

    try {
        for (int i = static_cast<int>(state.stages.size()); i < cfg.max_stages; ++i) {
            const FieldArch arch = resolve_arch(arch_base, ds).with_prompt(i == 0 ? PromptSite::None : cfg.prompt_site);
            TrainConfig tc = cfg.train;
            tc.iterations = cfg.iterations_for(i);
            tc.seed = derive_seed({cfg.seed, static_cast<std::uint64_t>(i)});

            const PromptBank *input = nullptr;
            StageRecord rec;
            rec.stage = i;
            rec.iterations = tc.iterations;
            if (i > 0) {
                input = cfg.synthetic() ? &*synthetic : &*prev_bank;
                rec.input_bank = cfg.synthetic() ? synthetic_bank_dir(cfg.prompt_source.kind) : bank_dir(i - 1);
            }
            const ParamStore *warm = cfg.warm_for(i) && prev_ck ? &prev_ck->params : nullptr;
            StageResult sr = train_stage(ds, input, arch, tc, warm, hooks.on_iteration);

            Checkpoint ck;
            ck.arch = arch;
            ck.stage = i;
            ck.seed = tc.seed;
            if (input) ck.prompt = PromptRequirement{input->stage, prompt_source_name(input->source.kind)};
            ck.meta = {{"warm_started", warm != nullptr}, {"iterations", tc.iterations},
                       {"n_coarse", tc.render.n_coarse}, {"n_fine", tc.render.n_fine}};
            ck.params = std::move(sr.params);
            rec.checkpoint = stage_dir(i) + "/checkpoint";
            const fs::path ckp = state.run_dir / rec.checkpoint;
            save_checkpoint(ck, ckp);
            rec.checkpoint_hash = sha256_file(ckp.string());
            sr.log.checkpoint = rec.checkpoint;
            sr.log.write_jsonl(state.run_dir / stage_dir(i) / "log.jsonl");
            rec.train_time = sr.log.wall_time;

            PromptBank bank = build_bank(ck.params, arch, ds, tc.render, present, i, rec.checkpoint_hash, input,
                                         tc.workers);
            rec.bank = bank_dir(i);
            save_bank(bank, state.run_dir / rec.bank);
            rec.bank_hash = bank_content_hash(bank);

            RenderConfig eval_cfg = tc.render;
            eval_cfg.perturb = false;
            for (const auto &split : {std::string("val"), std::string("test")}) {
                if (ds.split(split).empty()) continue;
                const MetricReport rep = evaluate_split(ck.params, arch, ds, split, eval_cfg, input, tc.workers);
                if (split == "val") {
                    rec.val_psnr = rep.mean_psnr();
                    rec.val_ssim = rep.mean_ssim();
                    rec.val_depth_mse = rep.mean_depth_mse();
                }
                const auto rows = split_rows(i, split, rep);
                rec.metrics.insert(rec.metrics.end(), rows.begin(), rows.end());
            }

            bool stop = false;
            if (i > 0 && !cfg.synthetic()) {
                rec.bank_distance = bank_distance(bank, *prev_bank);
                if (*rec.bank_distance <= cfg.stop_threshold) {
                    state.stop_reason = "threshold";
                    stop = true;
                }
            }
            if (!stop && i + 1 >= cfg.max_stages) {
                state.stop_reason = cfg.synthetic() ? "fixed_prompt" : "max_stages";
                stop = true;
            }
            state.stages.push_back(std::move(rec));
            state.finished = stop;
            if (!stop && cfg.halt_after_stage == i) state.stop_reason = "halted";
            persist_state(state);
            if (hooks.on_stage) hooks.on_stage(state.stages.back());
            if (stop || cfg.halt_after_stage == i) return;

            prev_ck = std::move(ck);
            prev_bank = std::move(bank);
        }
    } catch (...) {
        state.stop_reason = "error";
        state.finished = false;
        persist_state(state);
        throw;
    }
}

} // namespace detail

// Extra provenance recorded in run.json.
struct RunInfo {
    std::string dataset_path;
    std::map<std::string, std::string> effective_config;  // dotted key -> value
    std::string views_per_split;
};

inline CascadeState run_cascade(const SceneDataset &ds, const FieldArch &arch_base, const CascadeConfig &cfg,
                                const std::filesystem::path &run_dir, const RunInfo &info = {},
                                const CascadeHooks &hooks = {}) {
    namespace fs = std::filesystem;
    cfg.validate();
    arch_base.validate();
    if (ds.split("train").empty() || ds.split("val").empty()) {
        throw UsageError("cascade: dataset needs non-empty train and val splits");
    }
    if (fs::exists(run_dir / "run.json")) {
        throw UsageError("run directory " + run_dir.string() + " already holds a run; use resume");
    }
    fs::create_directories(run_dir);
    nlohmann::json cfg_json = nlohmann::json::object();
    for (const auto &[k, v] : info.effective_config) cfg_json[k] = v;
    const nlohmann::json run{
        {"format", "vpt-run-v1"},
        {"dataset", {{"path", info.dataset_path}, {"hash", dataset_hash(ds)}, {"views_per_split", info.views_per_split}}},
        {"seed", cfg.seed},
        {"config", cfg_json},
        {"arch_base", arch_to_json(arch_base)},
        {"protocol",
         "transductive: prompt banks are rendered for train, val and test poses, so test poses are known during "
         "training"}};
    detail::write_json(run_dir / "run.json", run);
    CascadeState state;
    state.run_dir = run_dir;
    detail::continue_cascade(state, ds, arch_base, cfg, hooks);
    return state;
}

inline CascadeState load_cascade_state(const std::filesystem::path &run_dir) {
    const auto p = run_dir / "state.json";
    try {
        return detail::state_from_json(detail::read_json(p), run_dir);
    } catch (const nlohmann::json::exception &e) {
        throw IntegrityError("corrupted " + p.string() + ": " + e.what());
    } catch (const ParseError &e) {
        throw IntegrityError(std::string("cannot read cascade state: ") + e.what());
    }
}

// Continues a run from its last completed stage. The caller supplies the
// configuration reconstructed from run.json (see config.hpp); the dataset
// must hash to the recorded value.
inline CascadeState resume_cascade(const std::filesystem::path &run_dir, const SceneDataset &ds,
                                   const FieldArch &arch_base, CascadeConfig cfg, const CascadeHooks &hooks = {}) {
    const auto run = detail::read_json(run_dir / "run.json");
    std::string recorded;
    try {
        recorded = run.at("dataset").at("hash").get<std::string>();
    } catch (const nlohmann::json::exception &e) {
        throw IntegrityError("corrupted run.json: " + std::string(e.what()));
    }
    if (dataset_hash(ds) != recorded) throw IntegrityError("dataset hash differs from the one recorded in run.json");
    CascadeState state = std::filesystem::exists(run_dir / "state.json") ? load_cascade_state(run_dir) : CascadeState{};
    state.run_dir = run_dir;
    if (state.finished) return state;
    cfg.halt_after_stage = -1;
    cfg.validate();
    detail::continue_cascade(state, ds, arch_base, cfg, hooks);
    return state;
}

} // namespace vpt
