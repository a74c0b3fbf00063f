#include "test_util.hpp"

#include "vpt/cascade.hpp"

#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

using namespace vpt;
using vpt::testing::scratch_dir;
using vpt::testing::tiny_dataset;

namespace {

FieldArch small_arch() {
    FieldArch a;
    a.trunk_depth = 2;
    a.trunk_width = 16;
    a.skip_at = 0;
    a.dir_branch_width = 8;
    a.pos_freqs = 4;
    a.dir_freqs = 2;
    return a;
}

CascadeConfig quick(int max_stages, double threshold = 0.0) {
    CascadeConfig c;
    c.max_stages = max_stages;
    c.stop_threshold = threshold;
    c.train.iterations = 8;
    c.train.batch_rays = 64;
    c.train.learning_rate = 2e-3;
    c.train.chunk_rays = 32;
    c.train.render = RenderConfig{8, 0, true, true};
    c.seed = 5;
    return c;
}

std::string slurp(const std::filesystem::path &p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

} // namespace

TEST(Cascade, SingleStageBuildsOnlyFirstBank) {
    const auto dir = scratch_dir();
    const auto ds = tiny_dataset(12, 2, 1, 1);
    const CascadeState st = run_cascade(ds, small_arch(), quick(1), dir / "run");
    ASSERT_EQ(st.stages.size(), 1u);
    EXPECT_TRUE(st.finished);
    EXPECT_EQ(st.stop_reason, "max_stages");
    EXPECT_TRUE(std::filesystem::exists(dir / "run/prompts/stage_0/manifest.json"));
    EXPECT_FALSE(std::filesystem::exists(dir / "run/prompts/stage_1"));
    EXPECT_FALSE(st.stage(0).bank_distance.has_value());
    EXPECT_TRUE(st.stage(0).input_bank.empty());
    const Checkpoint ck = load_checkpoint(dir / "run/stage_0/checkpoint");
    EXPECT_EQ(ck.arch.prompt_site, PromptSite::None);
    EXPECT_FALSE(ck.prompt.has_value());
}

TEST(Cascade, ThresholdOneStopsAfterStageOne) {
    const auto dir = scratch_dir();
    const auto ds = tiny_dataset(12, 2, 1, 1);
    const CascadeState st = run_cascade(ds, small_arch(), quick(6, 1.0), dir / "run");
    ASSERT_EQ(st.stages.size(), 2u);
    EXPECT_EQ(st.stop_reason, "threshold");
    ASSERT_TRUE(st.stage(1).bank_distance.has_value());
    EXPECT_LE(*st.stage(1).bank_distance, 1.0);
}

TEST(Cascade, StagesChainBanksAndKeepViewsConsistent) {
    const auto dir = scratch_dir();
    const auto ds = tiny_dataset(12, 2, 1, 1);
    const CascadeConfig cfg = quick(3);
    const CascadeState st = run_cascade(ds, small_arch(), cfg, dir / "run");
    ASSERT_EQ(st.stages.size(), 3u);
    EXPECT_EQ(st.stop_reason, "max_stages");

    std::vector<PromptBank> banks;
    for (int i = 0; i < 3; ++i) {
        EXPECT_EQ(st.stage(i).stage, i);
        banks.push_back(load_bank(dir / "run" / st.stage(i).bank));
        EXPECT_EQ(bank_content_hash(banks.back()), st.stage(i).bank_hash);
        EXPECT_EQ(banks.back().stage, i);
        EXPECT_EQ(banks.back().view_ids(), banks.front().view_ids());
        EXPECT_EQ(banks.back().view_split, banks.front().view_split);
        EXPECT_EQ(sha256_file((dir / "run" / st.stage(i).checkpoint).string()), st.stage(i).checkpoint_hash);
        EXPECT_EQ(banks.back().checkpoint_hash, st.stage(i).checkpoint_hash);
    }
    EXPECT_EQ(banks.front().view_ids().size(), 4u);
    EXPECT_EQ(st.stage(1).input_bank, "prompts/stage_0");
    EXPECT_EQ(st.stage(2).input_bank, "prompts/stage_1");
    EXPECT_DOUBLE_EQ(*st.stage(1).bank_distance, bank_distance(banks[1], banks[0]));
    EXPECT_DOUBLE_EQ(*st.stage(2).bank_distance, bank_distance(banks[2], banks[1]));

    // C_0 is exactly the stage-0 checkpoint rendered over every split.
    const Checkpoint ck0 = load_checkpoint(dir / "run/stage_0/checkpoint");
    const PromptBank rebuilt = build_bank(ck0.params, ck0.arch, ds, cfg.train.render, {"train", "val", "test"}, 0,
                                          st.stage(0).checkpoint_hash);
    EXPECT_TRUE(rebuilt == banks[0]);

    const Checkpoint ck1 = load_checkpoint(dir / "run/stage_1/checkpoint");
    EXPECT_EQ(ck1.arch.prompt_site, PromptSite::Direction);
    ASSERT_TRUE(ck1.prompt.has_value());
    EXPECT_EQ(ck1.prompt->bank_stage, 0);
    EXPECT_EQ(ck1.prompt->source, "rendered");
    EXPECT_EQ(ck1.arch.pos_scale, ck0.arch.pos_scale);
    EXPECT_GT(ck0.arch.pos_scale, 0.0);
}

TEST(Cascade, IterationBudgetShrinks) {
    CascadeConfig c;
    c.train.iterations = 1000;
    EXPECT_EQ(c.iterations_for(0), 1000);
    EXPECT_EQ(c.iterations_for(1), 750);
    EXPECT_EQ(c.iterations_for(2), 563);
    c.min_iterations = 600;
    EXPECT_EQ(c.iterations_for(2), 600);
    c.iteration_shrink = 1.0;
    EXPECT_EQ(c.iterations_for(5), 1000);
}

TEST(Cascade, WarmStartPolicy) {
    CascadeConfig c;
    EXPECT_FALSE(c.warm_for(0));
    EXPECT_FALSE(c.warm_for(1));  // the first prompted stage starts fresh by default
    EXPECT_TRUE(c.warm_for(2));
    c.warm_start = false;
    EXPECT_FALSE(c.warm_for(3));
    c.warm_start_first = true;
    EXPECT_TRUE(c.warm_for(1));

    const auto dir = scratch_dir();
    const auto ds = tiny_dataset(12, 2, 1, 1);
    run_cascade(ds, small_arch(), quick(2), dir / "cold");
    EXPECT_FALSE(load_checkpoint(dir / "cold/stage_1/checkpoint").meta.at("warm_started").get<bool>());
    CascadeConfig warm = quick(2);
    warm.warm_start_first = true;
    run_cascade(ds, small_arch(), warm, dir / "warm");
    EXPECT_TRUE(load_checkpoint(dir / "warm/stage_1/checkpoint").meta.at("warm_started").get<bool>());
}

TEST(Cascade, SyntheticSourceRunsOnePromptedStage) {
    const auto dir = scratch_dir();
    const auto ds = tiny_dataset(12, 2, 1, 1);
    CascadeConfig c = quick(2);
    c.prompt_source = {PromptSourceKind::GroundTruth};
    const CascadeState st = run_cascade(ds, small_arch(), c, dir / "gt");
    ASSERT_EQ(st.stages.size(), 2u);
    EXPECT_EQ(st.stop_reason, "fixed_prompt");
    EXPECT_EQ(st.stage(1).input_bank, "prompts/ground_truth");
    const PromptBank gt = load_bank(dir / "gt/prompts/ground_truth");
    EXPECT_TRUE(gt == synth_bank(c.prompt_source, ds, {"train", "val", "test"}));
    const Checkpoint ck = load_checkpoint(dir / "gt/stage_1/checkpoint");
    EXPECT_EQ(ck.prompt->source, "ground_truth");
    EXPECT_EQ(ck.prompt->bank_stage, kSyntheticStage);

    c.max_stages = 3;
    EXPECT_THROW(c.validate(), UsageError);
}

TEST(Cascade, ConfigValidation) {
    CascadeConfig c;
    c.max_stages = 0;
    EXPECT_THROW(c.validate(), UsageError);
    c = {};
    c.stop_threshold = -1.0;
    EXPECT_THROW(c.validate(), UsageError);
    c = {};
    c.prompt_site = PromptSite::None;
    EXPECT_THROW(c.validate(), UsageError);
    EXPECT_NO_THROW(CascadeConfig{}.validate());
}

TEST(Cascade, RequiresTrainAndValViews) {
    const auto dir = scratch_dir();
    auto ds = tiny_dataset(12, 2, 1, 1);
    ds.splits["val"].clear();
    EXPECT_THROW(run_cascade(ds, small_arch(), quick(1), dir / "a"), UsageError);
}

TEST(Cascade, RefusesExistingRunDirectory) {
    const auto dir = scratch_dir();
    const auto ds = tiny_dataset(12, 2, 1, 1);
    run_cascade(ds, small_arch(), quick(1), dir / "run");
    EXPECT_THROW(run_cascade(ds, small_arch(), quick(1), dir / "run"), UsageError);
}

TEST(Cascade, RunManifestAndMetrics) {
    const auto dir = scratch_dir();
    const auto ds = tiny_dataset(12, 2, 1, 1);
    RunInfo info{"/data/x", {{"seed", "5"}}, "2,1,1"};
    run_cascade(ds, small_arch(), quick(2), dir / "run", info);
    const auto run = detail::read_json(dir / "run/run.json");
    EXPECT_EQ(run.at("dataset").at("hash"), dataset_hash(ds));
    EXPECT_EQ(run.at("config").at("seed"), "5");
    EXPECT_NE(run.at("protocol").get<std::string>().find("transductive"), std::string::npos);
    std::ifstream m(dir / "run/metrics.csv");
    std::string line;
    std::getline(m, line);
    EXPECT_EQ(line, "stage,split,view_id,psnr,ssim,depth_mse");
    int rows = 0;
    while (std::getline(m, line)) ++rows;
    // Per stage: one val view + mean, one test view + mean.
    EXPECT_EQ(rows, 2 * 4);
    EXPECT_TRUE(std::filesystem::exists(dir / "run/timing.csv"));
    EXPECT_TRUE(std::filesystem::exists(dir / "run/stage_1/log.jsonl"));
}

TEST(Cascade, WorkerCountDoesNotChangeArtifacts) {
    const auto dir = scratch_dir();
    const auto ds = tiny_dataset(12, 2, 1, 1);
    CascadeConfig c = quick(2);
    run_cascade(ds, small_arch(), c, dir / "w1");
    c.train.workers = 4;
    run_cascade(ds, small_arch(), c, dir / "w4");
    EXPECT_EQ(slurp(dir / "w1/metrics.csv"), slurp(dir / "w4/metrics.csv"));
    EXPECT_EQ(slurp(dir / "w1/stage_1/checkpoint"), slurp(dir / "w4/stage_1/checkpoint"));
}

TEST(Cascade, ResumeMatchesUninterruptedRun) {
    const auto dir = scratch_dir();
    const auto ds = tiny_dataset(12, 2, 1, 1);
    const CascadeConfig full = quick(3);
    run_cascade(ds, small_arch(), full, dir / "full");

    CascadeConfig cut = full;
    cut.halt_after_stage = 1;
    const CascadeState partial = run_cascade(ds, small_arch(), cut, dir / "cut");
    EXPECT_EQ(partial.stages.size(), 2u);
    EXPECT_FALSE(partial.finished);
    EXPECT_EQ(partial.stop_reason, "halted");
    const CascadeState resumed = resume_cascade(dir / "cut", ds, small_arch(), full);
    ASSERT_EQ(resumed.stages.size(), 3u);
    EXPECT_TRUE(resumed.finished);
    for (int i = 0; i < 3; ++i) {
        EXPECT_EQ(slurp(dir / "full" / detail::stage_dir(i) / "checkpoint"), slurp(dir / "cut" / detail::stage_dir(i) / "checkpoint"))
            << i;
    }
    EXPECT_EQ(slurp(dir / "full/metrics.csv"), slurp(dir / "cut/metrics.csv"));

    // A finished run resumes as a no-op.
    const auto before = slurp(dir / "cut/state.json");
    const CascadeState again = resume_cascade(dir / "cut", ds, small_arch(), full);
    EXPECT_EQ(again.stages.size(), 3u);
    EXPECT_EQ(slurp(dir / "cut/state.json"), before);
}

TEST(Cascade, ResumeDetectsMismatchAndCorruption) {
    const auto dir = scratch_dir();
    const auto ds = tiny_dataset(12, 2, 1, 1);
    CascadeConfig cut = quick(3);
    cut.halt_after_stage = 0;
    run_cascade(ds, small_arch(), cut, dir / "run");
    EXPECT_THROW(resume_cascade(dir / "run", tiny_dataset(12, 2, 1, 1, "boxes"), small_arch(), quick(3)), IntegrityError);

    std::filesystem::copy(dir / "run", dir / "bad_ck", std::filesystem::copy_options::recursive);
    {
        std::ofstream(dir / "bad_ck/stage_0/checkpoint", std::ios::app) << "x";
    }
    EXPECT_THROW(resume_cascade(dir / "bad_ck", ds, small_arch(), quick(3)), IntegrityError);

    std::filesystem::copy(dir / "run", dir / "bad_state", std::filesystem::copy_options::recursive);
    {
        std::ofstream(dir / "bad_state/state.json", std::ios::trunc) << "{\"stages\": 3";
    }
    EXPECT_THROW(resume_cascade(dir / "bad_state", ds, small_arch(), quick(3)), IntegrityError);
}

TEST(Cascade, FailurePersistsPartialState) {
    const auto dir = scratch_dir();
    const auto ds = tiny_dataset(12, 2, 1, 1);
    bool stage0_done = false;
    CascadeHooks hooks;
    hooks.on_stage = [&](const StageRecord &) { stage0_done = true; };
    hooks.on_iteration = [&](const IterRecord &r) {
        if (stage0_done && r.iter == 3) throw Error("injected failure");
    };
    EXPECT_THROW(run_cascade(ds, small_arch(), quick(3), dir / "run", {}, hooks), Error);
    const CascadeState st = load_cascade_state(dir / "run");
    EXPECT_EQ(st.stages.size(), 1u);
    EXPECT_EQ(st.stop_reason, "error");
    EXPECT_FALSE(st.finished);
    // The failed stage can be redone.
    const CascadeState resumed = resume_cascade(dir / "run", ds, small_arch(), quick(3));
    EXPECT_EQ(resumed.stages.size(), 3u);
}

TEST(Cascade, StopReasonThresholdImpliesSmallDistance) {
    const auto dir = scratch_dir();
    const auto ds = tiny_dataset(12, 2, 1, 1);
    const CascadeState st = run_cascade(ds, small_arch(), quick(4, 0.05), dir / "run");
    if (st.stop_reason == "threshold") {
        EXPECT_LE(*st.stages.back().bank_distance, 0.05);
    } else {
        EXPECT_EQ(st.stop_reason, "max_stages");
        EXPECT_EQ(st.stages.size(), 4u);
        for (std::size_t i = 1; i < st.stages.size(); ++i) EXPECT_GT(*st.stages[i].bank_distance, 0.05);
    }
}
