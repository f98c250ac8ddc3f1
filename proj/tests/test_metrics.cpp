#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "lslp/config.hpp"
#include "lslp/error.hpp"
#include "lslp/metrics.hpp"
#include "lslp/plot.hpp"
#include "lslp/synthgen.hpp"
#include "support.hpp"

using namespace lslp;
using namespace lslp::testing;
namespace fs = std::filesystem;

namespace {

Tensor mask_from(std::initializer_list<float> v, std::size_t h, std::size_t w) {
    Tensor t(Shape{h, w});
    std::copy(v.begin(), v.end(), t.raw());
    return t;
}

TrainConfig small_model() {
    TrainConfig c;
    c.arch.layers = {{8, true}, {16, true}};
    c.total_iterations = 0;
    return c;
}

Dataset small_corpus(double jitter = 0.03) {
    PhantomSpec s = default_phantom_spec();
    s.image_size = {32, 32};
    s.position_jitter = jitter;
    if (jitter == 0.0) {
        s.radius_jitter = 0.0;
        s.eccentricity_min = s.eccentricity_max = 1.0;
    }
    s.n_images = 30;
    s.n_test_images = 10;
    return generate_phantoms(s);
}

Checkpoint fresh_checkpoint(const TrainConfig& cfg, const Dataset& ds) {
    Checkpoint c;
    c.params = init_params(cfg.arch, 5);
    c.fingerprint = model_fingerprint(cfg, ds.shape);
    return c;
}

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("lslp_test_" + name);
    fs::remove_all(p);
    return p;
}

}  // namespace

TEST(Dice, Examples) {
    EXPECT_EQ(dice(mask_from({1, 1, 0, 0}, 2, 2), mask_from({1, 1, 0, 0}, 2, 2)), 1.0);
    EXPECT_EQ(dice(mask_from({1, 1, 0, 0}, 2, 2), mask_from({0, 0, 1, 1}, 2, 2)), 0.0);
    EXPECT_DOUBLE_EQ(dice(mask_from({1, 1, 0, 0}, 2, 2), mask_from({1, 0, 0, 0}, 2, 2)), 2.0 / 3.0);
    EXPECT_EQ(dice(Tensor(Shape{2, 2}), Tensor(Shape{2, 2})), 1.0);
    EXPECT_EQ(dice(mask_from({1, 0, 0, 0}, 2, 2), Tensor(Shape{2, 2})), 0.0);
    EXPECT_THROW(dice(Tensor(Shape{2, 2}), Tensor(Shape{2, 3})), ShapeError);
}

TEST(Dice, SymmetricBoundedAndMatchesOracle) {
    Rng rng(31);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t h = pick(rng, 1, 12), w = pick(rng, 1, 12);
        const Tensor a = random_mask({h, w}, rng, uniform(rng, 0, 1)), b = random_mask({h, w}, rng, uniform(rng, 0, 1));
        const double d = dice(a, b);
        EXPECT_EQ(d, dice(b, a));
        EXPECT_GE(d, 0.0);
        EXPECT_LE(d, 1.0);
        EXPECT_NEAR(d, naive_dice(a, b), 1e-12);
        EXPECT_EQ(dice(a, a), 1.0);
    }
}

TEST(Evaluate, RowCountAndDeterminism) {
    const Dataset ds = small_corpus();
    const TrainConfig cfg = small_model();
    const Checkpoint ck = fresh_checkpoint(cfg, ds);
    EvalConfig ec;
    ec.n_episodes = 6;
    ec.episode = {2, 1, 1};
    const EvalReport a = evaluate(ck, ds, cfg, ec);
    EXPECT_EQ(a.rows.size(), 12u);
    for (const auto& r : a.rows) {
        EXPECT_GE(r.segmentation_dice, 0.0);
        EXPECT_LE(r.segmentation_dice, 1.0);
        EXPECT_TRUE(r.class_id == 4 || r.class_id == 5);
    }
    EXPECT_EQ(evaluate(ck, ds, cfg, ec).rows, a.rows);

    ec.classes = {4};
    ec.episode = {1, 1, 1};
    for (const auto& r : evaluate(ck, ds, cfg, ec).rows) EXPECT_EQ(r.class_id, 4);
}

TEST(Evaluate, ZeroJitterGivesPerfectAlignment) {
    const Dataset ds = small_corpus(0.0);
    const TrainConfig cfg = small_model();
    EvalConfig ec;
    ec.n_episodes = 5;
    for (const auto& r : evaluate(fresh_checkpoint(cfg, ds), ds, cfg, ec).rows) {
        EXPECT_EQ(r.alignment_dice, 1.0);
        EXPECT_TRUE(std::isfinite(r.segmentation_dice));
    }
}

TEST(Evaluate, FingerprintMismatch) {
    const Dataset ds = small_corpus();
    const TrainConfig cfg = small_model();
    const Checkpoint ck = fresh_checkpoint(cfg, ds);
    TrainConfig other = cfg;
    other.alpha = 0.25;
    EvalConfig ec;
    ec.n_episodes = 2;
    EXPECT_THROW(evaluate(ck, ds, other, ec), ConfigError);
    ec.allow_mismatch = true;
    EXPECT_EQ(evaluate(ck, ds, other, ec).rows.size(), 2u);

    TrainConfig wider = cfg;
    wider.arch.layers.back().channels = 32;
    EXPECT_THROW(evaluate(ck, ds, wider, ec), ConfigError);
}

TEST(Evaluate, ClassesOutsideTestSplitAreRejected) {
    const Dataset ds = small_corpus();
    const TrainConfig cfg = small_model();
    EvalConfig ec;
    ec.classes = {1};
    EXPECT_THROW(evaluate(fresh_checkpoint(cfg, ds), ds, cfg, ec), ConfigError);
}

TEST(Report, CsvRoundTripAndSummaries) {
    EvalReport rep;
    rep.rows = {{1, 4, 0.5, 0.25}, {1, 5, 0.75, 0.5}, {2, 4, 0.125, 0.75}, {3, 5, 1.0 / 3.0, 0.1}};
    rep.classes = summarize(rep.rows);
    ASSERT_EQ(rep.classes.size(), 2u);
    EXPECT_EQ(rep.classes[0].class_id, 4);
    EXPECT_DOUBLE_EQ(rep.classes[0].mean, 0.5);
    EXPECT_DOUBLE_EQ(rep.classes[0].stddev, 0.25);
    EXPECT_DOUBLE_EQ(rep.classes[1].mean, 0.3);
    EXPECT_DOUBLE_EQ(rep.mean_dice(), 0.4);

    const fs::path p = scratch("report.csv");
    write_report_csv(p, rep);
    const EvalReport back = read_report_csv(p);
    EXPECT_EQ(back.rows, rep.rows);
    ASSERT_EQ(back.classes.size(), 2u);
    EXPECT_EQ(back.classes[1].mean, rep.classes[1].mean);

    std::ofstream(p) << "episode_seed,class_id,alignment_dice,segmentation_dice\n1,4,0.5,1.5\n";
    EXPECT_THROW(read_report_csv(p), DataError);
    std::ofstream(p) << "seed,class\n";
    EXPECT_THROW(read_report_csv(p), DataError);
    fs::remove(p);
}

TEST(Report, SummaryIndependentOfRowOrder) {
    Rng rng(9);
    std::vector<EvalRow> rows;
    for (std::uint64_t e = 0; e < 40; ++e) rows.push_back({e, static_cast<int>(pick(rng, 1, 3)), uniform(rng, 0, 1), uniform(rng, 0, 1)});
    const auto a = summarize(rows);
    std::reverse(rows.begin(), rows.end());
    const auto b = summarize(rows);
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        EXPECT_EQ(a[i].class_id, b[i].class_id);
        EXPECT_NEAR(a[i].mean, b[i].mean, 1e-12);
        EXPECT_EQ(a[i].episodes, b[i].episodes);
    }
}

TEST(Sweep, SingleSettingMatchesEvaluate) {
    const Dataset ds = small_corpus();
    TrainConfig cfg = small_model();
    cfg.total_iterations = 3;
    cfg.base_lr = 0.05;
    EvalConfig ec;
    ec.n_episodes = 4;
    const SweepSetting s{0.25, true};
    const auto rows = sweep_alpha(cfg, ds, ec, std::span<const SweepSetting>(&s, 1));
    ASSERT_EQ(rows.size(), 1u);
    TrainConfig direct = cfg;
    direct.alpha = 0.25;
    const TrainResult tr = train(direct, ds);
    EXPECT_EQ(rows[0].mean_dice, evaluate(tr.checkpoint, ds, direct, ec).mean_dice());
    EXPECT_EQ(rows[0].stride_fraction, 0.5);
}

TEST(Sweep, NoOverlapUsesFullStride) {
    const Dataset ds = small_corpus();
    const TrainConfig cfg = small_model();
    EvalConfig ec;
    ec.n_episodes = 2;
    const std::vector<SweepSetting> settings{{0.25, true}, {0.25, false}};
    SweepOptions opt;
    opt.fixed_params = init_params(cfg.arch, 5);
    const auto rows = sweep_alpha(cfg, ds, ec, settings, opt);
    ASSERT_EQ(rows.size(), 2u);
    EXPECT_EQ(rows[1].stride_fraction, 1.0);
    EXPECT_EQ(setting_label(settings[0]), "alpha_0.25_overlap");
    EXPECT_EQ(setting_label(settings[1]), "alpha_0.25_no_overlap");
}

TEST(Scatter, OnePointPerRowGroupedByClass) {
    EvalReport rep;
    rep.rows = {{1, 5, 0.5, 0.25}, {1, 4, 0.75, 0.5}, {2, 5, 0.125, 0.75}};
    const auto pts = misalignment_points(rep);
    ASSERT_EQ(pts.size(), 3u);
    EXPECT_EQ(pts[0], (ScatterPoint{4, 0.75, 0.5}));
    EXPECT_EQ(pts[1], (ScatterPoint{5, 0.5, 0.25}));
    EXPECT_EQ(pts[2], (ScatterPoint{5, 0.125, 0.75}));
    EXPECT_TRUE(misalignment_points(EvalReport{}).empty());

    const fs::path p = scratch("scatter.csv");
    write_scatter_csv(p, pts);
    EXPECT_EQ(read_scatter_csv(p), pts);
    fs::remove(p);
}

TEST(Plot, WritesPng) {
    const std::vector<ScatterPoint> pts{{4, 0.2, 0.3}, {5, 0.8, 0.9}};
    const fs::path p = scratch("scatter.png");
    write_png(p, misalignment_scatter_plot(pts));
    std::ifstream in(p, std::ios::binary);
    char sig[8] = {};
    in.read(sig, 8);
    EXPECT_EQ(std::string(sig + 1, 3), "PNG");
    fs::remove(p);
}

TEST(RunConfig, DefaultsRoundTripAndStrictness) {
    const RunConfig c;
    const auto j = to_json(c);
    EXPECT_EQ(j.at("schema_version"), kRunConfigSchemaVersion);
    EXPECT_EQ(to_json(run_config_from_json(j)), j);
    auto bad = j;
    bad["trian"] = nlohmann::json::object();
    EXPECT_THROW(run_config_from_json(bad), ConfigError);
    bad = j;
    bad["eval"]["n_episode"] = 3;
    EXPECT_THROW(run_config_from_json(bad), ConfigError);
    bad = j;
    bad["schema_version"] = 99;
    EXPECT_THROW(run_config_from_json(bad), ConfigError);
    bad = j;
    bad["train"]["alpha"] = "big";
    EXPECT_THROW(run_config_from_json(bad), ConfigError);

    const auto partial = run_config_from_json({{"train", {{"alpha", 0.25}}}});
    EXPECT_EQ(partial.train.alpha, 0.25);
    EXPECT_EQ(partial.train.batch_size, 4u);
    EXPECT_EQ(partial.eval.n_episodes, 200u);
}

TEST(RunConfig, MissingFileIsConfigError) {
    EXPECT_THROW(load_run_config("/nonexistent/lslp.json"), ConfigError);
}

TEST(Report, MergingPairsAveragesWithinEpisodes) {
    EvalReport rep;
    rep.rows = {{1, 4, 0.5, 0.25}, {1, 5, 0.75, 0.75}, {2, 5, 0.25, 0.5}, {2, 3, 1.0, 1.0}};
    const EvalReport merged = merge_classes(rep, parse_class_groups("4+5"));
    ASSERT_EQ(merged.rows.size(), 3u);
    EXPECT_EQ(merged.rows[0], (EvalRow{1, 4, 0.625, 0.5}));
    EXPECT_EQ(merged.rows[1], (EvalRow{2, 4, 0.25, 0.5}));
    EXPECT_EQ(merged.rows[2], (EvalRow{2, 3, 1.0, 1.0}));
    ASSERT_EQ(merged.classes.size(), 2u);
    EXPECT_DOUBLE_EQ(merged.classes[1].mean, 0.5);
    EXPECT_EQ(merge_classes(rep, {}).rows, rep.rows);

    EXPECT_THROW(parse_class_groups("4"), ConfigError);
    EXPECT_THROW(parse_class_groups("4+x"), ConfigError);
    EXPECT_THROW(merge_classes(rep, {{4, 5}, {5, 3}}), ConfigError);
}
