#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "lslp/error.hpp"
#include "lslp/metrics.hpp"
#include "lslp/synthgen.hpp"
#include "support.hpp"

using namespace lslp;
using namespace lslp::testing;
namespace fs = std::filesystem;

namespace {

PhantomSpec small_spec() {
    PhantomSpec s = default_phantom_spec();
    s.n_images = 12;
    s.n_test_images = 4;
    return s;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

TEST(Synthgen, DefaultCorpus) {
    const Dataset ds = generate_phantoms(default_phantom_spec());
    EXPECT_EQ(ds.images.size(), 100u);
    EXPECT_EQ(ds.classes.size(), 6u);
    EXPECT_EQ(ds.shape, (ImageShape{64, 64}));
    std::size_t test = 0;
    for (const auto& img : ds.images) {
        validate_image(img, ds.shape);
        test += img.subset == "test";
    }
    EXPECT_EQ(test, 20u);
}

TEST(Synthgen, DefaultAlignmentBand) {
    const Dataset ds = generate_phantoms(default_phantom_spec());
    double sum = 0.0;
    std::size_t pairs = 0;
    for (int c : ds.class_ids())
        for (std::size_t i = 0; i < ds.images.size(); ++i)
            for (std::size_t j = i + 1; j < ds.images.size(); ++j) {
                sum += naive_dice(ds.images[i].masks.at(c), ds.images[j].masks.at(c));
                ++pairs;
            }
    const double mean = sum / static_cast<double>(pairs);
    EXPECT_GT(mean, 0.3);
    EXPECT_LT(mean, 0.9);
}

TEST(Synthgen, ZeroJitterGivesIdenticalMasks) {
    PhantomSpec s = small_spec();
    s.position_jitter = 0.0;
    s.radius_jitter = 0.0;
    s.eccentricity_min = s.eccentricity_max = 1.0;
    const Dataset ds = generate_phantoms(s);
    for (const auto& img : ds.images) EXPECT_EQ(img.masks, ds.images[0].masks);
    for (const auto& stats : layout_report(ds)) {
        EXPECT_EQ(stats.min, 1.0);
        EXPECT_EQ(stats.max, 1.0);
    }
}

TEST(Synthgen, NoClassesMeansPureBackground) {
    PhantomSpec s = default_phantom_spec(0);
    s.n_images = 3;
    s.n_test_images = 1;
    const Dataset ds = generate_phantoms(s);
    for (const auto& img : ds.images) EXPECT_TRUE(img.masks.empty());
    EXPECT_TRUE(layout_report(ds).empty());
}

TEST(Synthgen, CollisionNamesBothClasses) {
    PhantomSpec s = small_spec();
    s.classes = {{"left", 0.5, 0.5, 0.2, 0.5, 0.1}, {"right", 0.5, 0.5, 0.2, 0.5, 0.1}};
    s.max_retries = 5;
    try {
        generate_phantoms(s);
        FAIL();
    } catch (const DataError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("left"), std::string::npos) << msg;
        EXPECT_NE(msg.find("right"), std::string::npos) << msg;
    }
}

TEST(Synthgen, DirectoryIsByteIdenticalAcrossRuns) {
    const fs::path a = fs::temp_directory_path() / "lslp_gen_a", b = fs::temp_directory_path() / "lslp_gen_b";
    generate_dataset(small_spec(), a);
    generate_dataset(small_spec(), b);
    std::vector<fs::path> files;
    for (const auto& e : fs::recursive_directory_iterator(a))
        if (e.is_regular_file()) files.push_back(fs::relative(e.path(), a));
    EXPECT_FALSE(files.empty());
    for (const auto& f : files) EXPECT_EQ(slurp(a / f), slurp(b / f)) << f;
    fs::remove_all(a);
    fs::remove_all(b);
}

TEST(Synthgen, InvalidSpecLeavesNothingBehind) {
    const fs::path dir = fs::temp_directory_path() / "lslp_gen_invalid";
    fs::remove_all(dir);
    PhantomSpec s = small_spec();
    s.n_test_images = 50;
    EXPECT_THROW(generate_dataset(s, dir), ConfigError);
    EXPECT_FALSE(fs::exists(dir));
    EXPECT_FALSE(fs::exists(dir.string() + ".partial"));
}

TEST(Synthgen, SpecJsonRoundTripAndStrictKeys) {
    const PhantomSpec s = default_phantom_spec();
    const PhantomSpec back = phantom_spec_from_json(to_json(s));
    EXPECT_EQ(to_json(back), to_json(s));
    EXPECT_THROW(phantom_spec_from_json({{"n_imgs", 3}}), ConfigError);
    EXPECT_EQ(phantom_spec_from_json({{"n_classes", 2}}).classes.size(), 2u);
}

TEST(Synthgen, LayoutReportMatchesIndependentDice) {
    const Dataset ds = generate_phantoms(small_spec());
    for (const auto& stats : layout_report(ds)) {
        std::vector<double> v;
        for (std::size_t i = 0; i < ds.images.size(); ++i)
            for (std::size_t j = i + 1; j < ds.images.size(); ++j)
                v.push_back(naive_dice(ds.images[i].masks.at(stats.class_id), ds.images[j].masks.at(stats.class_id)));
        std::sort(v.begin(), v.end());
        ASSERT_EQ(stats.pairs, v.size());
        EXPECT_DOUBLE_EQ(stats.min, v.front());
        EXPECT_DOUBLE_EQ(stats.max, v.back());
        EXPECT_DOUBLE_EQ(stats.median, v.size() % 2 ? v[v.size() / 2] : 0.5 * (v[v.size() / 2 - 1] + v[v.size() / 2]));
    }
}

TEST(Synthgen, LayoutReportDisjointPairIsZero) {
    Dataset ds;
    ds.shape = {2, 1};
    ds.classes = {{0, "a"}};
    for (int i = 0; i < 2; ++i) {
        LabeledImage img;
        img.image = Tensor(Shape{1, 1, 2});
        Tensor m(Shape{1, 2});
        m[static_cast<std::size_t>(i)] = 1.0f;
        img.masks.emplace(0, m);
        ds.images.push_back(img);
    }
    const auto r = layout_report(ds);
    ASSERT_EQ(r.size(), 1u);
    EXPECT_EQ(r[0].median, 0.0);
}

TEST(Synthgen, IntensityAloneDoesNotIdentifyClasses) {
    // Threshold classifier that knows each class's intensity band exactly.
    const PhantomSpec spec = default_phantom_spec();
    const Dataset ds = generate_phantoms(spec);
    std::size_t weak = 0;
    for (std::size_t c = 0; c < spec.classes.size(); ++c) {
        const auto& pc = spec.classes[c];
        double total = 0.0;
        for (const auto& img : ds.images) {
            Tensor pred(Shape{64, 64});
            for (std::size_t i = 0; i < pred.size(); ++i)
                pred[i] = std::abs(img.image[i] - pc.intensity_mean) <= pc.intensity_std ? 1.0f : 0.0f;
            total += naive_dice(pred, img.masks.at(static_cast<int>(c)));
        }
        weak += total / static_cast<double>(ds.images.size()) < 0.5;
    }
    EXPECT_GE(weak, spec.classes.size() / 2);
}
