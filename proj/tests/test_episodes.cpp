#include <gtest/gtest.h>

#include <filesystem>
#include <map>
#include <set>

#include "lslp/episodes.hpp"
#include "lslp/error.hpp"
#include "support.hpp"

using namespace lslp;
using namespace lslp::testing;

namespace {

// n_images 4x4 images; image i contains class c when (i + c) % 3 != 0.
Dataset toy_dataset(std::size_t n_images, int n_classes) {
    Dataset ds;
    ds.shape = {4, 4};
    for (int c = 0; c < n_classes; ++c) ds.classes.push_back({c, "class" + std::to_string(c)});
    Rng rng(5);
    for (std::size_t i = 0; i < n_images; ++i) {
        LabeledImage item;
        item.image = random_tensor({1, 4, 4}, rng, 0.0, 1.0);
        for (int c = 0; c < n_classes; ++c) {
            if ((i + static_cast<std::size_t>(c)) % 3 == 0) continue;
            Tensor m(Shape{4, 4});
            m[static_cast<std::size_t>(c) % 16] = 1.0f;
            item.masks.emplace(c, m);
        }
        ds.images.push_back(std::move(item));
    }
    return ds;
}

}  // namespace

TEST(SplitClasses, Examples) {
    const std::vector<int> organs{0, 1, 2, 3};  // lungs, heart, kidney, bones
    const ClassSplit s = split_classes(organs, std::vector<int>{2, 3});
    EXPECT_EQ(s.train, (std::vector<int>{0, 1}));
    EXPECT_EQ(s.test, (std::vector<int>{2, 3}));

    EXPECT_THROW(split_classes(organs, organs), ConfigError);
    EXPECT_THROW(split_classes(organs, std::vector<int>{}), ConfigError);
    EXPECT_THROW(split_classes(organs, std::vector<int>{9}), ConfigError);

    const std::vector<int> six{0, 1, 2, 3, 4, 5};
    EXPECT_EQ(split_classes(six, std::vector<int>{4, 5}).train, (std::vector<int>{0, 1, 2, 3}));
}

TEST(SampleEpisode, OneWayOneShot) {
    const Dataset ds = toy_dataset(12, 4);
    const ClassSplit split = split_classes(ds.class_ids(), std::vector<int>{3});
    const Episode ep = sample_episode(ds, split, SplitSide::Train, {1, 1, 1}, 42);
    EXPECT_EQ(ep.classes.size(), 1u);
    EXPECT_EQ(ep.support.size(), 1u);
    EXPECT_EQ(ep.query.size(), 1u);
    EXPECT_EQ(ep.seed, 42u);
}

TEST(SampleEpisode, SameSeedSameEpisode) {
    const Dataset ds = toy_dataset(12, 4);
    const ClassSplit split = split_classes(ds.class_ids(), std::vector<int>{3});
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const Episode a = sample_episode(ds, split, SplitSide::Train, {2, 2, 1}, seed);
        const Episode b = sample_episode(ds, split, SplitSide::Train, {2, 2, 1}, seed);
        EXPECT_EQ(a.classes, b.classes);
        for (std::size_t i = 0; i < a.support.size(); ++i) EXPECT_EQ(a.support[i].index, b.support[i].index);
        EXPECT_EQ(a.query[0].index, b.query[0].index);
    }
}

TEST(SampleEpisode, DeficitIsReported) {
    Dataset ds = toy_dataset(1, 2);
    ds.images[0].masks.clear();
    Tensor m(Shape{4, 4});
    m[0] = 1.0f;
    ds.images[0].masks.emplace(0, m);
    const ClassSplit split = split_classes(ds.class_ids(), std::vector<int>{1});
    try {
        sample_episode(ds, split, SplitSide::Train, {1, 1, 1}, 0);
        FAIL();
    } catch (const DataError& e) {
        EXPECT_NE(std::string(e.what()).find("deficit 1"), std::string::npos) << e.what();
    }
}

TEST(SampleEpisode, RespectsImageSubsets) {
    Dataset ds = toy_dataset(30, 4);
    for (std::size_t i = 0; i < ds.images.size(); ++i) ds.images[i].subset = i < 20 ? "train" : "test";
    const ClassSplit split = split_classes(ds.class_ids(), std::vector<int>{3});
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        const Episode te = sample_episode(ds, split, SplitSide::Test, {1, 1, 1}, seed);
        EXPECT_GE(te.support[0].index, 20u);
        EXPECT_GE(te.query[0].index, 20u);
        const Episode tr = sample_episode(ds, split, SplitSide::Train, {1, 1, 1}, seed);
        EXPECT_LT(tr.query[0].index, 20u);
    }
}

TEST(SampleEpisodeProperty, EpisodeInvariants) {
    const Dataset ds = toy_dataset(40, 6);
    const ClassSplit split = split_classes(ds.class_ids(), std::vector<int>{4, 5});
    Rng rng(61);
    for (int trial = 0; trial < 200; ++trial) {
        const EpisodeShape shape{pick(rng, 1, 2), pick(rng, 1, 3), pick(rng, 1, 2)};
        const SplitSide side = trial % 2 ? SplitSide::Train : SplitSide::Test;
        const Episode ep = sample_episode(ds, split, side, shape, rng());
        const auto& allowed = side == SplitSide::Train ? split.train : split.test;
        std::set<int> distinct(ep.classes.begin(), ep.classes.end());
        ASSERT_EQ(distinct.size(), shape.ways);
        for (int c : ep.classes) ASSERT_NE(std::find(allowed.begin(), allowed.end(), c), allowed.end());
        std::set<std::size_t> used;
        for (const auto* side_images : {&ep.support, &ep.query})
            for (const auto& img : *side_images) {
                ASSERT_TRUE(used.insert(img.index).second) << "image reused within an episode";
                ASSERT_EQ(img.masks.size(), shape.ways);
            }
    }
}

TEST(SampleEpisodeProperty, TrainClassesSampledUniformly) {
    const Dataset ds = toy_dataset(40, 6);
    const ClassSplit split = split_classes(ds.class_ids(), std::vector<int>{4, 5});
    std::map<int, int> counts;
    for (std::uint64_t e = 0; e < 1000; ++e)
        ++counts[sample_episode(ds, split, SplitSide::Train, {1, 1, 1}, derive_seed(9, e)).classes[0]];
    for (int c : split.train) {
        EXPECT_GT(counts[c], 250 * 0.8) << c;
        EXPECT_LT(counts[c], 250 * 1.2) << c;
    }
}

TEST(Augment, Examples) {
    Rng rng(62);
    const Tensor img = random_tensor({1, 5, 5}, rng, 0.0, 1.0);
    EXPECT_EQ(apply_photometric(img, 1.0, 1.0, 0.0), img);
    const Tensor zero(Shape{1, 1, 1}, 0.0f);
    for (double g : {0.8, 1.0, 1.2}) EXPECT_EQ(apply_photometric(zero, g, 1.0, 0.0).item(), 0.0f);
    EXPECT_FLOAT_EQ(apply_photometric(Tensor(Shape{1, 1, 1}, 0.25f), 2.0, 1.0, 0.0).item(), 0.0625f);
}

TEST(AugmentProperty, StaysInRange) {
    Rng rng(63);
    AugmentParams wide;
    wide.probability = 1.0;
    wide.brightness_min = -0.5;
    wide.brightness_max = 0.5;
    wide.contrast_max = 3.0;
    for (int trial = 0; trial < 200; ++trial) {
        const Tensor out = augment(random_tensor({1, 6, 6}, rng, 0.0, 1.0), rng, wide);
        for (float v : out.data()) ASSERT_TRUE(v >= 0.0f && v <= 1.0f);
    }
}

TEST(AugmentProperty, DisabledIsIdentity) {
    Rng rng(64);
    AugmentParams off;
    off.enabled = false;
    const Tensor img = random_tensor({1, 6, 6}, rng, 0.0, 1.0);
    EXPECT_EQ(augment(img, rng, off), img);
}

TEST(Dataset, SaveLoadRoundTrip) {
    Dataset ds = toy_dataset(6, 3);
    ds.images[5].subset = "test";
    const auto dir = std::filesystem::temp_directory_path() / "lslp_dataset_roundtrip";
    std::filesystem::remove_all(dir);
    save_dataset(dir, ds);
    const Dataset back = load_dataset(dir);
    ASSERT_EQ(back.images.size(), ds.images.size());
    EXPECT_EQ(back.class_ids(), ds.class_ids());
    for (std::size_t i = 0; i < ds.images.size(); ++i) {
        EXPECT_EQ(back.images[i].image, ds.images[i].image);
        EXPECT_EQ(back.images[i].masks, ds.images[i].masks);
        EXPECT_EQ(back.images[i].subset, ds.images[i].subset);
    }
    const Dataset resized = load_dataset(dir, ImageShape{8, 8});
    EXPECT_EQ(resized.shape, (ImageShape{8, 8}));
    for (const auto& [id, m] : resized.images[1].masks)
        for (float v : m.data()) ASSERT_TRUE(v == 0.0f || v == 1.0f);
    std::filesystem::remove_all(dir);
}

TEST(Dataset, LoaderRejectsInvalidImages) {
    Dataset ds = toy_dataset(2, 2);
    ds.images[0].image[0] = 1.5f;
    EXPECT_THROW(validate_image(ds.images[0], ds.shape), DataError);
    Dataset overlap = toy_dataset(2, 2);
    for (auto& [id, m] : overlap.images[1].masks) m[0] = 1.0f;
    ASSERT_GE(overlap.images[1].masks.size(), 2u);
    EXPECT_THROW(validate_image(overlap.images[1], overlap.shape), DataError);
    EXPECT_THROW(load_dataset(std::filesystem::temp_directory_path() / "lslp_no_such_dataset"), DataError);
}

TEST(Resize, NearestKeepsMasksBinaryAndBilinearKeepsRange) {
    Rng rng(65);
    const Tensor mask = random_mask({6, 6}, rng);
    const Tensor up = resize_nearest(mask, {12, 12});
    for (std::size_t y = 0; y < 12; ++y)
        for (std::size_t x = 0; x < 12; ++x) EXPECT_EQ(up.at(y, x), mask.at(y / 2, x / 2));
    const Tensor img = resize_bilinear(random_tensor({1, 6, 6}, rng, 0.0, 1.0), {9, 9});
    for (float v : img.data()) EXPECT_TRUE(v >= 0.0f && v <= 1.0f);
}
