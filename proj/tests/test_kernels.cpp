#include <gtest/gtest.h>
#include <omp.h>

#include "lslp/kernels.hpp"
#include "support.hpp"

using namespace lslp;
using namespace lslp::testing;

namespace {

void expect_near(const Tensor& a, const Tensor& b, float tol) {
    ASSERT_EQ(a.shape(), b.shape());
    for (std::size_t i = 0; i < a.size(); ++i) ASSERT_NEAR(a[i], b[i], tol) << "index " << i;
}

}  // namespace

TEST(KernelsVsReference, Conv2d) {
    Rng rng(31);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t ci = pick(rng, 1, 4), co = pick(rng, 1, 5), h = pick(rng, 3, 12), w = pick(rng, 3, 12);
        const std::size_t pad = pick(rng, 0, 1);
        const Tensor x = random_tensor({ci, h, w}, rng), wt = random_tensor({co, ci, 3, 3}, rng);
        const Tensor y = kernels::conv2d_forward(x, wt, pad);
        expect_near(y, reference::conv2d_forward(x, wt, pad), 1e-5f);

        const Tensor gout = random_tensor(y.shape(), rng);
        Tensor gin(x.shape()), gw(wt.shape());
        kernels::conv2d_backward_input(gout, wt, pad, gin);
        kernels::conv2d_backward_weight(gout, x, pad, gw);
        expect_near(gin, reference::conv2d_backward_input(gout, wt, pad, x.shape()), 1e-4f);
        expect_near(gw, reference::conv2d_backward_weight(gout, x, pad, wt.shape()), 1e-4f);
    }
}

TEST(KernelsVsReference, MaxPool) {
    Rng rng(32);
    for (int trial = 0; trial < 10; ++trial) {
        const Tensor x = random_tensor({pick(rng, 1, 3), 2 * pick(rng, 1, 6), 2 * pick(rng, 1, 6)}, rng);
        EXPECT_EQ(kernels::max_pool2_forward(x).output, reference::max_pool2_forward(x));
    }
}

TEST(KernelsVsReference, MaskedPoolAndSimilarity) {
    Rng rng(33);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t h = pick(rng, 4, 12), w = pick(rng, 4, 12), d = pick(rng, 1, 6), k = pick(rng, 1, 3);
        const std::size_t classes = pick(rng, 2, 4);
        const GridSet grids = GridSet::build({w, h}, 0.5, uniform(rng, 0.2, 1.0));
        std::vector<Tensor> f, wt;
        for (std::size_t i = 0; i < k; ++i) {
            f.push_back(random_tensor({d, h, w}, rng));
            wt.push_back(random_weights(classes, h, w, rng));
        }
        std::vector<const Tensor*> fp, wp;
        for (std::size_t i = 0; i < k; ++i) {
            fp.push_back(&f[i]);
            wp.push_back(&wt[i]);
        }
        for (auto avg : {ShotAveraging::ValidShots, ShotAveraging::AllShots}) {
            const auto a = kernels::masked_pool_forward(fp, wp, grids, avg);
            const auto b = reference::masked_pool_forward(fp, wp, grids, avg);
            EXPECT_EQ(a.present, b.present);
            expect_near(a.vectors, b.vectors, 1e-6f);
        }
        const auto pooled = kernels::masked_pool_forward(fp, wp, grids, ShotAveraging::ValidShots);
        const Tensor q = random_tensor({d, h, w}, rng);
        const auto best =
            kernels::max_over_grids_forward(kernels::grid_cosine_forward(q, pooled.vectors, grids), pooled.present, grids);
        expect_near(best.scores, reference::local_similarity(q, pooled.vectors, pooled.present, grids), 1e-6f);
    }
}

TEST(KernelsVsReference, ResultsDoNotDependOnThreadCount) {
    Rng rng(34);
    const Tensor x = random_tensor({8, 16, 16}, rng), wt = random_tensor({16, 8, 3, 3}, rng);
    const GridSet grids = GridSet::build({16, 16}, 0.25, 0.5);
    const Tensor weights = random_weights(3, 16, 16, rng, 0.0);
    const Tensor* fp[] = {&x};
    const Tensor* wp[] = {&weights};

    auto run = [&](int threads) {
        omp_set_num_threads(threads);
        Tensor gin(x.shape()), gw(wt.shape());
        const Tensor y = kernels::conv2d_forward(x, wt, 1);
        kernels::conv2d_backward_input(y, wt, 1, gin);
        kernels::conv2d_backward_weight(y, x, 1, gw);
        const auto pooled = kernels::masked_pool_forward(fp, wp, grids, ShotAveraging::ValidShots);
        const Tensor win = kernels::grid_cosine_forward(x, pooled.vectors, grids);
        Tensor gf(x.shape()), gp(pooled.vectors.shape());
        kernels::grid_cosine_backward(win, x, pooled.vectors, grids, &gf, &gp);
        return std::vector<Tensor>{y, gin, gw, pooled.vectors, win, gf, gp};
    };
    const auto one = run(1);
    const auto four = run(4);
    omp_set_num_threads(1);
    for (std::size_t i = 0; i < one.size(); ++i) EXPECT_EQ(one[i], four[i]) << "output " << i;
}

// 3x3 map with four 2x2 grids at origins (0,0), (1,0), (0,1), (1,1).
class GridMax : public ::testing::Test {
protected:
    GridSet grids = GridSet::build({3, 3}, 2.0 / 3.0, 0.5);
    Tensor windows{Shape{1, 4, 2, 2}, 0.1f};
    float& window(std::size_t m, std::size_t xx, std::size_t yy) { return windows[(m * 2 + yy) * 2 + xx]; }
};

TEST_F(GridMax, TiesGoToLowestGrid) {
    ASSERT_EQ(grids.size(), 4u);
    window(0, 1, 0) = 0.8f;  // pixel (1, 0) seen from grid 0
    window(1, 0, 0) = 0.8f;  // and from grid 1
    const auto r = kernels::max_over_grids_forward(windows, std::vector<std::uint8_t>(4, 1), grids);
    EXPECT_EQ(r.scores[1], 0.8f);
    EXPECT_EQ(r.winner[1], 0);
}

TEST_F(GridMax, TakesTheLargerCosine) {
    window(0, 1, 0) = 0.3f;
    window(1, 0, 0) = 0.8f;
    const auto r = kernels::max_over_grids_forward(windows, std::vector<std::uint8_t>(4, 1), grids);
    EXPECT_EQ(r.scores[1], 0.8f);
    EXPECT_EQ(r.winner[1], 1);
}

TEST_F(GridMax, AbsentPrototypesNeverWin) {
    windows.fill(0.0f);
    for (std::size_t i = 0; i < 4; ++i) windows[i] = -1.0f;  // grid 0, present but anti-aligned
    const auto r = kernels::max_over_grids_forward(windows, std::vector<std::uint8_t>{1, 0, 0, 0}, grids);
    EXPECT_EQ(r.winner[1], 0);
    EXPECT_EQ(r.scores[1], -1.0f);
    EXPECT_EQ(r.winner[2], -1);  // pixel (2, 0) only lies in grid 1
    EXPECT_EQ(r.scores[2], kScoreAbsent);
}
