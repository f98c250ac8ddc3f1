#pragma once

// Random generators and brute-force oracles shared by the unit tests and the
// acceptance runner. The oracles only read plain tensors and grid rectangles;
// they never call the library code they check.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "lslp/geometry.hpp"
#include "lslp/tensor.hpp"

namespace lslp::testing {

using Rng = std::mt19937_64;

inline double uniform(Rng& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }
inline std::size_t pick(Rng& rng, std::size_t lo, std::size_t hi) {
    return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

inline Tensor random_tensor(const Shape& shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor t(shape);
    for (auto& v : t.data()) v = static_cast<float>(uniform(rng, lo, hi));
    return t;
}

inline Tensor random_mask(const Shape& shape, Rng& rng, double p = 0.5) {
    Tensor t(shape);
    std::bernoulli_distribution b(p);
    for (auto& v : t.data()) v = b(rng) ? 1.0f : 0.0f;
    return t;
}

/// Soft (C, H, W) class weights: each channel independently zero with
/// probability `p_zero`, otherwise values in [0, 1] with exact zeros sprinkled in.
inline Tensor random_weights(std::size_t classes, std::size_t h, std::size_t w, Rng& rng, double p_zero = 0.2) {
    Tensor t(Shape{classes, h, w});
    std::bernoulli_distribution empty(p_zero), hole(0.3);
    for (std::size_t c = 0; c < classes; ++c) {
        if (empty(rng)) continue;
        for (std::size_t i = 0; i < h * w; ++i) t[c * h * w + i] = hole(rng) ? 0.0f : static_cast<float>(uniform(rng, 0.0, 1.0));
    }
    return t;
}

/// Brute-force Ω: every grid rectangle that contains the pixel.
inline std::vector<std::size_t> covering(const std::vector<Grid>& grids, std::size_t x, std::size_t y) {
    std::vector<std::size_t> out;
    for (std::size_t m = 0; m < grids.size(); ++m)
        if (x >= grids[m].x0 && x < grids[m].x0 + grids[m].width && y >= grids[m].y0 && y < grids[m].y0 + grids[m].height)
            out.push_back(m);
    return out;
}

struct NaivePrototypes {
    std::vector<double> values;  // (C, n_g, d)
    std::vector<bool> present;   // (C, n_g)
};

/// Per-shot masked mean inside each grid, averaged over the shots whose
/// in-grid weight exceeds eps (or over all k shots when `all_shots`).
inline NaivePrototypes naive_prototypes(const std::vector<Tensor>& features, const std::vector<Tensor>& weights,
                                        const std::vector<Grid>& grids, bool all_shots = false, double eps = 1e-6) {
    const std::size_t k = features.size(), d = features[0].dim(0), classes = weights[0].dim(0);
    NaivePrototypes out{std::vector<double>(classes * grids.size() * d, 0.0),
                        std::vector<bool>(classes * grids.size(), false)};
    for (std::size_t c = 0; c < classes; ++c)
        for (std::size_t m = 0; m < grids.size(); ++m) {
            const Grid& g = grids[m];
            std::vector<double> sum(d, 0.0);
            std::size_t valid = 0;
            for (std::size_t i = 0; i < k; ++i) {
                double ws = 0.0;
                std::vector<double> acc(d, 0.0);
                for (std::size_t y = g.y0; y < g.y0 + g.height; ++y)
                    for (std::size_t x = g.x0; x < g.x0 + g.width; ++x) {
                        const double wv = weights[i].at(c, y, x);
                        ws += wv;
                        for (std::size_t ch = 0; ch < d; ++ch) acc[ch] += wv * features[i].at(ch, y, x);
                    }
                if (ws <= eps) continue;
                ++valid;
                for (std::size_t ch = 0; ch < d; ++ch) sum[ch] += acc[ch] / ws;
            }
            if (valid == 0) continue;
            out.present[c * grids.size() + m] = true;
            const double div = all_shots ? static_cast<double>(k) : static_cast<double>(valid);
            for (std::size_t ch = 0; ch < d; ++ch) out.values[(c * grids.size() + m) * d + ch] = sum[ch] / div;
        }
    return out;
}

inline double cosine(const std::vector<double>& a, const std::vector<double>& b, double eps = 1e-8) {
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    return dot / std::max(std::sqrt(na) * std::sqrt(nb), eps);
}

/// Score (C, H, W): max over covering grids with a present prototype of the
/// cosine, -1 where there is none.
inline std::vector<double> naive_similarity(const Tensor& field, const std::vector<double>& protos,
                                            const std::vector<bool>& present, std::size_t classes,
                                            const std::vector<Grid>& grids) {
    const std::size_t d = field.dim(0), h = field.dim(1), w = field.dim(2);
    std::vector<double> out(classes * h * w, -1.0);
    for (std::size_t c = 0; c < classes; ++c)
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x) {
                std::vector<double> f(d);
                for (std::size_t ch = 0; ch < d; ++ch) f[ch] = field.at(ch, y, x);
                bool any = false;
                double best = 0.0;
                for (std::size_t m : covering(grids, x, y)) {
                    if (!present[c * grids.size() + m]) continue;
                    const auto first = protos.begin() + static_cast<std::ptrdiff_t>((c * grids.size() + m) * d);
                    const double s = cosine(f, std::vector<double>(first, first + static_cast<std::ptrdiff_t>(d)));
                    if (!any || s > best) best = s;
                    any = true;
                }
                if (any) out[(c * h + y) * w + x] = best;
            }
    return out;
}

inline double naive_dice(const Tensor& a, const Tensor& b) {
    double inter = 0.0, sa = 0.0, sb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        inter += (a[i] > 0.5f && b[i] > 0.5f) ? 1.0 : 0.0;
        sa += a[i] > 0.5f;
        sb += b[i] > 0.5f;
    }
    return sa + sb == 0.0 ? 1.0 : 2.0 * inter / (sa + sb);
}

/// Grid-free global prototype pipeline: one masked mean per class over the
/// whole map, cosine against every pixel, temperature softmax. Written to
/// follow the same float/double conversions as a straightforward
/// implementation so its results can be compared bit for bit.
struct GlobalResult {
    Tensor scores;  // (C, H, W)
    Tensor probs;   // (C, H, W)
};

inline GlobalResult global_pipeline(const std::vector<Tensor>& features, const std::vector<Tensor>& weights,
                                    const Tensor& query, float temperature) {
    const std::size_t k = features.size(), d = features[0].dim(0), classes = weights[0].dim(0);
    const std::size_t h = query.dim(1), w = query.dim(2), plane = h * w;
    std::vector<std::vector<float>> protos(classes);
    std::vector<bool> present(classes, false);
    for (std::size_t c = 0; c < classes; ++c) {
        std::vector<double> sum(d, 0.0);
        std::size_t valid = 0;
        for (std::size_t i = 0; i < k; ++i) {
            double ws = 0.0;
            for (std::size_t p = 0; p < plane; ++p) ws += weights[i][c * plane + p];
            if (!(ws > 1e-6f)) continue;
            ++valid;
            std::vector<double> acc(d, 0.0);
            for (std::size_t p = 0; p < plane; ++p) {
                const double wv = weights[i][c * plane + p];
                if (wv == 0.0) continue;
                for (std::size_t ch = 0; ch < d; ++ch) acc[ch] += static_cast<double>(features[i][ch * plane + p]) * wv;
            }
            for (std::size_t ch = 0; ch < d; ++ch) sum[ch] += acc[ch] / ws;
        }
        if (valid == 0) continue;
        present[c] = true;
        protos[c].resize(d);
        for (std::size_t ch = 0; ch < d; ++ch) protos[c][ch] = static_cast<float>(sum[ch] / static_cast<double>(valid));
    }

    GlobalResult r{Tensor(Shape{classes, h, w}, -1.0f), Tensor(Shape{classes, h, w})};
    for (std::size_t c = 0; c < classes; ++c) {
        if (!present[c]) continue;
        double pn = 0.0;
        for (float v : protos[c]) pn += static_cast<double>(v) * v;
        const double pnorm = std::sqrt(pn);
        for (std::size_t p = 0; p < plane; ++p) {
            double dot = 0.0, fn = 0.0;
            for (std::size_t ch = 0; ch < d; ++ch) {
                const double fv = query[ch * plane + p];
                dot += fv * protos[c][ch];
                fn += fv * fv;
            }
            r.scores[c * plane + p] = static_cast<float>(dot / std::max(std::sqrt(fn) * pnorm, 1e-8));
        }
    }
    std::vector<double> e(classes);
    for (std::size_t p = 0; p < plane; ++p) {
        float mx = r.scores[p] * temperature;
        for (std::size_t c = 1; c < classes; ++c) mx = std::max(mx, r.scores[c * plane + p] * temperature);
        double sum = 0.0;
        for (std::size_t c = 0; c < classes; ++c) {
            e[c] = std::exp(static_cast<double>(r.scores[c * plane + p] * temperature) - mx);
            sum += e[c];
        }
        for (std::size_t c = 0; c < classes; ++c) r.probs[c * plane + p] = static_cast<float>(e[c] / sum);
    }
    return r;
}

/// Pixel-mean cross-entropy of softmax(logits) against a target distribution, in double.
inline double naive_cross_entropy(const Tensor& logits, const Tensor& target) {
    const std::size_t classes = logits.dim(0), plane = logits.size() / classes;
    double total = 0.0;
    for (std::size_t p = 0; p < plane; ++p) {
        double mx = -INFINITY;
        for (std::size_t c = 0; c < classes; ++c) mx = std::max(mx, static_cast<double>(logits[c * plane + p]));
        double z = 0.0;
        for (std::size_t c = 0; c < classes; ++c) z += std::exp(logits[c * plane + p] - mx);
        for (std::size_t c = 0; c < classes; ++c)
            total -= target[c * plane + p] * (logits[c * plane + p] - mx - std::log(z));
    }
    return total / static_cast<double>(plane);
}

}  // namespace lslp::testing
