#include "lslp/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <string>

#include "lslp/error.hpp"

namespace lslp::kernels {

namespace {

using index_t = std::ptrdiff_t;

void require_rank(const Tensor& t, std::size_t rank, const char* what) {
    if (t.rank() != rank)
        throw ShapeError(std::string(what) + " expects rank " + std::to_string(rank) + ", got " +
                         shape_string(t.shape()));
}

struct ConvDims {
    index_t cin, h, w, cout, k, pad, oh, ow;
};

ConvDims conv_dims(const Shape& input, const Shape& weight, std::size_t pad) {
    if (input.size() != 3 || weight.size() != 4)
        throw ShapeError("conv2d expects input (C,H,W) and weight (O,C,K,K), got " + shape_string(input) + " and " +
                         shape_string(weight));
    if (weight[1] != input[0] || weight[2] != weight[3])
        throw ShapeError("conv2d weight " + shape_string(weight) + " incompatible with input " + shape_string(input));
    ConvDims d{};
    d.cin = static_cast<index_t>(input[0]);
    d.h = static_cast<index_t>(input[1]);
    d.w = static_cast<index_t>(input[2]);
    d.cout = static_cast<index_t>(weight[0]);
    d.k = static_cast<index_t>(weight[2]);
    d.pad = static_cast<index_t>(pad);
    d.oh = d.h + 2 * d.pad - d.k + 1;
    d.ow = d.w + 2 * d.pad - d.k + 1;
    if (d.oh <= 0 || d.ow <= 0) throw ShapeError("conv2d kernel larger than padded input");
    return d;
}

// Output columns ox whose source column ox + kx - pad lies inside [0, w).
inline index_t col_lo(const ConvDims& d, index_t kx) { return std::max<index_t>(0, d.pad - kx); }
inline index_t col_hi(const ConvDims& d, index_t kx) { return std::min<index_t>(d.ow, d.w + d.pad - kx); }

}  // namespace

Tensor conv2d_forward(const Tensor& input, const Tensor& weight, std::size_t pad) {
    const ConvDims d = conv_dims(input.shape(), weight.shape(), pad);
    Tensor out(Shape{static_cast<std::size_t>(d.cout), static_cast<std::size_t>(d.oh), static_cast<std::size_t>(d.ow)});
    const float* in = input.raw();
    const float* wt = weight.raw();
    float* op = out.raw();

#pragma omp parallel for schedule(static)
    for (index_t oc = 0; oc < d.cout; ++oc) {
        float* plane = op + oc * d.oh * d.ow;
        for (index_t ic = 0; ic < d.cin; ++ic) {
            const float* src = in + ic * d.h * d.w;
            for (index_t ky = 0; ky < d.k; ++ky) {
                for (index_t kx = 0; kx < d.k; ++kx) {
                    const float wv = wt[((oc * d.cin + ic) * d.k + ky) * d.k + kx];
                    const index_t lo = col_lo(d, kx), hi = col_hi(d, kx);
                    const index_t shift = kx - d.pad;
                    for (index_t oy = 0; oy < d.oh; ++oy) {
                        const index_t iy = oy + ky - d.pad;
                        if (iy < 0 || iy >= d.h) continue;
                        float* orow = plane + oy * d.ow;
                        const float* irow = src + iy * d.w;
                        for (index_t ox = lo; ox < hi; ++ox) orow[ox] += wv * irow[ox + shift];
                    }
                }
            }
        }
    }
    return out;
}

void conv2d_backward_input(const Tensor& grad_out, const Tensor& weight, std::size_t pad, Tensor& grad_input) {
    const ConvDims d = conv_dims(grad_input.shape(), weight.shape(), pad);
    const float* go = grad_out.raw();
    const float* wt = weight.raw();
    float* gi = grad_input.raw();

#pragma omp parallel for schedule(static)
    for (index_t ic = 0; ic < d.cin; ++ic) {
        float* dst = gi + ic * d.h * d.w;
        for (index_t oc = 0; oc < d.cout; ++oc) {
            const float* plane = go + oc * d.oh * d.ow;
            for (index_t ky = 0; ky < d.k; ++ky) {
                for (index_t kx = 0; kx < d.k; ++kx) {
                    const float wv = wt[((oc * d.cin + ic) * d.k + ky) * d.k + kx];
                    const index_t lo = col_lo(d, kx), hi = col_hi(d, kx);
                    const index_t shift = kx - d.pad;
                    for (index_t oy = 0; oy < d.oh; ++oy) {
                        const index_t iy = oy + ky - d.pad;
                        if (iy < 0 || iy >= d.h) continue;
                        const float* grow = plane + oy * d.ow;
                        float* irow = dst + iy * d.w;
                        for (index_t ox = lo; ox < hi; ++ox) irow[ox + shift] += wv * grow[ox];
                    }
                }
            }
        }
    }
}

void conv2d_backward_weight(const Tensor& grad_out, const Tensor& input, std::size_t pad, Tensor& grad_weight) {
    const ConvDims d = conv_dims(input.shape(), grad_weight.shape(), pad);
    const float* go = grad_out.raw();
    const float* in = input.raw();
    float* gw = grad_weight.raw();

#pragma omp parallel for collapse(2) schedule(static)
    for (index_t oc = 0; oc < d.cout; ++oc) {
        for (index_t ic = 0; ic < d.cin; ++ic) {
            const float* plane = go + oc * d.oh * d.ow;
            const float* src = in + ic * d.h * d.w;
            for (index_t ky = 0; ky < d.k; ++ky) {
                for (index_t kx = 0; kx < d.k; ++kx) {
                    const index_t lo = col_lo(d, kx), hi = col_hi(d, kx);
                    const index_t shift = kx - d.pad;
                    float acc = 0.0f;
                    for (index_t oy = 0; oy < d.oh; ++oy) {
                        const index_t iy = oy + ky - d.pad;
                        if (iy < 0 || iy >= d.h) continue;
                        const float* grow = plane + oy * d.ow;
                        const float* irow = src + iy * d.w;
#pragma omp simd reduction(+ : acc)
                        for (index_t ox = lo; ox < hi; ++ox) acc += grow[ox] * irow[ox + shift];
                    }
                    gw[((oc * d.cin + ic) * d.k + ky) * d.k + kx] += acc;
                }
            }
        }
    }
}

Tensor bias_add_forward(const Tensor& input, const Tensor& bias) {
    require_rank(input, 3, "bias_add");
    if (bias.size() != input.dim(0))
        throw ShapeError("bias " + shape_string(bias.shape()) + " does not match channels of " +
                         shape_string(input.shape()));
    Tensor out = input;
    const std::size_t plane = input.dim(1) * input.dim(2);
    for (std::size_t c = 0; c < input.dim(0); ++c) {
        float* p = out.raw() + c * plane;
        for (std::size_t i = 0; i < plane; ++i) p[i] += bias[c];
    }
    return out;
}

MaxPoolResult max_pool2_forward(const Tensor& input) {
    require_rank(input, 3, "max_pool2");
    const std::size_t c = input.dim(0), h = input.dim(1), w = input.dim(2);
    if (h % 2 != 0 || w % 2 != 0) throw ShapeError("max_pool2 needs even spatial dims, got " + shape_string(input.shape()));
    const std::size_t oh = h / 2, ow = w / 2;
    MaxPoolResult r{Tensor(Shape{c, oh, ow}), std::vector<std::uint32_t>(c * oh * ow), 0.0f};
    const float* in = input.raw();

#pragma omp parallel for schedule(static)
    for (index_t ch = 0; ch < static_cast<index_t>(c); ++ch) {
        for (std::size_t oy = 0; oy < oh; ++oy) {
            for (std::size_t ox = 0; ox < ow; ++ox) {
                const std::size_t base = (ch * h + 2 * oy) * w + 2 * ox;
                const std::size_t cand[4] = {base, base + 1, base + w, base + w + 1};
                std::size_t best = cand[0];
                for (int i = 1; i < 4; ++i)
                    if (in[cand[i]] > in[best] || std::isnan(in[cand[i]])) best = cand[i];
                const std::size_t o = (ch * oh + oy) * ow + ox;
                r.output[o] = in[best];
                r.argmax[o] = static_cast<std::uint32_t>(best);
            }
        }
    }
    return r;
}

void max_pool2_backward(const Tensor& grad_out, std::span<const std::uint32_t> argmax, Tensor& grad_input) {
    // Windows do not overlap, so each input element receives at most one term.
    for (std::size_t o = 0; o < grad_out.size(); ++o) grad_input[argmax[o]] += grad_out[o];
}

namespace {

struct PoolDims {
    std::size_t k, d, h, w, classes, n_g;
};

PoolDims pool_dims(std::span<const Tensor* const> features, std::span<const Tensor* const> weights,
                   const GridSet& grids) {
    if (features.empty()) throw ShapeError("masked pooling needs at least one shot");
    if (weights.size() != features.size())
        throw ShapeError("masked pooling got " + std::to_string(features.size()) + " feature maps but " +
                         std::to_string(weights.size()) + " weight maps");
    const Tensor& f0 = *features[0];
    require_rank(f0, 3, "masked_pool features");
    PoolDims p{features.size(), f0.dim(0), f0.dim(1), f0.dim(2), 0, grids.size()};
    require_rank(*weights[0], 3, "masked_pool weights");
    p.classes = weights[0]->dim(0);
    for (std::size_t i = 0; i < p.k; ++i) {
        if (features[i]->shape() != f0.shape())
            throw ShapeError("support feature maps differ in shape: " + shape_string(features[i]->shape()) + " vs " +
                             shape_string(f0.shape()));
        if (weights[i]->shape() != Shape{p.classes, p.h, p.w})
            throw ShapeError("mask weights " + shape_string(weights[i]->shape()) + " do not match features " +
                             shape_string(f0.shape()));
    }
    if (grids.shape() != ImageShape{p.w, p.h})
        throw ShapeError("grid layout " + std::to_string(grids.shape().width) + "x" +
                         std::to_string(grids.shape().height) + " does not match feature map " +
                         shape_string(f0.shape()));
    return p;
}

}  // namespace

std::vector<std::uint8_t> prototype_presence(std::span<const Tensor* const> weights, const GridSet& grids) {
    if (weights.empty()) throw ShapeError("prototype presence needs at least one shot");
    const std::size_t classes = weights[0]->dim(0);
    std::vector<std::uint8_t> present(classes * grids.size(), 0);
    for (std::size_t c = 0; c < classes; ++c)
        for (const Grid& g : grids.grids())
            for (const Tensor* wm : weights) {
                double s = 0.0;
                for (std::size_t y = g.y0; y < g.y0 + g.height; ++y)
                    for (std::size_t x = g.x0; x < g.x0 + g.width; ++x) s += wm->at(c, y, x);
                if (s > kMaskEps) {
                    present[c * grids.size() + g.id] = 1;
                    break;
                }
            }
    return present;
}

PooledPrototypes masked_pool_forward(std::span<const Tensor* const> features, std::span<const Tensor* const> weights,
                                     const GridSet& grids, ShotAveraging averaging) {
    const PoolDims p = pool_dims(features, weights, grids);
    PooledPrototypes r{Tensor(Shape{p.classes, p.n_g, p.d}), std::vector<std::uint8_t>(p.classes * p.n_g, 0),
                       std::vector<float>(p.k * p.classes * p.n_g, 0.0f)};
    const index_t pairs = static_cast<index_t>(p.classes * p.n_g);

#pragma omp parallel
    {
        std::vector<double> weight_sum(p.k);
        std::vector<double> acc(p.d);
        std::vector<double> proto(p.d);
#pragma omp for schedule(static)
        for (index_t pair = 0; pair < pairs; ++pair) {
            const std::size_t c = static_cast<std::size_t>(pair) / p.n_g;
            const Grid& g = grids.grid(static_cast<std::size_t>(pair) % p.n_g);
            std::size_t valid = 0;
            for (std::size_t i = 0; i < p.k; ++i) {
                double s = 0.0;
                for (std::size_t y = g.y0; y < g.y0 + g.height; ++y)
                    for (std::size_t x = g.x0; x < g.x0 + g.width; ++x) s += weights[i]->at(c, y, x);
                weight_sum[i] = s;
                if (s > kMaskEps) ++valid;
            }
            if (valid == 0) continue;
            const double divisor = averaging == ShotAveraging::ValidShots ? static_cast<double>(valid)
                                                                          : static_cast<double>(p.k);
            std::fill(proto.begin(), proto.end(), 0.0);
            for (std::size_t i = 0; i < p.k; ++i) {
                if (!(weight_sum[i] > kMaskEps)) continue;
                std::fill(acc.begin(), acc.end(), 0.0);
                const Tensor& f = *features[i];
                const Tensor& wm = *weights[i];
                for (std::size_t y = g.y0; y < g.y0 + g.height; ++y) {
                    for (std::size_t x = g.x0; x < g.x0 + g.width; ++x) {
                        const double wv = wm.at(c, y, x);
                        if (wv == 0.0) continue;
                        for (std::size_t ch = 0; ch < p.d; ++ch) acc[ch] += static_cast<double>(f.at(ch, y, x)) * wv;
                    }
                }
                for (std::size_t ch = 0; ch < p.d; ++ch) proto[ch] += acc[ch] / weight_sum[i];
                r.shot_scale[(i * p.classes + c) * p.n_g + g.id] = static_cast<float>(1.0 / (divisor * weight_sum[i]));
            }
            float* out = r.vectors.raw() + static_cast<std::size_t>(pair) * p.d;
            for (std::size_t ch = 0; ch < p.d; ++ch) out[ch] = static_cast<float>(proto[ch] / divisor);
            r.present[static_cast<std::size_t>(pair)] = 1;
        }
    }
    return r;
}

void masked_pool_backward(const Tensor& grad_vectors, std::span<const Tensor* const> weights, const GridSet& grids,
                          const PooledPrototypes& pooled, std::span<Tensor* const> grad_features) {
    const std::size_t k = weights.size();
    const std::size_t classes = pooled.vectors.dim(0), n_g = pooled.vectors.dim(1), d = pooled.vectors.dim(2);

#pragma omp parallel for schedule(static)
    for (index_t chi = 0; chi < static_cast<index_t>(d); ++chi) {
        const auto ch = static_cast<std::size_t>(chi);
        for (std::size_t i = 0; i < k; ++i) {
            if (!grad_features[i]) continue;
            Tensor& gf = *grad_features[i];
            const Tensor& wm = *weights[i];
            for (std::size_t c = 0; c < classes; ++c) {
                for (std::size_t m = 0; m < n_g; ++m) {
                    const float scale = pooled.shot_scale[(i * classes + c) * n_g + m];
                    if (scale == 0.0f) continue;
                    const float g = grad_vectors[(c * n_g + m) * d + ch] * scale;
                    if (g == 0.0f) continue;
                    const Grid& grid = grids.grid(m);
                    for (std::size_t y = grid.y0; y < grid.y0 + grid.height; ++y)
                        for (std::size_t x = grid.x0; x < grid.x0 + grid.width; ++x)
                            gf.at(ch, y, x) += g * wm.at(c, y, x);
                }
            }
        }
    }
}

namespace {

struct CosineDims {
    std::size_t d, h, w, classes, n_g, gh, gw;
};

CosineDims cosine_dims(const Tensor& field, const Tensor& protos, const GridSet& grids) {
    require_rank(field, 3, "grid_cosine field");
    require_rank(protos, 3, "grid_cosine prototypes");
    if (protos.dim(2) != field.dim(0))
        throw ShapeError("prototype depth " + std::to_string(protos.dim(2)) + " does not match feature depth " +
                         std::to_string(field.dim(0)));
    if (protos.dim(1) != grids.size())
        throw ShapeError("prototype table has " + std::to_string(protos.dim(1)) + " grids, layout has " +
                         std::to_string(grids.size()));
    if (grids.shape() != ImageShape{field.dim(2), field.dim(1)})
        throw ShapeError("grid layout does not match query feature map " + shape_string(field.shape()));
    return {field.dim(0), field.dim(1), field.dim(2), protos.dim(0), protos.dim(1), grids.grid_height(),
            grids.grid_width()};
}

}  // namespace

Tensor grid_cosine_forward(const Tensor& field, const Tensor& protos, const GridSet& grids) {
    const CosineDims cd = cosine_dims(field, protos, grids);
    Tensor out(Shape{cd.classes, cd.n_g, cd.gh, cd.gw});
    const index_t pairs = static_cast<index_t>(cd.classes * cd.n_g);
    const std::size_t plane = cd.h * cd.w;

#pragma omp parallel for schedule(static)
    for (index_t pair = 0; pair < pairs; ++pair) {
        const float* p = protos.raw() + static_cast<std::size_t>(pair) * cd.d;
        const Grid& g = grids.grid(static_cast<std::size_t>(pair) % cd.n_g);
        double pn = 0.0;
        for (std::size_t ch = 0; ch < cd.d; ++ch) pn += static_cast<double>(p[ch]) * p[ch];
        const double pnorm = std::sqrt(pn);
        float* dst = out.raw() + static_cast<std::size_t>(pair) * cd.gh * cd.gw;
        for (std::size_t yy = 0; yy < cd.gh; ++yy) {
            for (std::size_t xx = 0; xx < cd.gw; ++xx) {
                const float* f = field.raw() + (g.y0 + yy) * cd.w + (g.x0 + xx);
                double dot = 0.0, fn = 0.0;
                for (std::size_t ch = 0; ch < cd.d; ++ch) {
                    const double fv = f[ch * plane];
                    dot += fv * p[ch];
                    fn += fv * fv;
                }
                const double denom = std::max(std::sqrt(fn) * pnorm, static_cast<double>(kCosineEps));
                dst[yy * cd.gw + xx] = static_cast<float>(dot / denom);
            }
        }
    }
    return out;
}

void grid_cosine_backward(const Tensor& grad_out, const Tensor& field, const Tensor& protos, const GridSet& grids,
                          Tensor* grad_field, Tensor* grad_protos) {
    const CosineDims cd = cosine_dims(field, protos, grids);
    const std::size_t plane = cd.h * cd.w;
    const double eps = kCosineEps;

    // Per-cell derivative pieces: with denom = |f||p| (floored at eps),
    //   dcos/df = p/denom - cos * f/|f|^2,  dcos/dp = f/denom - cos * p/|p|^2
    // and both correction terms vanish when the floor is active.
    auto cell_terms = [&](const float* f, const float* p, double pn, double& denom, double& cos_f, double& cos_p) {
        double dot = 0.0, fn = 0.0;
        for (std::size_t ch = 0; ch < cd.d; ++ch) {
            const double fv = f[ch * plane];
            dot += fv * p[ch];
            fn += fv * fv;
        }
        const double raw = std::sqrt(fn) * std::sqrt(pn);
        if (raw > eps) {
            denom = raw;
            cos_f = dot / raw / fn;
            cos_p = dot / raw / pn;
        } else {
            denom = eps;
            cos_f = cos_p = 0.0;
        }
    };

    std::vector<double> proto_norm(cd.classes * cd.n_g);
    for (std::size_t pair = 0; pair < proto_norm.size(); ++pair) {
        const float* p = protos.raw() + pair * cd.d;
        double pn = 0.0;
        for (std::size_t ch = 0; ch < cd.d; ++ch) pn += static_cast<double>(p[ch]) * p[ch];
        proto_norm[pair] = pn;
    }

    if (grad_protos) {
#pragma omp parallel
        {
            std::vector<double> acc(cd.d);
#pragma omp for schedule(static)
            for (index_t pair = 0; pair < static_cast<index_t>(cd.classes * cd.n_g); ++pair) {
                const auto pr = static_cast<std::size_t>(pair);
                const float* p = protos.raw() + pr * cd.d;
                const Grid& g = grids.grid(pr % cd.n_g);
                const float* go = grad_out.raw() + pr * cd.gh * cd.gw;
                std::fill(acc.begin(), acc.end(), 0.0);
                bool any = false;
                for (std::size_t yy = 0; yy < cd.gh; ++yy) {
                    for (std::size_t xx = 0; xx < cd.gw; ++xx) {
                        const double gv = go[yy * cd.gw + xx];
                        if (gv == 0.0) continue;
                        any = true;
                        const float* f = field.raw() + (g.y0 + yy) * cd.w + (g.x0 + xx);
                        double denom, cos_f, cos_p;
                        cell_terms(f, p, proto_norm[pr], denom, cos_f, cos_p);
                        for (std::size_t ch = 0; ch < cd.d; ++ch)
                            acc[ch] += gv * (f[ch * plane] / denom - cos_p * p[ch]);
                    }
                }
                if (!any) continue;
                float* dst = grad_protos->raw() + pr * cd.d;
                for (std::size_t ch = 0; ch < cd.d; ++ch) dst[ch] += static_cast<float>(acc[ch]);
            }
        }
    }

    if (grad_field) {
#pragma omp parallel
        {
            std::vector<double> acc(cd.d);
#pragma omp for schedule(static)
            for (index_t pix = 0; pix < static_cast<index_t>(plane); ++pix) {
                const auto px = static_cast<std::size_t>(pix);
                const std::size_t x = px % cd.w, y = px / cd.w;
                const float* f = field.raw() + px;
                std::fill(acc.begin(), acc.end(), 0.0);
                bool any = false;
                for (std::size_t c = 0; c < cd.classes; ++c) {
                    for (auto m : grids.coverage_at(px)) {
                        const Grid& g = grids.grid(m);
                        const std::size_t pr = c * cd.n_g + m;
                        const double gv = grad_out[(pr * cd.gh + (y - g.y0)) * cd.gw + (x - g.x0)];
                        if (gv == 0.0) continue;
                        any = true;
                        const float* p = protos.raw() + pr * cd.d;
                        double denom, cos_f, cos_p;
                        cell_terms(f, p, proto_norm[pr], denom, cos_f, cos_p);
                        for (std::size_t ch = 0; ch < cd.d; ++ch)
                            acc[ch] += gv * (p[ch] / denom - cos_f * f[ch * plane]);
                    }
                }
                if (!any) continue;
                float* dst = grad_field->raw() + px;
                for (std::size_t ch = 0; ch < cd.d; ++ch) dst[ch * plane] += static_cast<float>(acc[ch]);
            }
        }
    }
}

GridMaxResult max_over_grids_forward(const Tensor& window_scores, std::span<const std::uint8_t> present,
                                     const GridSet& grids) {
    require_rank(window_scores, 4, "max_over_grids");
    const std::size_t classes = window_scores.dim(0), n_g = window_scores.dim(1);
    const std::size_t gh = window_scores.dim(2), gw = window_scores.dim(3);
    if (n_g != grids.size() || gh != grids.grid_height() || gw != grids.grid_width())
        throw ShapeError("window scores " + shape_string(window_scores.shape()) + " do not match grid layout");
    if (present.size() != classes * n_g) throw ShapeError("presence flags do not match window scores");
    const std::size_t w = grids.shape().width, h = grids.shape().height;
    GridMaxResult r{Tensor(Shape{classes, h, w}), std::vector<std::int32_t>(classes * h * w, -1), 0.0f};

#pragma omp parallel for collapse(2) schedule(static)
    for (index_t ci = 0; ci < static_cast<index_t>(classes); ++ci) {
        for (index_t pix = 0; pix < static_cast<index_t>(h * w); ++pix) {
            const auto c = static_cast<std::size_t>(ci);
            const auto px = static_cast<std::size_t>(pix);
            const std::size_t x = px % w, y = px / w;
            std::int32_t win = -1;
            float best = kScoreAbsent;
            for (auto m : grids.coverage_at(px)) {
                if (!present[c * n_g + m]) continue;
                const Grid& g = grids.grid(m);
                const float s = window_scores[((c * n_g + m) * gh + (y - g.y0)) * gw + (x - g.x0)];
                if (win < 0 || s > best) {
                    best = s;
                    win = static_cast<std::int32_t>(m);
                }
            }
            r.scores[c * h * w + px] = best;
            r.winner[c * h * w + px] = win;
        }
    }
    return r;
}

void max_over_grids_backward(const Tensor& grad_out, std::span<const std::int32_t> winner, const GridSet& grids,
                             Tensor& grad_window_scores) {
    const std::size_t classes = grad_window_scores.dim(0), n_g = grad_window_scores.dim(1);
    const std::size_t gh = grad_window_scores.dim(2), gw = grad_window_scores.dim(3);
    const std::size_t w = grids.shape().width, h = grids.shape().height;
    for (std::size_t c = 0; c < classes; ++c) {
        for (std::size_t px = 0; px < h * w; ++px) {
            const std::int32_t m = winner[c * h * w + px];
            if (m < 0) continue;
            const Grid& g = grids.grid(static_cast<std::size_t>(m));
            const std::size_t x = px % w, y = px / w;
            grad_window_scores[((c * n_g + static_cast<std::size_t>(m)) * gh + (y - g.y0)) * gw + (x - g.x0)] +=
                grad_out[c * h * w + px];
        }
    }
}

Tensor softmax_channels(const Tensor& logits) {
    require_rank(logits, 3, "softmax");
    const std::size_t classes = logits.dim(0), plane = logits.dim(1) * logits.dim(2);
    Tensor out(logits.shape());
    std::vector<double> e(classes);
    for (std::size_t px = 0; px < plane; ++px) {
        float mx = logits[px];
        for (std::size_t c = 1; c < classes; ++c) mx = std::max(mx, logits[c * plane + px]);
        double sum = 0.0;
        for (std::size_t c = 0; c < classes; ++c) {
            e[c] = std::exp(static_cast<double>(logits[c * plane + px]) - mx);
            sum += e[c];
        }
        for (std::size_t c = 0; c < classes; ++c) out[c * plane + px] = static_cast<float>(e[c] / sum);
    }
    return out;
}

double softmax_cross_entropy(const Tensor& logits, const Tensor& target, Tensor* grad) {
    require_rank(logits, 3, "softmax_cross_entropy");
    if (target.shape() != logits.shape())
        throw ShapeError("cross-entropy target " + shape_string(target.shape()) + " does not match logits " +
                         shape_string(logits.shape()));
    const std::size_t classes = logits.dim(0), plane = logits.dim(1) * logits.dim(2);
    const double inv = 1.0 / static_cast<double>(plane);
    std::vector<double> e(classes);
    double total = 0.0;
    for (std::size_t px = 0; px < plane; ++px) {
        double mx = logits[px];
        for (std::size_t c = 1; c < classes; ++c) mx = std::max(mx, static_cast<double>(logits[c * plane + px]));
        double sum = 0.0, tsum = 0.0;
        for (std::size_t c = 0; c < classes; ++c) {
            e[c] = std::exp(static_cast<double>(logits[c * plane + px]) - mx);
            sum += e[c];
            tsum += target[c * plane + px];
        }
        const double lse = mx + std::log(sum);
        for (std::size_t c = 0; c < classes; ++c)
            total += static_cast<double>(target[c * plane + px]) * (lse - logits[c * plane + px]);
        if (grad)
            for (std::size_t c = 0; c < classes; ++c)
                (*grad)[c * plane + px] +=
                    static_cast<float>((e[c] / sum * tsum - target[c * plane + px]) * inv);
    }
    return total * inv;
}

}  // namespace lslp::kernels
