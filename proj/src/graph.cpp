#include "lslp/graph.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <utility>

#include "lslp/error.hpp"

namespace lslp {

std::string_view op_name(OpTag tag) {
    switch (tag) {
        case OpTag::Input: return "input";
        case OpTag::Parameter: return "parameter";
        case OpTag::Conv2d: return "conv2d";
        case OpTag::BiasAdd: return "bias_add";
        case OpTag::Relu: return "relu";
        case OpTag::MaxPool2: return "max_pool2";
        case OpTag::MaskedPool: return "masked_pool";
        case OpTag::CosineMap: return "cosine_map";
        case OpTag::GridCosine: return "grid_cosine";
        case OpTag::MaxOverGrids: return "max_over_grids";
        case OpTag::Scale: return "scale";
        case OpTag::Add: return "add";
        case OpTag::Mul: return "mul";
        case OpTag::Sum: return "sum";
        case OpTag::SoftmaxCrossEntropy: return "softmax_cross_entropy";
    }
    return "unknown";
}

namespace {

using detail::Op;

inline std::uint64_t mix(std::uint64_t h, std::uint64_t v) {
    h ^= v + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
    return h;
}

using detail::Values64;

Values64 zeros64(Shape shape) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return {std::move(shape), std::vector<double>(n, 0.0)};
}

Values64 to64(const Tensor& t) { return {t.shape(), std::vector<double>(t.data().begin(), t.data().end())}; }

std::uint64_t fold_signs(std::uint64_t h, std::span<const std::uint8_t> signs) {
    std::uint64_t word = 0;
    for (std::size_t i = 0; i < signs.size(); ++i) {
        word = word * 3 + signs[i];
        if (i % 32 == 31) {
            h = mix(h, word);
            word = 0;
        }
    }
    return mix(h, word);
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
    if (a.shape() != b.shape())
        throw ShapeError(std::string(what) + " operands differ: " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
}

class LeafOp final : public Op {
public:
    explicit LeafOp(OpTag tag) : tag_(tag) {}
    OpTag tag() const override { return tag_; }
    Tensor forward(std::span<const Tensor* const>) override { return {}; }
    void backward(std::span<const Tensor* const>, const Tensor&, const Tensor&, std::span<Tensor* const>) override {}

private:
    OpTag tag_;
};

class Conv2dOp final : public Op {
public:
    explicit Conv2dOp(std::size_t pad) : pad_(pad) {}
    OpTag tag() const override { return OpTag::Conv2d; }
    Tensor forward(std::span<const Tensor* const> in) override { return kernels::conv2d_forward(*in[0], *in[1], pad_); }
    void backward(std::span<const Tensor* const> in, const Tensor&, const Tensor& g,
                  std::span<Tensor* const> gin) override {
        if (gin[0]) kernels::conv2d_backward_input(g, *in[1], pad_, *gin[0]);
        if (gin[1]) kernels::conv2d_backward_weight(g, *in[0], pad_, *gin[1]);
    }
    Values64 forward64(std::span<const Values64* const> in, std::uint64_t&) const override {
        const Values64 &x = *in[0], &w = *in[1];
        const std::size_t cin = x.shape[0], h = x.shape[1], wd = x.shape[2];
        const std::size_t cout = w.shape[0], k = w.shape[2];
        const std::size_t oh = h + 2 * pad_ - k + 1, ow = wd + 2 * pad_ - k + 1;
        Values64 out = zeros64({cout, oh, ow});
        for (std::size_t o = 0; o < cout; ++o)
            for (std::size_t oy = 0; oy < oh; ++oy)
                for (std::size_t ox = 0; ox < ow; ++ox) {
                    double acc = 0.0;
                    for (std::size_t c = 0; c < cin; ++c)
                        for (std::size_t ky = 0; ky < k; ++ky)
                            for (std::size_t kx = 0; kx < k; ++kx) {
                                const auto iy = static_cast<std::ptrdiff_t>(oy + ky) - static_cast<std::ptrdiff_t>(pad_);
                                const auto ix = static_cast<std::ptrdiff_t>(ox + kx) - static_cast<std::ptrdiff_t>(pad_);
                                if (iy < 0 || ix < 0 || iy >= static_cast<std::ptrdiff_t>(h) ||
                                    ix >= static_cast<std::ptrdiff_t>(wd))
                                    continue;
                                acc += x.v[(c * h + static_cast<std::size_t>(iy)) * wd + static_cast<std::size_t>(ix)] *
                                       w.v[((o * cin + c) * k + ky) * k + kx];
                            }
                    out.v[(o * oh + oy) * ow + ox] = acc;
                }
        return out;
    }

private:
    std::size_t pad_;
};

class BiasAddOp final : public Op {
public:
    OpTag tag() const override { return OpTag::BiasAdd; }
    Tensor forward(std::span<const Tensor* const> in) override { return kernels::bias_add_forward(*in[0], *in[1]); }
    void backward(std::span<const Tensor* const>, const Tensor&, const Tensor& g,
                  std::span<Tensor* const> gin) override {
        if (gin[0])
            for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += g[i];
        if (gin[1]) {
            const std::size_t plane = g.dim(1) * g.dim(2);
            for (std::size_t c = 0; c < g.dim(0); ++c) {
                double s = 0.0;
                for (std::size_t i = 0; i < plane; ++i) s += g[c * plane + i];
                (*gin[1])[c] += static_cast<float>(s);
            }
        }
    }
    Values64 forward64(std::span<const Values64* const> in, std::uint64_t&) const override {
        Values64 out = *in[0];
        const std::size_t plane = out.shape[1] * out.shape[2];
        for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] += in[1]->v[i / plane];
        return out;
    }
};

class MaxPool2Op final : public Op {
public:
    OpTag tag() const override { return OpTag::MaxPool2; }
    Tensor forward(std::span<const Tensor* const> in) override {
        auto r = kernels::max_pool2_forward(*in[0]);
        argmax_ = std::move(r.argmax);
        return std::move(r.output);
    }
    void backward(std::span<const Tensor* const>, const Tensor&, const Tensor& g,
                  std::span<Tensor* const> gin) override {
        if (gin[0]) kernels::max_pool2_backward(g, argmax_, *gin[0]);
    }
    std::uint64_t decisions(std::uint64_t h) const override {
        for (auto a : argmax_) h = mix(h, a);
        return h;
    }
    Values64 forward64(std::span<const Values64* const> in, std::uint64_t& h) const override {
        const Values64& x = *in[0];
        const std::size_t c = x.shape[0], hh = x.shape[1], w = x.shape[2], oh = hh / 2, ow = w / 2;
        Values64 out = zeros64({c, oh, ow});
        for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t oy = 0; oy < oh; ++oy)
                for (std::size_t ox = 0; ox < ow; ++ox) {
                    const std::size_t base = (ch * hh + 2 * oy) * w + 2 * ox;
                    const std::size_t cand[4] = {base, base + 1, base + w, base + w + 1};
                    std::size_t best = cand[0];
                    for (int i = 1; i < 4; ++i)
                        if (x.v[cand[i]] > x.v[best] || std::isnan(x.v[cand[i]])) best = cand[i];
                    out.v[(ch * oh + oy) * ow + ox] = x.v[best];
                    h = mix(h, best);
                }
        return out;
    }

private:
    std::vector<std::uint32_t> argmax_;
};

class MaskedPoolOp final : public Op {
public:
    MaskedPoolOp(std::vector<Tensor> weights, std::shared_ptr<const GridSet> grids, ShotAveraging averaging)
        : weights_(std::move(weights)), grids_(std::move(grids)), averaging_(averaging) {
        for (const auto& w : weights_) weight_ptrs_.push_back(&w);
    }
    OpTag tag() const override { return OpTag::MaskedPool; }
    Tensor forward(std::span<const Tensor* const> in) override {
        pooled_ = kernels::masked_pool_forward(in, weight_ptrs_, *grids_, averaging_);
        return pooled_.vectors;
    }
    void backward(std::span<const Tensor* const>, const Tensor&, const Tensor& g,
                  std::span<Tensor* const> gin) override {
        kernels::masked_pool_backward(g, weight_ptrs_, *grids_, pooled_, gin);
    }
    Values64 forward64(std::span<const Values64* const> in, std::uint64_t&) const override {
        const std::size_t k = in.size(), d = in[0]->shape[0], h = in[0]->shape[1], w = in[0]->shape[2];
        const std::size_t classes = weights_[0].dim(0), n_g = grids_->size();
        Values64 out = zeros64({classes, n_g, d});
        for (std::size_t c = 0; c < classes; ++c)
            for (const Grid& g : grids_->grids()) {
                std::vector<double> sum(d, 0.0);
                std::size_t valid = 0;
                for (std::size_t i = 0; i < k; ++i) {
                    double ws = 0.0;
                    std::vector<double> acc(d, 0.0);
                    for (std::size_t y = g.y0; y < g.y0 + g.height; ++y)
                        for (std::size_t x = g.x0; x < g.x0 + g.width; ++x) {
                            const double wv = weights_[i].at(c, y, x);
                            ws += wv;
                            for (std::size_t ch = 0; ch < d; ++ch) acc[ch] += wv * in[i]->v[(ch * h + y) * w + x];
                        }
                    if (!(ws > kMaskEps)) continue;
                    ++valid;
                    for (std::size_t ch = 0; ch < d; ++ch) sum[ch] += acc[ch] / ws;
                }
                if (valid == 0) continue;
                const double div = averaging_ == ShotAveraging::ValidShots ? static_cast<double>(valid)
                                                                           : static_cast<double>(k);
                for (std::size_t ch = 0; ch < d; ++ch) out.v[(c * n_g + g.id) * d + ch] = sum[ch] / div;
            }
        return out;
    }

private:
    std::vector<Tensor> weights_;
    std::vector<const Tensor*> weight_ptrs_;
    std::shared_ptr<const GridSet> grids_;
    ShotAveraging averaging_;
    kernels::PooledPrototypes pooled_;
};

class GridCosineOp final : public Op {
public:
    GridCosineOp(std::shared_ptr<const GridSet> grids, OpTag tag) : grids_(std::move(grids)), tag_(tag) {}
    OpTag tag() const override { return tag_; }
    Tensor forward(std::span<const Tensor* const> in) override {
        return kernels::grid_cosine_forward(*in[0], protos(*in[1]), *grids_);
    }
    void backward(std::span<const Tensor* const> in, const Tensor&, const Tensor& g,
                  std::span<Tensor* const> gin) override {
        Tensor gp;
        if (gin[1]) gp = Tensor(protos(*in[1]).shape());
        const Tensor grad_out = g.reshaped(window_shape(*in[1]));
        kernels::grid_cosine_backward(grad_out, *in[0], protos(*in[1]), *grids_, gin[0], gin[1] ? &gp : nullptr);
        if (gin[1])
            for (std::size_t i = 0; i < gp.size(); ++i) (*gin[1])[i] += gp[i];
    }
    Values64 forward64(std::span<const Values64* const> in, std::uint64_t&) const override {
        const Values64& f = *in[0];
        const Values64& p = *in[1];
        const std::size_t d = f.shape[0], h = f.shape[1], w = f.shape[2];
        const std::size_t pairs = p.v.size() / d, n_g = grids_->size();
        const std::size_t gh = grids_->grid_height(), gw = grids_->grid_width();
        Values64 out = zeros64({pairs / n_g, n_g, gh, gw});
        for (std::size_t pair = 0; pair < pairs; ++pair) {
            const Grid& g = grids_->grid(pair % n_g);
            double pn = 0.0;
            for (std::size_t ch = 0; ch < d; ++ch) pn += p.v[pair * d + ch] * p.v[pair * d + ch];
            for (std::size_t yy = 0; yy < gh; ++yy)
                for (std::size_t xx = 0; xx < gw; ++xx) {
                    double dot = 0.0, fn = 0.0;
                    for (std::size_t ch = 0; ch < d; ++ch) {
                        const double fv = f.v[(ch * h + g.y0 + yy) * w + g.x0 + xx];
                        dot += fv * p.v[pair * d + ch];
                        fn += fv * fv;
                    }
                    out.v[(pair * gh + yy) * gw + xx] =
                        dot / std::max(std::sqrt(fn) * std::sqrt(pn), static_cast<double>(kCosineEps));
                }
        }
        return out;
    }

private:
    // cosine_map takes a bare (d) vector; view it as a (1, 1, d) table.
    Tensor protos(const Tensor& p) const {
        if (tag_ == OpTag::CosineMap) {
            if (p.rank() != 1) throw ShapeError("cosine_map expects a (d) vector, got " + shape_string(p.shape()));
            return p.reshaped(Shape{1, 1, p.size()});
        }
        return p;
    }
    Shape window_shape(const Tensor& p) const {
        const Tensor t = protos(p);
        return Shape{t.dim(0), t.dim(1), grids_->grid_height(), grids_->grid_width()};
    }

    std::shared_ptr<const GridSet> grids_;
    OpTag tag_;
};

class CosineMapOp final : public Op {
public:
    OpTag tag() const override { return OpTag::CosineMap; }
    Tensor forward(std::span<const Tensor* const> in) override {
        bind(*in[0]);
        const Tensor out = inner_->forward(in);
        return out.reshaped(Shape{in[0]->dim(1), in[0]->dim(2)});
    }
    void backward(std::span<const Tensor* const> in, const Tensor& out, const Tensor& g,
                  std::span<Tensor* const> gin) override {
        inner_->backward(in, out, g, gin);
    }
    Values64 forward64(std::span<const Values64* const> in, std::uint64_t& h) const override {
        if (!inner_) throw Error("cosine_map: 64-bit pass before forward()");
        Values64 out = inner_->forward64(in, h);
        out.shape = {in[0]->shape[1], in[0]->shape[2]};
        return out;
    }

private:
    void bind(const Tensor& field) {
        if (field.rank() != 3) throw ShapeError("cosine_map expects a (d, H, W) field, got " + shape_string(field.shape()));
        const ImageShape shape{field.dim(2), field.dim(1)};
        if (!grids_ || grids_->shape() != shape) {
            grids_ = std::make_shared<const GridSet>(GridSet::build(shape, 1.0, 1.0));
            inner_ = std::make_unique<GridCosineOp>(grids_, OpTag::CosineMap);
        }
    }
    std::shared_ptr<const GridSet> grids_;
    std::unique_ptr<GridCosineOp> inner_;
};

class MaxOverGridsOp final : public Op {
public:
    MaxOverGridsOp(std::vector<std::uint8_t> present, std::shared_ptr<const GridSet> grids)
        : present_(std::move(present)), grids_(std::move(grids)) {}
    OpTag tag() const override { return OpTag::MaxOverGrids; }
    Tensor forward(std::span<const Tensor* const> in) override {
        auto r = kernels::max_over_grids_forward(*in[0], present_, *grids_);
        winner_ = std::move(r.winner);
        return std::move(r.scores);
    }
    void backward(std::span<const Tensor* const>, const Tensor&, const Tensor& g,
                  std::span<Tensor* const> gin) override {
        if (gin[0]) kernels::max_over_grids_backward(g, winner_, *grids_, *gin[0]);
    }
    std::uint64_t decisions(std::uint64_t h) const override {
        for (auto w : winner_) h = mix(h, static_cast<std::uint64_t>(static_cast<std::int64_t>(w)));
        return h;
    }
    Values64 forward64(std::span<const Values64* const> in, std::uint64_t& h) const override {
        const Values64& s = *in[0];
        const std::size_t classes = s.shape[0], n_g = s.shape[1], gh = s.shape[2], gw = s.shape[3];
        const std::size_t w = grids_->shape().width, hh = grids_->shape().height;
        Values64 out = zeros64({classes, hh, w});
        for (std::size_t c = 0; c < classes; ++c)
            for (std::size_t px = 0; px < hh * w; ++px) {
                const std::size_t x = px % w, y = px / w;
                std::int32_t win = -1;
                double best = kScoreAbsent;
                for (auto m : grids_->coverage_at(px)) {
                    if (!present_[c * n_g + m]) continue;
                    const Grid& g = grids_->grid(m);
                    const double v = s.v[((c * n_g + m) * gh + (y - g.y0)) * gw + (x - g.x0)];
                    if (win < 0 || v > best) {
                        best = v;
                        win = static_cast<std::int32_t>(m);
                    }
                }
                out.v[c * hh * w + px] = best;
                h = mix(h, static_cast<std::uint64_t>(static_cast<std::int64_t>(win)));
            }
        return out;
    }

private:
    std::vector<std::uint8_t> present_;
    std::shared_ptr<const GridSet> grids_;
    std::vector<std::int32_t> winner_;
};

class ScaleOp final : public Op {
public:
    explicit ScaleOp(float factor) : factor_(factor) {}
    OpTag tag() const override { return OpTag::Scale; }
    Tensor forward(std::span<const Tensor* const> in) override {
        Tensor out = *in[0];
        for (auto& v : out.data()) v *= factor_;
        return out;
    }
    void backward(std::span<const Tensor* const>, const Tensor&, const Tensor& g,
                  std::span<Tensor* const> gin) override {
        if (gin[0])
            for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += factor_ * g[i];
    }
    Values64 forward64(std::span<const Values64* const> in, std::uint64_t&) const override {
        Values64 out = *in[0];
        for (auto& v : out.v) v *= factor_;
        return out;
    }

private:
    float factor_;
};

class AddOp final : public Op {
public:
    OpTag tag() const override { return OpTag::Add; }
    Tensor forward(std::span<const Tensor* const> in) override {
        require_same_shape(*in[0], *in[1], "add");
        Tensor out = *in[0];
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += (*in[1])[i];
        return out;
    }
    void backward(std::span<const Tensor* const>, const Tensor&, const Tensor& g,
                  std::span<Tensor* const> gin) override {
        for (Tensor* t : gin)
            if (t)
                for (std::size_t i = 0; i < g.size(); ++i) (*t)[i] += g[i];
    }
    Values64 forward64(std::span<const Values64* const> in, std::uint64_t&) const override {
        Values64 out = *in[0];
        for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] += in[1]->v[i];
        return out;
    }
};

class MulOp final : public Op {
public:
    OpTag tag() const override { return OpTag::Mul; }
    Tensor forward(std::span<const Tensor* const> in) override {
        require_same_shape(*in[0], *in[1], "mul");
        Tensor out = *in[0];
        for (std::size_t i = 0; i < out.size(); ++i) out[i] *= (*in[1])[i];
        return out;
    }
    void backward(std::span<const Tensor* const> in, const Tensor&, const Tensor& g,
                  std::span<Tensor* const> gin) override {
        if (gin[0])
            for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += g[i] * (*in[1])[i];
        if (gin[1])
            for (std::size_t i = 0; i < g.size(); ++i) (*gin[1])[i] += g[i] * (*in[0])[i];
    }
    Values64 forward64(std::span<const Values64* const> in, std::uint64_t&) const override {
        Values64 out = *in[0];
        for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] *= in[1]->v[i];
        return out;
    }
};

class SumOp final : public Op {
public:
    OpTag tag() const override { return OpTag::Sum; }
    Tensor forward(std::span<const Tensor* const> in) override {
        double s = 0.0;
        for (float v : in[0]->data()) s += v;
        return Tensor::scalar(static_cast<float>(s));
    }
    void backward(std::span<const Tensor* const>, const Tensor&, const Tensor& g,
                  std::span<Tensor* const> gin) override {
        if (gin[0])
            for (auto& v : gin[0]->data()) v += g[0];
    }
    Values64 forward64(std::span<const Values64* const> in, std::uint64_t&) const override {
        double s = 0.0;
        for (double v : in[0]->v) s += v;
        return {Shape{}, {s}};
    }
};

class SoftmaxCrossEntropyOp final : public Op {
public:
    explicit SoftmaxCrossEntropyOp(Tensor target) : target_(std::move(target)) {}
    OpTag tag() const override { return OpTag::SoftmaxCrossEntropy; }
    Tensor forward(std::span<const Tensor* const> in) override {
        return Tensor::scalar(static_cast<float>(kernels::softmax_cross_entropy(*in[0], target_, nullptr)));
    }
    void backward(std::span<const Tensor* const> in, const Tensor&, const Tensor& g,
                  std::span<Tensor* const> gin) override {
        if (!gin[0]) return;
        Tensor local(in[0]->shape());
        kernels::softmax_cross_entropy(*in[0], target_, &local);
        for (std::size_t i = 0; i < local.size(); ++i) (*gin[0])[i] += g[0] * local[i];
    }
    Values64 forward64(std::span<const Values64* const> in, std::uint64_t&) const override {
        const Values64& z = *in[0];
        const std::size_t classes = z.shape[0], plane = z.shape[1] * z.shape[2];
        double total = 0.0;
        for (std::size_t px = 0; px < plane; ++px) {
            double mx = z.v[px];
            for (std::size_t c = 1; c < classes; ++c) mx = std::max(mx, z.v[c * plane + px]);
            double sum = 0.0;
            for (std::size_t c = 0; c < classes; ++c) sum += std::exp(z.v[c * plane + px] - mx);
            const double lse = mx + std::log(sum);
            for (std::size_t c = 0; c < classes; ++c) total += target_[c * plane + px] * (lse - z.v[c * plane + px]);
        }
        return {Shape{}, {total / static_cast<double>(plane)}};
    }

private:
    Tensor target_;
};

// Keeps the sign pattern (negative / exactly zero / positive) of its input.
class ReluSignOp final : public Op {
public:
    OpTag tag() const override { return OpTag::Relu; }
    Tensor forward(std::span<const Tensor* const> in) override {
        signs_.assign(in[0]->size(), 0);
        Tensor out = *in[0];
        for (std::size_t i = 0; i < out.size(); ++i) {
            const float v = out[i];
            signs_[i] = v > 0.0f ? 2 : (v == 0.0f ? 1 : 0);
            out[i] = v < 0.0f ? 0.0f : v;  // NaN passes through
        }
        return out;
    }
    void backward(std::span<const Tensor* const>, const Tensor&, const Tensor& g,
                  std::span<Tensor* const> gin) override {
        if (!gin[0]) return;
        for (std::size_t i = 0; i < g.size(); ++i)
            if (signs_[i] == 2) (*gin[0])[i] += g[i];
    }
    std::uint64_t decisions(std::uint64_t h) const override { return fold_signs(h, signs_); }
    Values64 forward64(std::span<const Values64* const> in, std::uint64_t& h) const override {
        Values64 out = *in[0];
        std::vector<std::uint8_t> signs(out.v.size());
        for (std::size_t i = 0; i < out.v.size(); ++i) {
            const double v = out.v[i];
            signs[i] = v > 0.0 ? 2 : (v == 0.0 ? 1 : 0);
            out.v[i] = v < 0.0 ? 0.0 : v;
        }
        h = fold_signs(h, signs);
        return out;
    }

private:
    std::vector<std::uint8_t> signs_;
};

}  // namespace

detail::Values64 detail::Op::forward64(std::span<const Values64* const>, std::uint64_t&) const {
    throw Error("no 64-bit forward for " + std::string(op_name(tag())));
}

struct Graph::Node {
    OpTag tag;
    std::string name;
    std::vector<NodeId> inputs;
    std::unique_ptr<Op> op;
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
};

Graph::Graph() = default;
Graph::~Graph() = default;
Graph::Graph(Graph&&) noexcept = default;
Graph& Graph::operator=(Graph&&) noexcept = default;

NodeId Graph::push(std::unique_ptr<Op> op, std::vector<NodeId> inputs, std::string name) {
    for (auto id : inputs)
        if (id.index >= nodes_.size()) throw Error("graph input refers to unknown node " + std::to_string(id.index));
    Node n;
    n.tag = op->tag();
    n.name = name.empty() ? std::string(op_name(n.tag)) : std::move(name);
    n.requires_grad = std::any_of(inputs.begin(), inputs.end(),
                                  [&](NodeId id) { return nodes_[id.index].requires_grad; });
    n.inputs = std::move(inputs);
    n.op = std::move(op);
    nodes_.push_back(std::move(n));
    forwarded_ = false;
    return NodeId{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

NodeId Graph::input(Tensor value, std::string name) {
    auto id = push(std::make_unique<LeafOp>(OpTag::Input), {}, std::move(name));
    nodes_.back().value = std::move(value);
    return id;
}

NodeId Graph::parameter(Tensor value, std::string name) {
    auto id = push(std::make_unique<LeafOp>(OpTag::Parameter), {}, std::move(name));
    nodes_.back().value = std::move(value);
    nodes_.back().requires_grad = true;
    return id;
}

NodeId Graph::conv2d(NodeId x, NodeId weight, std::size_t pad, std::string name) {
    return push(std::make_unique<Conv2dOp>(pad), {x, weight}, std::move(name));
}
NodeId Graph::bias_add(NodeId x, NodeId bias, std::string name) {
    return push(std::make_unique<BiasAddOp>(), {x, bias}, std::move(name));
}
NodeId Graph::relu(NodeId x, std::string name) { return push(std::make_unique<ReluSignOp>(), {x}, std::move(name)); }
NodeId Graph::max_pool2(NodeId x, std::string name) {
    return push(std::make_unique<MaxPool2Op>(), {x}, std::move(name));
}
NodeId Graph::masked_pool(std::vector<NodeId> features, std::vector<Tensor> weights,
                          std::shared_ptr<const GridSet> grids, ShotAveraging averaging, std::string name) {
    if (features.size() != weights.size())
        throw ShapeError("masked_pool: " + std::to_string(features.size()) + " feature nodes but " +
                         std::to_string(weights.size()) + " weight maps");
    return push(std::make_unique<MaskedPoolOp>(std::move(weights), std::move(grids), averaging), std::move(features),
                std::move(name));
}
NodeId Graph::cosine_map(NodeId field, NodeId vector, std::string name) {
    return push(std::make_unique<CosineMapOp>(), {field, vector}, std::move(name));
}
NodeId Graph::grid_cosine(NodeId field, NodeId protos, std::shared_ptr<const GridSet> grids, std::string name) {
    return push(std::make_unique<GridCosineOp>(std::move(grids), OpTag::GridCosine), {field, protos}, std::move(name));
}
NodeId Graph::max_over_grids(NodeId window_scores, std::vector<std::uint8_t> present,
                             std::shared_ptr<const GridSet> grids, std::string name) {
    return push(std::make_unique<MaxOverGridsOp>(std::move(present), std::move(grids)), {window_scores},
                std::move(name));
}
NodeId Graph::scale(NodeId x, float factor, std::string name) {
    return push(std::make_unique<ScaleOp>(factor), {x}, std::move(name));
}
NodeId Graph::add(NodeId a, NodeId b, std::string name) { return push(std::make_unique<AddOp>(), {a, b}, std::move(name)); }
NodeId Graph::mul(NodeId a, NodeId b, std::string name) { return push(std::make_unique<MulOp>(), {a, b}, std::move(name)); }
NodeId Graph::sum(NodeId x, std::string name) { return push(std::make_unique<SumOp>(), {x}, std::move(name)); }
NodeId Graph::softmax_cross_entropy(NodeId logits, Tensor target, std::string name) {
    return push(std::make_unique<SoftmaxCrossEntropyOp>(std::move(target)), {logits}, std::move(name));
}

const Graph::Node& Graph::node(NodeId id) const {
    if (id.index >= nodes_.size()) throw Error("unknown graph node " + std::to_string(id.index));
    return nodes_[id.index];
}

std::string Graph::describe(NodeId id) const {
    const Node& n = node(id);
    return "node " + std::to_string(id.index) + " (" + std::string(op_name(n.tag)) + " '" + n.name + "')";
}

const Tensor& Graph::forward() {
    if (nodes_.empty()) throw Error("forward on an empty graph");
    std::vector<const Tensor*> in;
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
        Node& n = nodes_[i];
        if (n.tag == OpTag::Input || n.tag == OpTag::Parameter) continue;
        in.clear();
        for (auto id : n.inputs) in.push_back(&nodes_[id.index].value);
        try {
            n.value = n.op->forward(in);
        } catch (const ShapeError& e) {
            throw ShapeError(describe(NodeId{static_cast<std::uint32_t>(i)}) + ": " + e.what());
        }
    }
    forwarded_ = true;
    backwarded_ = false;
    return nodes_.back().value;
}

void Graph::backward() {
    if (!forwarded_) throw Error("backward() called before forward()");
    Node& loss = nodes_.back();
    if (loss.value.size() != 1) throw ShapeError("backward needs a scalar loss, got " + shape_string(loss.value.shape()));
    for (auto& n : nodes_) n.grad = n.requires_grad ? Tensor(n.value.shape()) : Tensor();
    if (!loss.requires_grad) loss.grad = Tensor(loss.value.shape());
    loss.grad[0] = 1.0f;

    std::vector<const Tensor*> in;
    std::vector<Tensor*> gin;
    for (std::size_t i = nodes_.size(); i-- > 0;) {
        Node& n = nodes_[i];
        if (!n.requires_grad || n.inputs.empty()) continue;
        in.clear();
        gin.clear();
        for (auto id : n.inputs) {
            Node& src = nodes_[id.index];
            in.push_back(&src.value);
            gin.push_back(src.requires_grad ? &src.grad : nullptr);
        }
        n.op->backward(in, n.value, n.grad, gin);
    }
    backwarded_ = true;
}

const Tensor& Graph::value(NodeId id) const { return node(id).value; }

const Tensor& Graph::grad(NodeId id) const {
    if (!backwarded_) throw Error("gradients requested before backward()");
    const Node& n = node(id);
    if (n.grad.empty()) throw Error(describe(id) + " does not carry a gradient");
    return n.grad;
}

void Graph::set_value(NodeId leaf, Tensor value) {
    Node& n = nodes_.at(leaf.index);
    if (n.tag != OpTag::Input && n.tag != OpTag::Parameter) throw Error("set_value on non-leaf " + describe(leaf));
    if (value.shape() != n.value.shape())
        throw ShapeError("set_value shape " + shape_string(value.shape()) + " differs from " +
                         shape_string(n.value.shape()) + " at " + describe(leaf));
    n.value = std::move(value);
    forwarded_ = false;
    backwarded_ = false;
}

std::size_t Graph::size() const { return nodes_.size(); }
NodeId Graph::last() const {
    if (nodes_.empty()) throw Error("empty graph");
    return NodeId{static_cast<std::uint32_t>(nodes_.size() - 1)};
}
OpTag Graph::tag(NodeId id) const { return node(id).tag; }
const std::string& Graph::name(NodeId id) const { return node(id).name; }

std::vector<NodeId> Graph::parameters() const {
    std::vector<NodeId> out;
    for (std::size_t i = 0; i < nodes_.size(); ++i)
        if (nodes_[i].tag == OpTag::Parameter) out.push_back(NodeId{static_cast<std::uint32_t>(i)});
    return out;
}

std::uint64_t Graph::decision_signature() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& n : nodes_) h = n.op->decisions(h);
    return h;
}

double Graph::forward64(NodeId leaf, std::size_t index, double delta, std::uint64_t& signature) const {
    if (!forwarded_) throw Error("forward64() needs a prior forward()");
    const Node& target = node(leaf);
    if (index >= target.value.size()) throw Error("forward64 index out of range at " + describe(leaf));
    std::vector<Values64> values(nodes_.size());
    std::vector<const Values64*> in;
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
        const Node& n = nodes_[i];
        if (n.tag == OpTag::Input || n.tag == OpTag::Parameter) {
            values[i] = to64(n.value);
            if (i == leaf.index) values[i].v[index] += delta;
            continue;
        }
        in.clear();
        for (auto id : n.inputs) in.push_back(&values[id.index]);
        values[i] = n.op->forward64(in, h);
    }
    signature = h;
    return values.back().v.at(0);
}

GradCheckResult grad_check(Graph& graph, std::span<const NodeId> params, const GradCheckOptions& options) {
    if (!(options.step > 0.0)) throw Error("grad_check step must be positive");
    if (graph.forward().size() != 1) throw ShapeError("grad_check needs a scalar loss");
    graph.backward();
    const std::uint64_t base_signature = graph.decision_signature();

    std::vector<std::pair<NodeId, Tensor>> analytic;
    std::size_t total = 0;
    for (auto id : params) {
        analytic.emplace_back(id, graph.grad(id));
        total += graph.value(id).size();
    }
    GradCheckResult result;
    if (total == 0) return result;

    std::mt19937_64 rng(options.seed);
    std::uniform_int_distribution<std::size_t> pick(0, total - 1);
    for (std::size_t s = 0; s < options.samples; ++s) {
        std::size_t flat = pick(rng);
        std::size_t which = 0;
        while (flat >= analytic[which].second.size()) flat -= analytic[which++].second.size();
        const NodeId id = analytic[which].first;

        std::uint64_t sig_up = 0, sig_down = 0;
        const double loss_up = graph.forward64(id, flat, options.step, sig_up);
        const double loss_down = graph.forward64(id, flat, -options.step, sig_down);
        if (sig_up != base_signature || sig_down != base_signature) {
            ++result.skipped;
            continue;
        }
        const double numeric = (loss_up - loss_down) / (2.0 * options.step);
        const double a = analytic[which].second[flat];
        const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
        result.max_relative_error = std::max(result.max_relative_error, std::abs(a - numeric) / denom);
        ++result.checked;
    }
    return result;
}

}  // namespace lslp
