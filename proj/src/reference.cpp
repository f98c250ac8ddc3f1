#include <algorithm>
#include <cmath>

#include "lslp/error.hpp"
#include "lslp/kernels.hpp"

namespace lslp::reference {

Tensor conv2d_forward(const Tensor& input, const Tensor& weight, std::size_t pad) {
    const long cin = static_cast<long>(input.dim(0)), h = static_cast<long>(input.dim(1)),
               w = static_cast<long>(input.dim(2));
    const long cout = static_cast<long>(weight.dim(0)), k = static_cast<long>(weight.dim(2));
    const long p = static_cast<long>(pad);
    const long oh = h + 2 * p - k + 1, ow = w + 2 * p - k + 1;
    Tensor out(Shape{static_cast<std::size_t>(cout), static_cast<std::size_t>(oh), static_cast<std::size_t>(ow)});
    for (long oc = 0; oc < cout; ++oc)
        for (long oy = 0; oy < oh; ++oy)
            for (long ox = 0; ox < ow; ++ox) {
                float sum = 0.0f;
                for (long ic = 0; ic < cin; ++ic)
                    for (long ky = 0; ky < k; ++ky)
                        for (long kx = 0; kx < k; ++kx) {
                            const long iy = oy + ky - p, ix = ox + kx - p;
                            if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
                            sum += weight[((oc * cin + ic) * k + ky) * k + kx] * input[(ic * h + iy) * w + ix];
                        }
                out[(oc * oh + oy) * ow + ox] = sum;
            }
    return out;
}

Tensor conv2d_backward_input(const Tensor& grad_out, const Tensor& weight, std::size_t pad, const Shape& input_shape) {
    Tensor grad(input_shape);
    const long cin = static_cast<long>(input_shape[0]), h = static_cast<long>(input_shape[1]),
               w = static_cast<long>(input_shape[2]);
    const long cout = static_cast<long>(weight.dim(0)), k = static_cast<long>(weight.dim(2));
    const long oh = static_cast<long>(grad_out.dim(1)), ow = static_cast<long>(grad_out.dim(2));
    const long p = static_cast<long>(pad);
    for (long oc = 0; oc < cout; ++oc)
        for (long oy = 0; oy < oh; ++oy)
            for (long ox = 0; ox < ow; ++ox)
                for (long ic = 0; ic < cin; ++ic)
                    for (long ky = 0; ky < k; ++ky)
                        for (long kx = 0; kx < k; ++kx) {
                            const long iy = oy + ky - p, ix = ox + kx - p;
                            if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
                            grad[(ic * h + iy) * w + ix] +=
                                weight[((oc * cin + ic) * k + ky) * k + kx] * grad_out[(oc * oh + oy) * ow + ox];
                        }
    return grad;
}

Tensor conv2d_backward_weight(const Tensor& grad_out, const Tensor& input, std::size_t pad, const Shape& weight_shape) {
    Tensor grad(weight_shape);
    const long cin = static_cast<long>(input.dim(0)), h = static_cast<long>(input.dim(1)),
               w = static_cast<long>(input.dim(2));
    const long cout = static_cast<long>(weight_shape[0]), k = static_cast<long>(weight_shape[2]);
    const long oh = static_cast<long>(grad_out.dim(1)), ow = static_cast<long>(grad_out.dim(2));
    const long p = static_cast<long>(pad);
    for (long oc = 0; oc < cout; ++oc)
        for (long ic = 0; ic < cin; ++ic)
            for (long ky = 0; ky < k; ++ky)
                for (long kx = 0; kx < k; ++kx) {
                    double sum = 0.0;
                    for (long oy = 0; oy < oh; ++oy)
                        for (long ox = 0; ox < ow; ++ox) {
                            const long iy = oy + ky - p, ix = ox + kx - p;
                            if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
                            sum += static_cast<double>(grad_out[(oc * oh + oy) * ow + ox]) *
                                   input[(ic * h + iy) * w + ix];
                        }
                    grad[((oc * cin + ic) * k + ky) * k + kx] = static_cast<float>(sum);
                }
    return grad;
}

Tensor max_pool2_forward(const Tensor& input) {
    const std::size_t c = input.dim(0), h = input.dim(1), w = input.dim(2);
    Tensor out(Shape{c, h / 2, w / 2});
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t y = 0; y < h / 2; ++y)
            for (std::size_t x = 0; x < w / 2; ++x)
                out.at(ch, y, x) = std::max({input.at(ch, 2 * y, 2 * x), input.at(ch, 2 * y, 2 * x + 1),
                                             input.at(ch, 2 * y + 1, 2 * x), input.at(ch, 2 * y + 1, 2 * x + 1)});
    return out;
}

kernels::PooledPrototypes masked_pool_forward(std::span<const Tensor* const> features, std::span<const Tensor* const> weights,
                                     const GridSet& grids, ShotAveraging averaging) {
    const std::size_t k = features.size(), d = features[0]->dim(0);
    const std::size_t classes = weights[0]->dim(0), n_g = grids.size();
    kernels::PooledPrototypes r{Tensor(Shape{classes, n_g, d}), std::vector<std::uint8_t>(classes * n_g, 0),
                       std::vector<float>(k * classes * n_g, 0.0f)};
    for (std::size_t c = 0; c < classes; ++c) {
        for (const Grid& g : grids.grids()) {
            std::vector<double> sum(d, 0.0);
            std::size_t valid = 0;
            for (std::size_t i = 0; i < k; ++i) {
                double mass = 0.0;
                std::vector<double> acc(d, 0.0);
                for (std::size_t y = 0; y < grids.shape().height; ++y)
                    for (std::size_t x = 0; x < grids.shape().width; ++x) {
                        if (!g.contains(x, y)) continue;
                        const double wv = weights[i]->at(c, y, x);
                        mass += wv;
                        for (std::size_t ch = 0; ch < d; ++ch) acc[ch] += wv * features[i]->at(ch, y, x);
                    }
                if (mass <= kMaskEps) continue;
                ++valid;
                for (std::size_t ch = 0; ch < d; ++ch) sum[ch] += acc[ch] / mass;
            }
            if (valid == 0) continue;
            const double divisor = averaging == ShotAveraging::ValidShots ? double(valid) : double(k);
            r.present[c * n_g + g.id] = 1;
            for (std::size_t ch = 0; ch < d; ++ch) r.vectors.at(c, g.id, ch) = static_cast<float>(sum[ch] / divisor);
        }
    }
    return r;
}

Tensor local_similarity(const Tensor& field, const Tensor& protos, std::span<const std::uint8_t> present,
                        const GridSet& grids) {
    const std::size_t d = field.dim(0), h = field.dim(1), w = field.dim(2);
    const std::size_t classes = protos.dim(0), n_g = protos.dim(1);
    Tensor out(Shape{classes, h, w}, kScoreAbsent);
    for (std::size_t c = 0; c < classes; ++c)
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x) {
                bool found = false;
                float best = kScoreAbsent;
                for (const Grid& g : grids.grids()) {
                    if (!g.contains(x, y) || !present[c * n_g + g.id]) continue;
                    double dot = 0.0, fn = 0.0, pn = 0.0;
                    for (std::size_t ch = 0; ch < d; ++ch) {
                        const double f = field.at(ch, y, x), p = protos.at(c, g.id, ch);
                        dot += f * p;
                        fn += f * f;
                        pn += p * p;
                    }
                    const auto s = static_cast<float>(dot / std::max(std::sqrt(fn) * std::sqrt(pn), double(kCosineEps)));
                    if (!found || s > best) best = s;
                    found = true;
                }
                out.at(c, y, x) = best;
            }
    return out;
}

}  // namespace lslp::reference
