#include "vffc/nn.hpp"

#include <Eigen/Core>
#include <cmath>
#include <cstring>
#include <memory>
#include <stdexcept>
#include <vector>

#include "vffc/parallel.hpp"
#include "vffc/rng.hpp"

namespace vffc {

namespace {

using MatRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<MatRM>;
using MapCM = Eigen::Map<const MatRM>;

struct Geom {
    std::int64_t N, D, H, W, C;  // input dims, channels-last
    std::int64_t kD, kH, kW;
    std::int64_t sD, sH, sW;
    std::int64_t pD, pH, pW;
    std::int64_t Do, Ho, Wo;

    std::int64_t patch() const { return kD * kH * kW * C; }
    std::int64_t rows() const { return N * Do * Ho * Wo; }
};

std::int64_t out_extent(std::int64_t in, std::int64_t k, std::int64_t s, std::int64_t p) {
    return (in + 2 * p - k) / s + 1;
}

Geom make_geom(const Shape& x, const Shape& w, const std::array<std::int64_t, 3>& stride,
               const std::array<std::int64_t, 3>& pad) {
    Geom g{};
    g.N = x[0];
    g.D = x[1];
    g.H = x[2];
    g.W = x[3];
    g.C = x[4];
    g.kD = w[1];
    g.kH = w[2];
    g.kW = w[3];
    g.sD = stride[0];
    g.sH = stride[1];
    g.sW = stride[2];
    g.pD = pad[0];
    g.pH = pad[1];
    g.pW = pad[2];
    for (int i = 0; i < 3; ++i) {
        if (stride[i] < 1) throw std::invalid_argument("conv3d: stride must be >= 1");
        if (pad[i] < 0) throw std::invalid_argument("conv3d: negative padding");
    }
    if (w[4] != g.C)
        throw std::invalid_argument("conv3d: weight C_in " + std::to_string(w[4]) +
                                    " != input channels " + std::to_string(g.C));
    if (g.pD > g.kD - 1 || g.pH > g.kH - 1 || g.pW > g.kW - 1)
        throw std::invalid_argument("conv3d: padding exceeds kernel-1");
    g.Do = out_extent(g.D, g.kD, g.sD, g.pD);
    g.Ho = out_extent(g.H, g.kH, g.sH, g.pH);
    g.Wo = out_extent(g.W, g.kW, g.sW, g.pW);
    if (g.Do < 1 || g.Ho < 1 || g.Wo < 1)
        throw std::invalid_argument("conv3d: kernel larger than padded input");
    return g;
}

// Patch matrix for output rows [r0, r1): each row holds the receptive field in
// (kd, kh, kw, c) order, matching the flattened weight layout.
void im2col_rows(const double* x, const Geom& g, std::int64_t r0, std::int64_t r1, double* col) {
    const std::int64_t patch = g.patch();
    for (std::int64_t r = r0; r < r1; ++r) {
        double* dst = col + (r - r0) * patch;
        std::int64_t t = r;
        const std::int64_t wo = t % g.Wo;
        t /= g.Wo;
        const std::int64_t ho = t % g.Ho;
        t /= g.Ho;
        const std::int64_t dd = t % g.Do;
        const std::int64_t n = t / g.Do;
        const std::int64_t d0 = dd * g.sD - g.pD;
        const std::int64_t h0 = ho * g.sH - g.pH;
        const std::int64_t w0 = wo * g.sW - g.pW;
        for (std::int64_t kd = 0; kd < g.kD; ++kd) {
            const std::int64_t d = d0 + kd;
            if (d < 0 || d >= g.D) {
                std::memset(dst, 0, sizeof(double) * g.kH * g.kW * g.C);
                dst += g.kH * g.kW * g.C;
                continue;
            }
            for (std::int64_t kh = 0; kh < g.kH; ++kh) {
                const std::int64_t h = h0 + kh;
                if (h < 0 || h >= g.H) {
                    std::memset(dst, 0, sizeof(double) * g.kW * g.C);
                    dst += g.kW * g.C;
                    continue;
                }
                const double* src_row = x + ((n * g.D + d) * g.H + h) * g.W * g.C;
                for (std::int64_t kw = 0; kw < g.kW; ++kw) {
                    const std::int64_t w = w0 + kw;
                    if (w < 0 || w >= g.W) {
                        std::memset(dst, 0, sizeof(double) * g.C);
                    } else {
                        std::memcpy(dst, src_row + w * g.C, sizeof(double) * g.C);
                    }
                    dst += g.C;
                }
            }
        }
    }
}

std::int64_t pick_block(std::int64_t rows, std::int64_t patch) {
    // Per-invocation col buffer around 2 MB.
    std::int64_t b = (2ll << 20) / (8 * patch);
    return std::clamp<std::int64_t>(b, 8, std::max<std::int64_t>(rows, 8));
}

// out[rows x C_out] (+)= im2col(x) * weight^T, blocked and parallel over rows.
// Each block writes disjoint output rows, so the result does not depend on the
// thread count.
void conv_core(const double* x, const Geom& g, const double* weight, std::int64_t c_out,
               double* out, bool accumulate) {
    const std::int64_t patch = g.patch();
    const std::int64_t rows = g.rows();
    const std::int64_t block = pick_block(rows, patch);
    MapCM wm(weight, c_out, patch);
    parallel_for(rows, block, [&](std::int64_t r0, std::int64_t r1) {
        std::vector<double> col((r1 - r0) * patch);
        im2col_rows(x, g, r0, r1, col.data());
        MapCM cm(col.data(), r1 - r0, patch);
        MapM om(out + r0 * c_out, r1 - r0, c_out);
        if (accumulate)
            om.noalias() += cm * wm.transpose();
        else
            om.noalias() = cm * wm.transpose();
    });
}

// Weight-gradient pass: dW = sum over row blocks of gout_block^T * col_block.
// Blocks are assigned to a fixed number of groups and group partials are
// reduced in index order, keeping the floating-point sum order independent of
// the thread count.
void conv_weight_grad(const double* x, const Geom& g, const double* gout, std::int64_t c_out,
                      double* wgrad) {
    const std::int64_t patch = g.patch();
    const std::int64_t rows = g.rows();
    const std::int64_t block = pick_block(rows, patch);
    const std::int64_t num_blocks = (rows + block - 1) / block;
    const std::int64_t groups = std::min<std::int64_t>(8, num_blocks);
    const std::int64_t blocks_per_group = (num_blocks + groups - 1) / groups;
    std::vector<std::vector<double>> partial(groups);
    parallel_for(groups, 1, [&](std::int64_t g0, std::int64_t g1) {
        for (std::int64_t grp = g0; grp < g1; ++grp) {
            auto& acc = partial[grp];
            acc.assign(c_out * patch, 0.0);
            MapM am(acc.data(), c_out, patch);
            std::vector<double> col(block * patch);
            const std::int64_t b0 = grp * blocks_per_group;
            const std::int64_t b1 = std::min(num_blocks, b0 + blocks_per_group);
            for (std::int64_t b = b0; b < b1; ++b) {
                const std::int64_t r0 = b * block;
                const std::int64_t r1 = std::min(rows, r0 + block);
                im2col_rows(x, g, r0, r1, col.data());
                MapCM cm(col.data(), r1 - r0, patch);
                MapCM gm(gout + r0 * c_out, r1 - r0, c_out);
                am.noalias() += gm.transpose() * cm;
            }
        }
    });
    MapM wm(wgrad, c_out, patch);
    for (const auto& acc : partial) {
        MapCM am(acc.data(), c_out, patch);
        wm.noalias() += am;
    }
}

}  // namespace

Conv3d make_conv3d(std::int64_t c_in, std::int64_t c_out, std::array<std::int64_t, 3> kernel,
                   std::array<std::int64_t, 3> stride, std::array<std::int64_t, 3> pad,
                   bool with_bias, Rng& rng) {
    Conv3d p;
    p.stride = stride;
    p.pad = pad;
    const std::int64_t fan_in = kernel[0] * kernel[1] * kernel[2] * c_in;
    const double std_dev = std::sqrt(2.0 / static_cast<double>(fan_in));
    Shape wshape{c_out, kernel[0], kernel[1], kernel[2], c_in};
    std::vector<double> w(shape_size(wshape));
    for (auto& v : w) v = rng.normal(0.0, std_dev);
    p.weight = Tensor::from_data(std::move(wshape), std::move(w), /*requires_grad=*/true);
    if (with_bias) p.bias = Tensor::zeros({c_out}, /*requires_grad=*/true);
    return p;
}

Tensor conv3d(const Tensor& x, const Conv3d& p) {
    if (x.rank() != 5)
        throw std::invalid_argument("conv3d: expected rank-5 input, got " + shape_str(x.shape()));
    if (p.weight.rank() != 5)
        throw std::invalid_argument("conv3d: expected rank-5 weight, got " +
                                    shape_str(p.weight.shape()));
    const Geom g = make_geom(x.shape(), p.weight.shape(), p.stride, p.pad);
    const std::int64_t c_out = p.weight.dim(0);
    const bool has_bias = p.bias.defined();
    if (has_bias && (p.bias.rank() != 1 || p.bias.dim(0) != c_out))
        throw std::invalid_argument("conv3d: bias shape mismatch");

    Shape out_shape{g.N, g.Do, g.Ho, g.Wo, c_out};
    std::vector<double> out(shape_size(out_shape));
    conv_core(x.data().data(), g, p.weight.data().data(), c_out, out.data(), false);
    if (has_bias) {
        auto vb = p.bias.data();
        for (std::int64_t r = 0; r < g.rows(); ++r)
            for (std::int64_t c = 0; c < c_out; ++c) out[r * c_out + c] += vb[c];
    }

    std::vector<Tensor> parents{x, p.weight};
    if (has_bias) parents.push_back(p.bias);
    return detail::make_op(
        std::move(out_shape), std::move(out), std::move(parents),
        [g, c_out, has_bias](detail::Node& self) {
            auto& px = *self.parents[0];
            auto& pw = *self.parents[1];
            const double* gout = self.grad.data();

            if (has_bias && self.parents[2]->requires_grad) {
                auto& gb = self.parents[2]->ensure_grad();
                for (std::int64_t r = 0; r < g.rows(); ++r)
                    for (std::int64_t c = 0; c < c_out; ++c) gb[c] += gout[r * c_out + c];
            }
            if (pw.requires_grad) {
                conv_weight_grad(px.data.data(), g, gout, c_out, pw.ensure_grad().data());
            }
            if (px.requires_grad) {
                // dX as a stride-1 convolution of the zero-dilated output
                // gradient with the flipped, channel-swapped kernel.
                std::vector<double> wt(g.C * g.kD * g.kH * g.kW * c_out);
                const double* w = pw.data.data();
                for (std::int64_t ci = 0; ci < g.C; ++ci)
                    for (std::int64_t kd = 0; kd < g.kD; ++kd)
                        for (std::int64_t kh = 0; kh < g.kH; ++kh)
                            for (std::int64_t kw = 0; kw < g.kW; ++kw)
                                for (std::int64_t co = 0; co < c_out; ++co)
                                    wt[(((ci * g.kD + kd) * g.kH + kh) * g.kW + kw) * c_out + co] =
                                        w[(((co * g.kD + (g.kD - 1 - kd)) * g.kH +
                                            (g.kH - 1 - kh)) *
                                               g.kW +
                                           (g.kW - 1 - kw)) *
                                              g.C +
                                          ci];

                const std::int64_t opD = (g.D + 2 * g.pD - g.kD) % g.sD;
                const std::int64_t opH = (g.H + 2 * g.pH - g.kH) % g.sH;
                const std::int64_t opW = (g.W + 2 * g.pW - g.kW) % g.sW;
                const std::int64_t Dd = (g.Do - 1) * g.sD + 1 + opD;
                const std::int64_t Hd = (g.Ho - 1) * g.sH + 1 + opH;
                const std::int64_t Wd = (g.Wo - 1) * g.sW + 1 + opW;
                std::vector<double> dil(g.N * Dd * Hd * Wd * c_out, 0.0);
                for (std::int64_t n = 0; n < g.N; ++n)
                    for (std::int64_t d = 0; d < g.Do; ++d)
                        for (std::int64_t h = 0; h < g.Ho; ++h)
                            for (std::int64_t w2 = 0; w2 < g.Wo; ++w2)
                                std::memcpy(
                                    dil.data() +
                                        (((n * Dd + d * g.sD) * Hd + h * g.sH) * Wd + w2 * g.sW) *
                                            c_out,
                                    gout + (((n * g.Do + d) * g.Ho + h) * g.Wo + w2) * c_out,
                                    sizeof(double) * c_out);

                Geom gt{};
                gt.N = g.N;
                gt.D = Dd;
                gt.H = Hd;
                gt.W = Wd;
                gt.C = c_out;
                gt.kD = g.kD;
                gt.kH = g.kH;
                gt.kW = g.kW;
                gt.sD = gt.sH = gt.sW = 1;
                gt.pD = g.kD - 1 - g.pD;
                gt.pH = g.kH - 1 - g.pH;
                gt.pW = g.kW - 1 - g.pW;
                gt.Do = g.D;
                gt.Ho = g.H;
                gt.Wo = g.W;
                if (out_extent(Dd, gt.kD, 1, gt.pD) != g.D ||
                    out_extent(Hd, gt.kH, 1, gt.pH) != g.H ||
                    out_extent(Wd, gt.kW, 1, gt.pW) != g.W)
                    throw std::logic_error("conv3d backward: transpose geometry mismatch");
                conv_core(dil.data(), gt, wt.data(), g.C, px.ensure_grad().data(), true);
            }
        },
        "conv3d");
}

Tensor conv2d(const Tensor& x, const Conv3d& p) {
    if (x.rank() != 4)
        throw std::invalid_argument("conv2d: expected rank-4 input, got " + shape_str(x.shape()));
    if (p.weight.rank() != 5 || p.weight.dim(1) != 1)
        throw std::invalid_argument("conv2d: weight must have kD == 1");
    if (p.stride[0] != 1 || p.pad[0] != 0)
        throw std::invalid_argument("conv2d: depth stride/pad must be 1/0");
    const Shape& s = x.shape();
    Tensor x5 = reshape(x, {s[0], 1, s[1], s[2], s[3]});
    Tensor y5 = conv3d(x5, p);
    const Shape& o = y5.shape();
    return reshape(y5, {o[0], o[2], o[3], o[4]});
}

BatchNorm make_batch_norm(std::int64_t channels) {
    BatchNorm bn;
    bn.gamma = Tensor::full({channels}, 1.0, /*requires_grad=*/true);
    bn.beta = Tensor::zeros({channels}, /*requires_grad=*/true);
    bn.running_mean = Tensor::zeros({channels});
    bn.running_var = Tensor::full({channels}, 1.0);
    return bn;
}

Tensor batch_norm(const Tensor& x, BatchNorm& bn, bool training) {
    const std::int64_t C = x.dim(-1);
    if (bn.gamma.dim(0) != C)
        throw std::invalid_argument("batch_norm: channel mismatch, x has " + std::to_string(C) +
                                    ", bn has " + std::to_string(bn.gamma.dim(0)));
    const std::int64_t M = x.size() / C;
    if (training && M < 2)
        throw std::invalid_argument("batch_norm: training needs more than one row per channel");

    auto mu = std::make_shared<std::vector<double>>(C, 0.0);
    auto inv = std::make_shared<std::vector<double>>(C, 0.0);
    auto vx = x.data();
    if (training) {
        std::vector<double> var(C, 0.0);
        for (std::int64_t r = 0; r < M; ++r)
            for (std::int64_t c = 0; c < C; ++c) (*mu)[c] += vx[r * C + c];
        for (auto& m : *mu) m /= static_cast<double>(M);
        for (std::int64_t r = 0; r < M; ++r)
            for (std::int64_t c = 0; c < C; ++c) {
                double d = vx[r * C + c] - (*mu)[c];
                var[c] += d * d;
            }
        for (auto& v : var) v /= static_cast<double>(M);
        for (std::int64_t c = 0; c < C; ++c) (*inv)[c] = 1.0 / std::sqrt(var[c] + bn.eps);
        auto rm = bn.running_mean.mut_data();
        auto rv = bn.running_var.mut_data();
        for (std::int64_t c = 0; c < C; ++c) {
            rm[c] = (1.0 - bn.momentum) * rm[c] + bn.momentum * (*mu)[c];
            rv[c] = (1.0 - bn.momentum) * rv[c] + bn.momentum * var[c];
        }
    } else {
        auto rm = bn.running_mean.data();
        auto rv = bn.running_var.data();
        for (std::int64_t c = 0; c < C; ++c) {
            (*mu)[c] = rm[c];
            (*inv)[c] = 1.0 / std::sqrt(rv[c] + bn.eps);
        }
    }

    auto vg = bn.gamma.data();
    auto vb = bn.beta.data();
    std::vector<double> out(x.size());
    for (std::int64_t r = 0; r < M; ++r)
        for (std::int64_t c = 0; c < C; ++c)
            out[r * C + c] = vg[c] * ((vx[r * C + c] - (*mu)[c]) * (*inv)[c]) + vb[c];

    return detail::make_op(
        x.shape(), std::move(out), {x, bn.gamma, bn.beta},
        [mu, inv, M, C, training](detail::Node& self) {
            auto& px = *self.parents[0];
            auto& pg = *self.parents[1];
            auto& pb = *self.parents[2];
            const auto& go = self.grad;
            // Channel sums of gout and gout*xhat feed every input.
            std::vector<double> sum_g(C, 0.0), sum_gx(C, 0.0);
            for (std::int64_t r = 0; r < M; ++r)
                for (std::int64_t c = 0; c < C; ++c) {
                    double xhat = (px.data[r * C + c] - (*mu)[c]) * (*inv)[c];
                    sum_g[c] += go[r * C + c];
                    sum_gx[c] += go[r * C + c] * xhat;
                }
            if (pb.requires_grad) {
                auto& gb = pb.ensure_grad();
                for (std::int64_t c = 0; c < C; ++c) gb[c] += sum_g[c];
            }
            if (pg.requires_grad) {
                auto& gg = pg.ensure_grad();
                for (std::int64_t c = 0; c < C; ++c) gg[c] += sum_gx[c];
            }
            if (px.requires_grad) {
                auto& gx = px.ensure_grad();
                const double invM = 1.0 / static_cast<double>(M);
                for (std::int64_t r = 0; r < M; ++r)
                    for (std::int64_t c = 0; c < C; ++c) {
                        double scale = pg.data[c] * (*inv)[c];
                        if (training) {
                            double xhat = (px.data[r * C + c] - (*mu)[c]) * (*inv)[c];
                            gx[r * C + c] += scale * (go[r * C + c] - sum_g[c] * invM -
                                                      xhat * sum_gx[c] * invM);
                        } else {
                            gx[r * C + c] += scale * go[r * C + c];
                        }
                    }
            }
        },
        "batch_norm");
}

Tensor depth_mean(const Tensor& x) {
    if (x.rank() != 5)
        throw std::invalid_argument("depth_mean: expected rank-5 input, got " +
                                    shape_str(x.shape()));
    const Shape& s = x.shape();
    const std::int64_t N = s[0], D = s[1], HWC = s[2] * s[3] * s[4];
    Shape out_shape{N, s[2], s[3], s[4]};
    std::vector<double> out(N * HWC, 0.0);
    auto vx = x.data();
    const double invD = 1.0 / static_cast<double>(D);
    for (std::int64_t n = 0; n < N; ++n)
        for (std::int64_t d = 0; d < D; ++d) {
            const double* src = vx.data() + (n * D + d) * HWC;
            double* dst = out.data() + n * HWC;
            for (std::int64_t i = 0; i < HWC; ++i) dst[i] += src[i] * invD;
        }
    return detail::make_op(
        std::move(out_shape), std::move(out), {x},
        [N, D, HWC, invD](detail::Node& self) {
            auto& p = *self.parents[0];
            if (!p.requires_grad) return;
            auto& g = p.ensure_grad();
            for (std::int64_t n = 0; n < N; ++n)
                for (std::int64_t d = 0; d < D; ++d) {
                    const double* src = self.grad.data() + n * HWC;
                    double* dst = g.data() + (n * D + d) * HWC;
                    for (std::int64_t i = 0; i < HWC; ++i) dst[i] += src[i] * invD;
                }
        },
        "depth_mean");
}

Tensor bilinear_up2(const Tensor& x) {
    if (x.rank() != 4)
        throw std::invalid_argument("bilinear_up2: expected rank-4 input, got " +
                                    shape_str(x.shape()));
    const Shape& s = x.shape();
    const std::int64_t N = s[0], H = s[1], W = s[2], C = s[3];
    const std::int64_t H2 = 2 * H, W2 = 2 * W;
    // Source coordinate for output index i is (i + 0.5)/2 - 0.5, clamped.
    auto taps = [](std::int64_t n_in, std::int64_t i) {
        double src = (static_cast<double>(i) + 0.5) * 0.5 - 0.5;
        src = std::max(0.0, std::min(src, static_cast<double>(n_in - 1)));
        std::int64_t lo = static_cast<std::int64_t>(std::floor(src));
        std::int64_t hi = std::min(lo + 1, n_in - 1);
        double frac = src - static_cast<double>(lo);
        return std::tuple<std::int64_t, std::int64_t, double>{lo, hi, frac};
    };
    Shape out_shape{N, H2, W2, C};
    std::vector<double> out(shape_size(out_shape));
    auto vx = x.data();
    for (std::int64_t n = 0; n < N; ++n)
        for (std::int64_t oy = 0; oy < H2; ++oy) {
            auto [y0, y1, fy] = taps(H, oy);
            for (std::int64_t ox = 0; ox < W2; ++ox) {
                auto [x0, x1, fx] = taps(W, ox);
                const double* p00 = vx.data() + ((n * H + y0) * W + x0) * C;
                const double* p01 = vx.data() + ((n * H + y0) * W + x1) * C;
                const double* p10 = vx.data() + ((n * H + y1) * W + x0) * C;
                const double* p11 = vx.data() + ((n * H + y1) * W + x1) * C;
                double* dst = out.data() + ((n * H2 + oy) * W2 + ox) * C;
                for (std::int64_t c = 0; c < C; ++c)
                    dst[c] = (1.0 - fy) * ((1.0 - fx) * p00[c] + fx * p01[c]) +
                             fy * ((1.0 - fx) * p10[c] + fx * p11[c]);
            }
        }
    return detail::make_op(
        std::move(out_shape), std::move(out), {x},
        [N, H, W, C, H2, W2, taps](detail::Node& self) {
            auto& p = *self.parents[0];
            if (!p.requires_grad) return;
            auto& g = p.ensure_grad();
            for (std::int64_t n = 0; n < N; ++n)
                for (std::int64_t oy = 0; oy < H2; ++oy) {
                    auto [y0, y1, fy] = taps(H, oy);
                    for (std::int64_t ox = 0; ox < W2; ++ox) {
                        auto [x0, x1, fx] = taps(W, ox);
                        const double* src = self.grad.data() + ((n * H2 + oy) * W2 + ox) * C;
                        double* g00 = g.data() + ((n * H + y0) * W + x0) * C;
                        double* g01 = g.data() + ((n * H + y0) * W + x1) * C;
                        double* g10 = g.data() + ((n * H + y1) * W + x0) * C;
                        double* g11 = g.data() + ((n * H + y1) * W + x1) * C;
                        for (std::int64_t c = 0; c < C; ++c) {
                            g00[c] += (1.0 - fy) * (1.0 - fx) * src[c];
                            g01[c] += (1.0 - fy) * fx * src[c];
                            g10[c] += fy * (1.0 - fx) * src[c];
                            g11[c] += fy * fx * src[c];
                        }
                    }
                }
        },
        "bilinear_up2");
}

namespace {

// Shared mask-multiply op for the two structured dropouts. `group` is the
// number of trailing elements sharing one mask entry.
Tensor masked_scale(const Tensor& x, std::shared_ptr<std::vector<double>> mask,
                    std::int64_t group, const char* name) {
    std::vector<double> out(x.size());
    auto vx = x.data();
    for (std::int64_t i = 0; i < x.size(); ++i) out[i] = vx[i] * (*mask)[i / group];
    return detail::make_op(
        x.shape(), std::move(out), {x},
        [mask, group](detail::Node& self) {
            auto& p = *self.parents[0];
            if (!p.requires_grad) return;
            auto& g = p.ensure_grad();
            for (std::int64_t i = 0; i < static_cast<std::int64_t>(g.size()); ++i)
                g[i] += self.grad[i] * (*mask)[i / group];
        },
        name);
}

}  // namespace

Tensor drop_path(const Tensor& x, double p, bool training, Rng& rng) {
    if (p < 0.0 || p >= 1.0) throw std::invalid_argument("drop_path: p must be in [0,1)");
    if (!training || p == 0.0) return x;
    const std::int64_t N = x.dim(0);
    auto mask = std::make_shared<std::vector<double>>(N);
    const double keep_scale = 1.0 / (1.0 - p);
    for (auto& m : *mask) m = rng.uniform() < p ? 0.0 : keep_scale;
    return masked_scale(x, std::move(mask), x.size() / N, "drop_path");
}

Tensor channel_dropout(const Tensor& x, double p, bool training, Rng& rng) {
    if (p < 0.0 || p >= 1.0) throw std::invalid_argument("channel_dropout: p must be in [0,1)");
    if (!training || p == 0.0) return x;
    const std::int64_t C = x.dim(-1);
    const std::int64_t N = x.dim(0);
    const std::int64_t inner = x.size() / N;  // elements per sample
    auto mask = std::make_shared<std::vector<double>>(N * C);
    const double keep_scale = 1.0 / (1.0 - p);
    for (auto& m : *mask) m = rng.uniform() < p ? 0.0 : keep_scale;
    // Masks repeat per (n, c); expand through a strided multiply.
    std::vector<double> out(x.size());
    auto vx = x.data();
    for (std::int64_t i = 0; i < x.size(); ++i) {
        std::int64_t n = i / inner, c = i % C;
        out[i] = vx[i] * (*mask)[n * C + c];
    }
    return detail::make_op(
        x.shape(), std::move(out), {x},
        [mask, inner, C](detail::Node& self) {
            auto& p2 = *self.parents[0];
            if (!p2.requires_grad) return;
            auto& g = p2.ensure_grad();
            for (std::int64_t i = 0; i < static_cast<std::int64_t>(g.size()); ++i) {
                std::int64_t n = i / inner, c = i % C;
                g[i] += self.grad[i] * (*mask)[n * C + c];
            }
        },
        "channel_dropout");
}

}  // namespace vffc
