#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "oracles.hpp"
#include "vffc/nn.hpp"
#include "vffc/parallel.hpp"
#include "vffc/rng.hpp"
#include "vffc/tensor.hpp"

using namespace vffc;

namespace {

Tensor random_tensor(Shape s, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
    Rng rng(seed);
    return Tensor::uniform(std::move(s), lo, hi, rng);
}

void check_against_oracle(std::array<std::int64_t, 5> xd, std::array<std::int64_t, 5> wd,
                          std::array<std::int64_t, 3> stride, std::array<std::int64_t, 3> pad,
                          bool with_bias, std::uint64_t seed) {
    CAPTURE(xd[1]);
    CAPTURE(wd[1]);
    CAPTURE(stride[0]);
    CAPTURE(pad[0]);
    Rng rng(seed);
    Tensor x = Tensor::uniform({xd[0], xd[1], xd[2], xd[3], xd[4]}, -1.0, 1.0, rng);
    Conv3d p = make_conv3d(xd[4], wd[0], {wd[1], wd[2], wd[3]}, stride, pad, with_bias, rng);
    Tensor y = conv3d(x, p);

    std::vector<double> xv(x.data().begin(), x.data().end());
    std::vector<double> wv(p.weight.data().begin(), p.weight.data().end());
    std::vector<double> bv;
    if (with_bias) bv.assign(p.bias.data().begin(), p.bias.data().end());
    std::array<std::int64_t, 5> od{};
    auto ref = oracle::naive_conv3d(xv, xd, wv, wd, with_bias ? &bv : nullptr, stride, pad, od);

    REQUIRE(y.shape() == Shape{od[0], od[1], od[2], od[3], od[4]});
    double worst = 0.0;
    for (std::size_t i = 0; i < ref.size(); ++i)
        worst = std::max(worst, std::abs(y.data()[i] - ref[i]));
    CHECK(worst < 1e-12);
}

}  // namespace

TEST_CASE("conv3d forward matches the direct oracle") {
    check_against_oracle({1, 3, 4, 4, 2}, {3, 2, 2, 2, 2}, {1, 1, 1}, {0, 0, 0}, true, 1);
    check_against_oracle({2, 4, 5, 6, 3}, {4, 3, 3, 3, 3}, {1, 1, 1}, {1, 1, 1}, false, 2);
    check_against_oracle({1, 6, 8, 8, 2}, {5, 3, 3, 3, 2}, {2, 2, 2}, {1, 1, 1}, true, 3);
    check_against_oracle({1, 5, 9, 9, 4}, {2, 1, 1, 1, 4}, {1, 1, 1}, {0, 0, 0}, false, 4);
    // Stem-like anisotropic stride.
    check_against_oracle({1, 8, 16, 16, 1}, {6, 3, 3, 3, 1}, {2, 4, 4}, {1, 1, 1}, false, 5);
    check_against_oracle({2, 3, 5, 7, 2}, {3, 3, 2, 4, 2}, {1, 2, 3}, {2, 1, 2}, true, 6);
}

TEST_CASE("conv3d geometry validation") {
    Rng rng(9);
    Tensor x = Tensor::uniform({1, 2, 4, 4, 2}, -1.0, 1.0, rng);
    Conv3d p = make_conv3d(2, 3, {3, 3, 3}, {1, 1, 1}, {0, 0, 0}, false, rng);
    CHECK_THROWS_AS(conv3d(x, p), std::invalid_argument);  // kD=3 > D=2 without pad
    Conv3d pc = make_conv3d(3, 3, {1, 1, 1}, {1, 1, 1}, {0, 0, 0}, false, rng);
    CHECK_THROWS_AS(conv3d(x, pc), std::invalid_argument);  // channel mismatch
    Tensor x4 = Tensor::uniform({2, 4, 4, 2}, -1.0, 1.0, rng);
    CHECK_THROWS_AS(conv3d(x4, p), std::invalid_argument);  // rank
}

TEST_CASE("conv3d gradients: input, weight, bias") {
    Rng rng(11);
    Tensor x = Tensor::uniform({1, 3, 4, 4, 2}, -1.0, 1.0, rng);
    Conv3d p = make_conv3d(2, 3, {2, 2, 2}, {1, 2, 1}, {1, 1, 0}, true, rng);
    {
        GradPause pause;  // keep factory-made params out of the checked graph
    }
    Tensor w0 = Tensor::from_data(p.weight.shape(),
                                  {p.weight.data().begin(), p.weight.data().end()});
    Tensor b0 = Tensor::from_data({3}, {0.1, -0.2, 0.3});

    auto wrt_input = [&](const Tensor& v) {
        Conv3d q{w0, b0, p.stride, p.pad};
        return sum(mul(conv3d(v, q), conv3d(v, q)));
    };
    CHECK(grad_check(wrt_input, x) < 1e-6);

    Tensor x0 = Tensor::from_data(x.shape(), {x.data().begin(), x.data().end()});
    auto wrt_weight = [&](const Tensor& v) {
        Conv3d q{v, b0, p.stride, p.pad};
        Tensor y = conv3d(x0, q);
        return sum(mul(y, y));
    };
    CHECK(grad_check(wrt_weight, w0) < 1e-6);

    auto wrt_bias = [&](const Tensor& v) {
        Conv3d q{w0, v, p.stride, p.pad};
        Tensor y = conv3d(x0, q);
        return sum(mul(y, y));
    };
    CHECK(grad_check(wrt_bias, b0) < 1e-6);
}

TEST_CASE("conv3d is bit-deterministic across thread counts") {
    auto run = [](int threads) {
        set_thread_count(threads);
        Rng rng(21);
        Tensor x = Tensor::uniform({2, 6, 12, 12, 3}, -1.0, 1.0, rng, true);
        Conv3d p = make_conv3d(3, 8, {3, 3, 3}, {2, 2, 2}, {1, 1, 1}, false, rng);
        Tensor y = conv3d(x, p);
        Tensor loss = sum(mul(y, y));
        loss.backward();
        std::vector<double> record(y.data().begin(), y.data().end());
        record.insert(record.end(), x.grad().begin(), x.grad().end());
        record.insert(record.end(), p.weight.grad().begin(), p.weight.grad().end());
        set_thread_count(0);
        return record;
    };
    auto a = run(1);
    auto b = run(4);
    auto c = run(3);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i] == b[i]);
        CHECK(a[i] == c[i]);
    }
}

TEST_CASE("conv2d matches conv3d on unit depth") {
    Rng rng(31);
    Tensor x = Tensor::uniform({2, 7, 7, 3}, -1.0, 1.0, rng);
    Conv3d p = make_conv3d(3, 4, {1, 3, 3}, {1, 2, 2}, {0, 1, 1}, true, rng);
    Tensor y2 = conv2d(x, p);
    Tensor x5 = reshape(x, {2, 1, 7, 7, 3});
    Tensor y3 = conv3d(x5, p);
    REQUIRE(y2.shape() == Shape{2, 4, 4, 4});
    for (std::int64_t i = 0; i < y2.size(); ++i) CHECK(y2.data()[i] == y3.data()[i]);

    Conv3d bad = make_conv3d(3, 4, {2, 3, 3}, {1, 1, 1}, {0, 1, 1}, false, rng);
    CHECK_THROWS_AS(conv2d(x, bad), std::invalid_argument);
}

TEST_CASE("batch_norm: training statistics and running updates") {
    Rng rng(41);
    Tensor x = Tensor::uniform({4, 3, 3, 5}, -3.0, 7.0, rng);
    BatchNorm bn = make_batch_norm(5);
    bn.momentum = 0.25;
    Tensor y = batch_norm(x, bn, true);

    const std::int64_t C = 5, M = x.size() / C;
    for (std::int64_t c = 0; c < C; ++c) {
        double mean = 0.0, var = 0.0;
        for (std::int64_t r = 0; r < M; ++r) mean += y.data()[r * C + c];
        mean /= M;
        for (std::int64_t r = 0; r < M; ++r) {
            double d = y.data()[r * C + c] - mean;
            var += d * d;
        }
        var /= M;
        CHECK(std::abs(mean) < 1e-12);
        CHECK(var == doctest::Approx(1.0).epsilon(1e-6));  // up to eps in denominator

        double xmean = 0.0, xvar = 0.0;
        for (std::int64_t r = 0; r < M; ++r) xmean += x.data()[r * C + c];
        xmean /= M;
        for (std::int64_t r = 0; r < M; ++r) {
            double d = x.data()[r * C + c] - xmean;
            xvar += d * d;
        }
        xvar /= M;
        CHECK(bn.running_mean.data()[c] == doctest::Approx(0.25 * xmean).epsilon(1e-12));
        CHECK(bn.running_var.data()[c] == doctest::Approx(0.75 * 1.0 + 0.25 * xvar).epsilon(1e-12));
    }
}

TEST_CASE("batch_norm: eval uses running buffers and leaves them unchanged") {
    Rng rng(43);
    Tensor x = Tensor::uniform({2, 4, 4, 3}, -1.0, 1.0, rng);
    BatchNorm bn = make_batch_norm(3);
    bn.running_mean.mut_data()[0] = 0.5;
    bn.running_var.mut_data()[0] = 4.0;
    std::vector<double> rm(bn.running_mean.data().begin(), bn.running_mean.data().end());
    Tensor y = batch_norm(x, bn, false);
    double expect = (x.data()[0] - 0.5) / std::sqrt(4.0 + bn.eps);
    CHECK(y.data()[0] == doctest::Approx(expect).epsilon(1e-12));
    for (int c = 0; c < 3; ++c) CHECK(bn.running_mean.data()[c] == rm[c]);
}

TEST_CASE("batch_norm gradients (train and eval)") {
    Rng rng(47);
    Tensor x = Tensor::uniform({3, 2, 2, 2}, -2.0, 2.0, rng);
    for (bool training : {true, false}) {
        CAPTURE(training);
        auto wrt_x = [training](const Tensor& v) {
            BatchNorm bn = make_batch_norm(2);
            bn.running_mean.mut_data()[0] = 0.3;
            bn.running_var.mut_data()[1] = 2.0;
            Tensor y = batch_norm(v, bn, training);
            return sum(mul(y, y));
        };
        CHECK(grad_check(wrt_x, x) < 1e-6);
    }
    Tensor g0 = Tensor::from_data({2}, {1.5, 0.7});
    Tensor b0 = Tensor::from_data({2}, {0.2, -0.4});
    Tensor x0 = Tensor::from_data(x.shape(), {x.data().begin(), x.data().end()});
    auto wrt_gamma = [&](const Tensor& v) {
        BatchNorm bn = make_batch_norm(2);
        bn.gamma = v;
        bn.beta = b0;
        Tensor y = batch_norm(x0, bn, true);
        return sum(mul(y, y));
    };
    CHECK(grad_check(wrt_gamma, g0) < 1e-6);
    auto wrt_beta = [&](const Tensor& v) {
        BatchNorm bn = make_batch_norm(2);
        bn.gamma = g0;
        bn.beta = v;
        Tensor y = batch_norm(x0, bn, true);
        return sum(mul(y, y));
    };
    CHECK(grad_check(wrt_beta, b0) < 1e-6);
}

TEST_CASE("depth_mean forward and gradient") {
    Rng rng(53);
    Tensor x = Tensor::uniform({2, 3, 2, 2, 4}, -1.0, 1.0, rng);
    Tensor y = depth_mean(x);
    REQUIRE(y.shape() == Shape{2, 2, 2, 4});
    for (std::int64_t n = 0; n < 2; ++n)
        for (std::int64_t h = 0; h < 2; ++h)
            for (std::int64_t w = 0; w < 2; ++w)
                for (std::int64_t c = 0; c < 4; ++c) {
                    double m = 0.0;
                    for (std::int64_t d = 0; d < 3; ++d) m += x.at({n, d, h, w, c});
                    CHECK(y.at({n, h, w, c}) == doctest::Approx(m / 3.0).epsilon(1e-14));
                }
    auto fn = [](const Tensor& v) {
        Tensor m = depth_mean(v);
        return sum(mul(m, m));
    };
    CHECK(grad_check(fn, x) < 1e-6);
}

TEST_CASE("bilinear_up2: known values, constants, gradient") {
    // Independent recomputation of the align_corners=false sampling rule.
    auto ref_up = [](const std::vector<double>& in, std::int64_t H, std::int64_t W) {
        std::vector<double> out(4 * H * W);
        for (std::int64_t oy = 0; oy < 2 * H; ++oy)
            for (std::int64_t ox = 0; ox < 2 * W; ++ox) {
                double sy = std::min(std::max((oy + 0.5) / 2.0 - 0.5, 0.0), double(H - 1));
                double sx = std::min(std::max((ox + 0.5) / 2.0 - 0.5, 0.0), double(W - 1));
                std::int64_t y0 = (std::int64_t)std::floor(sy), x0 = (std::int64_t)std::floor(sx);
                std::int64_t y1 = std::min(y0 + 1, H - 1), x1 = std::min(x0 + 1, W - 1);
                double fy = sy - y0, fx = sx - x0;
                out[oy * 2 * W + ox] = (1 - fy) * ((1 - fx) * in[y0 * W + x0] + fx * in[y0 * W + x1]) +
                                       fy * ((1 - fx) * in[y1 * W + x0] + fx * in[y1 * W + x1]);
            }
        return out;
    };
    std::vector<double> grid{1, 2, 3, 4, 5, 6};  // 2x3
    Tensor x = Tensor::from_data({1, 2, 3, 1}, grid);
    Tensor y = bilinear_up2(x);
    REQUIRE(y.shape() == Shape{1, 4, 6, 1});
    auto ref = ref_up(grid, 2, 3);
    for (std::int64_t i = 0; i < y.size(); ++i)
        CHECK(y.data()[i] == doctest::Approx(ref[i]).epsilon(1e-14));

    Tensor c = Tensor::full({2, 3, 3, 2}, 0.7);
    Tensor cu = bilinear_up2(c);
    for (std::int64_t i = 0; i < cu.size(); ++i) CHECK(cu.data()[i] == doctest::Approx(0.7));

    Rng rng(59);
    Tensor r = Tensor::uniform({1, 3, 4, 2}, -1.0, 1.0, rng);
    auto fn = [](const Tensor& v) {
        Tensor u = bilinear_up2(v);
        return sum(mul(u, u));
    };
    CHECK(grad_check(fn, r) < 1e-6);
}

TEST_CASE("drop_path: identity in eval, per-sample masking in train") {
    Rng rng(61);
    Tensor x = Tensor::uniform({64, 2, 2, 3}, 0.5, 1.5, rng);
    Rng mask_rng(7);
    Tensor eval_out = drop_path(x, 0.5, false, mask_rng);
    for (std::int64_t i = 0; i < x.size(); ++i) CHECK(eval_out.data()[i] == x.data()[i]);

    Tensor y = drop_path(x, 0.5, true, mask_rng);
    const std::int64_t per = x.size() / 64;
    int dropped = 0;
    for (std::int64_t n = 0; n < 64; ++n) {
        bool zero = true, scaled = true;
        for (std::int64_t i = 0; i < per; ++i) {
            double got = y.data()[n * per + i], want = 2.0 * x.data()[n * per + i];
            zero = zero && got == 0.0;
            scaled = scaled && got == doctest::Approx(want).epsilon(1e-15);
        }
        CHECK((zero || scaled));
        dropped += zero ? 1 : 0;
    }
    CHECK(dropped > 16);  // ~32 expected
    CHECK(dropped < 48);
    CHECK_THROWS_AS(drop_path(x, 1.0, true, mask_rng), std::invalid_argument);
}

TEST_CASE("channel_dropout masks whole (sample, channel) slices") {
    Rng rng(67);
    Tensor x = Tensor::uniform({4, 3, 3, 8}, 0.5, 1.5, rng);
    Rng mask_rng(13);
    Tensor y = channel_dropout(x, 0.5, true, mask_rng);
    const std::int64_t inner = 9;  // spatial positions per sample
    int dropped = 0;
    for (std::int64_t n = 0; n < 4; ++n)
        for (std::int64_t c = 0; c < 8; ++c) {
            bool zero = true, scaled = true;
            for (std::int64_t s = 0; s < inner; ++s) {
                double got = y.data()[(n * inner + s) * 8 + c];
                double want = 2.0 * x.data()[(n * inner + s) * 8 + c];
                zero = zero && got == 0.0;
                scaled = scaled && got == doctest::Approx(want).epsilon(1e-15);
            }
            CHECK((zero || scaled));
            dropped += zero ? 1 : 0;
        }
    CHECK(dropped > 6);
    CHECK(dropped < 26);

    Rng r2(13);
    Tensor id = channel_dropout(x, 0.0, true, r2);
    for (std::int64_t i = 0; i < x.size(); ++i) CHECK(id.data()[i] == x.data()[i]);
}

TEST_CASE("kaiming init statistics") {
    Rng rng(71);
    Conv3d p = make_conv3d(16, 64, {3, 3, 3}, {1, 1, 1}, {1, 1, 1}, false, rng);
    const double expect_std = std::sqrt(2.0 / (27.0 * 16.0));
    double mean = 0.0, var = 0.0;
    for (double v : p.weight.data()) mean += v;
    mean /= p.weight.size();
    for (double v : p.weight.data()) var += (v - mean) * (v - mean);
    var /= p.weight.size();
    CHECK(std::abs(mean) < expect_std * 0.05);
    CHECK(std::sqrt(var) == doctest::Approx(expect_std).epsilon(0.05));
    CHECK(p.weight.requires_grad());
    CHECK_FALSE(p.bias.defined());
}
