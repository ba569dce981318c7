#include "vffc/fft.hpp"

#include <cmath>
#include <memory>
#include <mutex>
#include <numbers>
#include <stdexcept>
#include <unordered_map>

#include "vffc/parallel.hpp"

namespace vffc {

std::int64_t half_width(std::int64_t W) { return W / 2 + 1; }

namespace {

using cplx = std::complex<double>;

// Cached one-size transform setup: radix-2 twiddles for powers of two,
// Bluestein chirp + convolution kernel otherwise (both for sign -1).
struct Plan {
    std::int64_t n = 0;
    bool pow2 = false;
    std::vector<std::int64_t> bitrev;      // radix-2 only
    std::vector<cplx> twiddle;             // e^{-2pi i j/n}, j < n/2
    // Bluestein pieces (m = power of two >= 2n-1):
    std::int64_t m = 0;
    std::vector<cplx> chirp;               // w_j = e^{-pi i (j^2 mod 2n)/n}, j < n
    std::vector<cplx> kernel_fft;          // FFT_m of the cyclic chirp-conjugate kernel
    std::shared_ptr<const Plan> sub;       // plan for size m
};

bool is_pow2(std::int64_t n) { return n > 0 && (n & (n - 1)) == 0; }

std::shared_ptr<const Plan> get_plan(std::int64_t n);

// In-place complex FFT for sign -1 using a prepared plan.
void fft_pow2(const Plan& p, cplx* x) {
    const std::int64_t n = p.n;
    for (std::int64_t i = 0; i < n; ++i) {
        std::int64_t j = p.bitrev[i];
        if (j > i) std::swap(x[i], x[j]);
    }
    for (std::int64_t len = 2; len <= n; len <<= 1) {
        std::int64_t half = len >> 1;
        std::int64_t step = n / len;  // twiddle stride within the root table
        for (std::int64_t base = 0; base < n; base += len) {
            for (std::int64_t j = 0; j < half; ++j) {
                cplx w = p.twiddle[j * step];
                cplx u = x[base + j];
                cplx v = x[base + j + half] * w;
                x[base + j] = u + v;
                x[base + j + half] = u - v;
            }
        }
    }
}

void fft_dispatch(const Plan& p, cplx* x);

void fft_bluestein(const Plan& p, cplx* x) {
    const std::int64_t n = p.n, m = p.m;
    std::vector<cplx> a(m, cplx{0.0, 0.0});
    for (std::int64_t j = 0; j < n; ++j) a[j] = x[j] * p.chirp[j];
    fft_dispatch(*p.sub, a.data());
    for (std::int64_t j = 0; j < m; ++j) a[j] *= p.kernel_fft[j];
    // Inverse FFT of length m via conjugation.
    for (auto& v : a) v = std::conj(v);
    fft_dispatch(*p.sub, a.data());
    double inv_m = 1.0 / static_cast<double>(m);
    for (std::int64_t k = 0; k < n; ++k) x[k] = std::conj(a[k]) * inv_m * p.chirp[k];
}

void fft_dispatch(const Plan& p, cplx* x) {
    if (p.pow2)
        fft_pow2(p, x);
    else
        fft_bluestein(p, x);
}

std::shared_ptr<const Plan> build_plan(std::int64_t n) {
    auto p = std::make_shared<Plan>();
    p->n = n;
    p->pow2 = is_pow2(n);
    if (p->pow2) {
        p->bitrev.resize(n);
        int bits = 0;
        while ((std::int64_t{1} << bits) < n) ++bits;
        for (std::int64_t i = 0; i < n; ++i) {
            std::int64_t r = 0;
            for (int b = 0; b < bits; ++b)
                if (i & (std::int64_t{1} << b)) r |= std::int64_t{1} << (bits - 1 - b);
            p->bitrev[i] = r;
        }
        p->twiddle.resize(std::max<std::int64_t>(n / 2, 1));
        for (std::int64_t j = 0; j < n / 2; ++j) {
            double ang = -2.0 * std::numbers::pi * static_cast<double>(j) / static_cast<double>(n);
            p->twiddle[j] = cplx{std::cos(ang), std::sin(ang)};
        }
        return p;
    }
    std::int64_t m = 1;
    while (m < 2 * n - 1) m <<= 1;
    p->m = m;
    p->sub = get_plan(m);
    p->chirp.resize(n);
    for (std::int64_t j = 0; j < n; ++j) {
        // j^2 mod 2n keeps the angle argument small and exact.
        std::int64_t q = (j * j) % (2 * n);
        double ang = -std::numbers::pi * static_cast<double>(q) / static_cast<double>(n);
        p->chirp[j] = cplx{std::cos(ang), std::sin(ang)};
    }
    std::vector<cplx> b(m, cplx{0.0, 0.0});
    b[0] = std::conj(p->chirp[0]);
    for (std::int64_t j = 1; j < n; ++j) {
        b[j] = std::conj(p->chirp[j]);
        b[m - j] = b[j];
    }
    fft_dispatch(*p->sub, b.data());
    p->kernel_fft = std::move(b);
    return p;
}

std::shared_ptr<const Plan> get_plan(std::int64_t n) {
    static std::mutex mu;
    static std::unordered_map<std::int64_t, std::shared_ptr<const Plan>> cache;
    {
        std::lock_guard<std::mutex> lock(mu);
        auto it = cache.find(n);
        if (it != cache.end()) return it->second;
    }
    auto plan = build_plan(n);
    std::lock_guard<std::mutex> lock(mu);
    return cache.try_emplace(n, std::move(plan)).first->second;
}

// sign=-1 forward, sign=+1 unnormalized inverse (conjugation trick).
void fft1d(cplx* x, std::int64_t n, int sign) {
    if (n == 1) return;
    auto plan = get_plan(n);
    if (sign < 0) {
        fft_dispatch(*plan, x);
    } else {
        for (std::int64_t i = 0; i < n; ++i) x[i] = std::conj(x[i]);
        fft_dispatch(*plan, x);
        for (std::int64_t i = 0; i < n; ++i) x[i] = std::conj(x[i]);
    }
}

// Unnormalized 3D transform of a row-major (D,H,W) complex grid.
void fft3_inplace(cplx* buf, std::int64_t D, std::int64_t H, std::int64_t W, int sign) {
    for (std::int64_t dh = 0; dh < D * H; ++dh) fft1d(buf + dh * W, W, sign);
    std::vector<cplx> scratch(std::max(H, D));
    for (std::int64_t d = 0; d < D; ++d)
        for (std::int64_t w = 0; w < W; ++w) {
            for (std::int64_t h = 0; h < H; ++h) scratch[h] = buf[(d * H + h) * W + w];
            fft1d(scratch.data(), H, sign);
            for (std::int64_t h = 0; h < H; ++h) buf[(d * H + h) * W + w] = scratch[h];
        }
    for (std::int64_t hw = 0; hw < H * W; ++hw) {
        for (std::int64_t d = 0; d < D; ++d) scratch[d] = buf[d * H * W + hw];
        fft1d(scratch.data(), D, sign);
        for (std::int64_t d = 0; d < D; ++d) buf[d * H * W + hw] = scratch[d];
    }
}

void check_dims(std::int64_t D, std::int64_t H, std::int64_t W, std::size_t got) {
    if (D <= 0 || H <= 0 || W <= 0) throw std::invalid_argument("fft: non-positive dimension");
    if (static_cast<std::size_t>(D * H * W) != got)
        throw std::invalid_argument("fft: volume size does not match dims");
}

// Conjugate-pair weight for half-spectrum column k_w.
inline double pair_weight(std::int64_t kw, std::int64_t W) {
    return (kw >= 1 && kw <= (W + 1) / 2 - 1) ? 2.0 : 1.0;
}

}  // namespace

ComplexSpectrum rfft3_spectrum(std::span<const double> vol, std::int64_t D, std::int64_t H,
                               std::int64_t W) {
    check_dims(D, H, W, vol.size());
    std::vector<cplx> buf(vol.size());
    for (std::size_t i = 0; i < vol.size(); ++i) buf[i] = cplx{vol[i], 0.0};
    fft3_inplace(buf.data(), D, H, W, -1);
    std::int64_t Wh = half_width(W);
    ComplexSpectrum out;
    out.shape = {D, H, Wh};
    out.data.resize(D * H * Wh);
    for (std::int64_t d = 0; d < D; ++d)
        for (std::int64_t h = 0; h < H; ++h)
            for (std::int64_t w = 0; w < Wh; ++w)
                out.data[(d * H + h) * Wh + w] = buf[(d * H + h) * W + w];
    return out;
}

std::vector<double> irfft3_volume(const ComplexSpectrum& spec, std::int64_t W) {
    if (spec.shape.size() != 3) throw std::invalid_argument("irfft3: spectrum must be rank 3");
    std::int64_t D = spec.shape[0], H = spec.shape[1], Wh = spec.shape[2];
    if (Wh != half_width(W))
        throw std::invalid_argument("irfft3: spectrum width does not match requested W");
    // Rebuild the full grid through conjugate symmetry, then synthesize.
    std::vector<cplx> buf(D * H * W, cplx{0.0, 0.0});
    for (std::int64_t d = 0; d < D; ++d)
        for (std::int64_t h = 0; h < H; ++h)
            for (std::int64_t w = 0; w < Wh; ++w) {
                cplx z = spec.data[(d * H + h) * Wh + w];
                buf[(d * H + h) * W + w] = z;
                if (pair_weight(w, W) == 2.0) {
                    std::int64_t md = (D - d) % D, mh = (H - h) % H, mw = W - w;
                    buf[(md * H + mh) * W + mw] = std::conj(z);
                }
            }
    fft3_inplace(buf.data(), D, H, W, +1);
    double inv_n = 1.0 / static_cast<double>(D * H * W);
    std::vector<double> out(D * H * W);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = buf[i].real() * inv_n;
    return out;
}

ComplexSpectrum dft3_reference(std::span<const double> vol, std::int64_t D, std::int64_t H,
                               std::int64_t W) {
    check_dims(D, H, W, vol.size());
    if (D * H * W > 4096)
        throw std::invalid_argument("dft3_reference: oracle capped at 4096 voxels");
    std::int64_t Wh = half_width(W);
    ComplexSpectrum out;
    out.shape = {D, H, Wh};
    out.data.resize(D * H * Wh);
    const long double two_pi = 2.0L * std::numbers::pi_v<long double>;
    for (std::int64_t kd = 0; kd < D; ++kd)
        for (std::int64_t kh = 0; kh < H; ++kh)
            for (std::int64_t kw = 0; kw < Wh; ++kw) {
                long double re = 0.0L, im = 0.0L;
                for (std::int64_t d = 0; d < D; ++d)
                    for (std::int64_t h = 0; h < H; ++h)
                        for (std::int64_t w = 0; w < W; ++w) {
                            long double ang =
                                two_pi * (static_cast<long double>(kd * d) / D +
                                          static_cast<long double>(kh * h) / H +
                                          static_cast<long double>(kw * w) / W);
                            long double v = vol[(d * H + h) * W + w];
                            re += v * std::cos(ang);
                            im -= v * std::sin(ang);
                        }
                out.data[(kd * H + kh) * Wh + kw] =
                    cplx{static_cast<double>(re), static_cast<double>(im)};
            }
    return out;
}

// --- differentiable wrappers ---------------------------------------------------

namespace {

struct Dims5 {
    std::int64_t N, D, H, W, C;
};

Dims5 dims_of(const Tensor& t, const char* op) {
    if (t.rank() != 5)
        throw std::invalid_argument(std::string(op) + ": expected rank-5 (N,D,H,W,C), got " +
                                    shape_str(t.shape()));
    const Shape& s = t.shape();
    return {s[0], s[1], s[2], s[3], s[4]};
}

}  // namespace

Tensor rfft3(const Tensor& x) {
    auto [N, D, H, W, C] = dims_of(x, "rfft3");
    std::int64_t Wh = half_width(W);
    Shape out_shape{N, D, H, Wh, 2 * C};
    std::vector<double> out(shape_size(out_shape));
    auto vx = x.data();
    parallel_for(N * C, 1, [&](std::int64_t begin, std::int64_t end) {
        std::vector<cplx> buf(D * H * W);
        for (std::int64_t nc = begin; nc < end; ++nc) {
            std::int64_t n = nc / C, c = nc % C;
            for (std::int64_t i = 0; i < D * H * W; ++i)
                buf[i] = cplx{vx[(n * D * H * W + i) * C + c], 0.0};
            fft3_inplace(buf.data(), D, H, W, -1);
            for (std::int64_t d = 0; d < D; ++d)
                for (std::int64_t h = 0; h < H; ++h)
                    for (std::int64_t w = 0; w < Wh; ++w) {
                        cplx z = buf[(d * H + h) * W + w];
                        std::int64_t base = (((n * D + d) * H + h) * Wh + w) * 2 * C;
                        out[base + c] = z.real();
                        out[base + C + c] = z.imag();
                    }
        }
    });
    return detail::make_op(
        std::move(out_shape), std::move(out), {x},
        [N, D, H, W, C, Wh](detail::Node& self) {
            auto& p = *self.parents[0];
            if (!p.requires_grad) return;
            auto& g = p.ensure_grad();
            const auto& go = self.grad;
            parallel_for(N * C, 1, [&](std::int64_t begin, std::int64_t end) {
                std::vector<cplx> buf(D * H * W);
                for (std::int64_t nc = begin; nc < end; ++nc) {
                    std::int64_t n = nc / C, c = nc % C;
                    std::fill(buf.begin(), buf.end(), cplx{0.0, 0.0});
                    for (std::int64_t d = 0; d < D; ++d)
                        for (std::int64_t h = 0; h < H; ++h)
                            for (std::int64_t w = 0; w < Wh; ++w) {
                                std::int64_t base = (((n * D + d) * H + h) * Wh + w) * 2 * C;
                                buf[(d * H + h) * W + w] = cplx{go[base + c], go[base + C + c]};
                            }
                    // d x[n] = Re( sum_{half k} G[k] e^{+i theta} )
                    fft3_inplace(buf.data(), D, H, W, +1);
                    for (std::int64_t i = 0; i < D * H * W; ++i)
                        g[(n * D * H * W + i) * C + c] += buf[i].real();
                }
            });
        },
        "rfft3");
}

Tensor irfft3(const Tensor& z, std::int64_t W) {
    auto [N, D, H, Wh, C2] = dims_of(z, "irfft3");
    if (C2 % 2 != 0) throw std::invalid_argument("irfft3: channel count must be even (Re|Im)");
    if (Wh != half_width(W))
        throw std::invalid_argument("irfft3: width axis " + std::to_string(Wh) +
                                    " does not match half_width(" + std::to_string(W) + ")");
    std::int64_t C = C2 / 2;
    Shape out_shape{N, D, H, W, C};
    std::vector<double> out(shape_size(out_shape));
    auto vz = z.data();
    parallel_for(N * C, 1, [&](std::int64_t begin, std::int64_t end) {
        ComplexSpectrum spec;
        spec.shape = {D, H, Wh};
        spec.data.resize(D * H * Wh);
        for (std::int64_t nc = begin; nc < end; ++nc) {
            std::int64_t n = nc / C, c = nc % C;
            for (std::int64_t i = 0; i < D * H * Wh; ++i) {
                std::int64_t base = (n * D * H * Wh + i) * C2;
                spec.data[i] = cplx{vz[base + c], vz[base + C + c]};
            }
            auto vol = irfft3_volume(spec, W);
            for (std::int64_t i = 0; i < D * H * W; ++i)
                out[(n * D * H * W + i) * C + c] = vol[i];
        }
    });
    return detail::make_op(
        std::move(out_shape), std::move(out), {z},
        [N, D, H, W, Wh, C, C2](detail::Node& self) {
            auto& p = *self.parents[0];
            if (!p.requires_grad) return;
            auto& g = p.ensure_grad();
            const auto& go = self.grad;
            double inv_n = 1.0 / static_cast<double>(D * H * W);
            parallel_for(N * C, 1, [&](std::int64_t begin, std::int64_t end) {
                std::vector<cplx> buf(D * H * W);
                for (std::int64_t nc = begin; nc < end; ++nc) {
                    std::int64_t n = nc / C, c = nc % C;
                    for (std::int64_t i = 0; i < D * H * W; ++i)
                        buf[i] = cplx{go[(n * D * H * W + i) * C + c], 0.0};
                    // dZ[k] = (w_k / N) * FFT_forward(g)[k] on the half grid
                    fft3_inplace(buf.data(), D, H, W, -1);
                    for (std::int64_t d = 0; d < D; ++d)
                        for (std::int64_t h = 0; h < H; ++h)
                            for (std::int64_t w = 0; w < Wh; ++w) {
                                cplx f = buf[(d * H + h) * W + w] * (pair_weight(w, W) * inv_n);
                                std::int64_t base = (((n * D + d) * H + h) * Wh + w) * C2;
                                g[base + c] += f.real();
                                g[base + C + c] += f.imag();
                            }
                }
            });
        },
        "irfft3");
}

}  // namespace vffc
