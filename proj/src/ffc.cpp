#include "vffc/ffc.hpp"

#include <cmath>
#include <stdexcept>

#include "vffc/fft.hpp"
#include "vffc/rng.hpp"

namespace vffc {

const char* ffc_kind_name(FfcKind kind) {
    switch (kind) {
        case FfcKind::Sffc: return "sffc";
        case FfcKind::Stffc: return "stffc";
        case FfcKind::Vffc: return "vffc";
    }
    throw std::invalid_argument("ffc_kind_name: unknown kind");
}

FfcKind ffc_kind_from_name(std::string_view name) {
    if (name == "sffc") return FfcKind::Sffc;
    if (name == "stffc") return FfcKind::Stffc;
    if (name == "vffc") return FfcKind::Vffc;
    throw std::invalid_argument("unknown FFC kind '" + std::string(name) + "'");
}

std::int64_t global_channels(std::int64_t c, double ratio) {
    return static_cast<std::int64_t>(std::lround(static_cast<double>(c) * ratio));
}

FfcUnit make_ffc(FfcKind kind, std::int64_t c_in, std::int64_t c_out, std::int64_t depth,
                 Rng& rng, FfcOptions opt) {
    FfcUnit u;
    u.kind = kind;
    u.opt = opt;
    u.c_in = c_in;
    u.c_out = c_out;
    u.c_in_g = global_channels(c_in, opt.global_ratio);
    u.c_out_g = global_channels(c_out, opt.global_ratio);
    const std::int64_t cl_in = c_in - u.c_in_g;
    const std::int64_t cl_out = c_out - u.c_out_g;
    if (u.c_in_g < 1 || u.c_out_g < 1 || cl_in < 1 || cl_out < 1)
        throw std::invalid_argument("make_ffc: both branches need at least one channel");
    if (kind == FfcKind::Stffc && depth < 1)
        throw std::invalid_argument("make_ffc: stffc requires a fixed positive depth");

    Rng r_lla = rng.split(1), r_llb = rng.split(2), r_lg = rng.split(3), r_gl = rng.split(4),
        r_pw = rng.split(5);
    u.ll_a = make_conv3d(cl_in, cl_out, {3, 3, 3}, {1, 1, 1}, {1, 1, 1}, false, r_lla);
    u.ll_b = make_conv3d(cl_out, cl_out, {3, 3, 3}, {1, 1, 1}, {1, 1, 1}, false, r_llb);
    u.lg = make_conv3d(cl_in, u.c_out_g, {1, 1, 1}, {1, 1, 1}, {0, 0, 0}, false, r_lg);
    u.gl = make_conv3d(u.c_in_g, cl_out, {1, 1, 1}, {1, 1, 1}, {0, 0, 0}, false, r_gl);

    u.st.kind = kind;
    u.st.depth = kind == FfcKind::Stffc ? depth : 0;
    const std::int64_t fold = kind == FfcKind::Stffc ? depth : 1;
    u.st.pw = make_conv3d(2 * fold * u.c_in_g, 2 * fold * u.c_out_g, {1, 1, 1}, {1, 1, 1},
                          {0, 0, 0}, false, r_pw);
    u.st.bn = make_batch_norm(2 * fold * u.c_out_g);
    u.st.bn.eps = opt.bn_eps;

    u.bn_l = make_batch_norm(cl_out);
    u.bn_g = make_batch_norm(u.c_out_g);
    u.bn_l.eps = opt.bn_eps;
    u.bn_g.eps = opt.bn_eps;
    return u;
}

Tensor spectral_transform(const Tensor& xg, SpectralTransform& st, bool training,
                          const FfcOptions& opt) {
    if (xg.rank() != 5)
        throw std::invalid_argument("spectral_transform: expected rank-5 input, got " +
                                    shape_str(xg.shape()));
    const Shape& s = xg.shape();
    const std::int64_t N = s[0], D = s[1], H = s[2], W = s[3], C = s[4];
    auto post = [&](Tensor y) {
        if (!opt.bypass_bn) y = batch_norm(y, st.bn, training);
        if (!opt.bypass_act) y = relu(y);
        return y;
    };
    switch (st.kind) {
        case FfcKind::Vffc: {
            Tensor z = rfft3(xg);
            Tensor y = post(conv3d(z, st.pw));
            return irfft3(y, W);
        }
        case FfcKind::Sffc: {
            // Depth slices become batch entries; one shared 2D spectral mixer.
            Tensor z = rfft3(reshape(xg, {N * D, 1, H, W, C}));
            Tensor y = post(conv3d(z, st.pw));
            Tensor back = irfft3(y, W);
            return reshape(back, {N, D, H, W, back.dim(-1)});
        }
        case FfcKind::Stffc: {
            if (D != st.depth)
                throw std::invalid_argument("spectral_transform: stffc built for depth " +
                                            std::to_string(st.depth) + ", got " +
                                            std::to_string(D));
            const std::int64_t Wh = half_width(W);
            Tensor z = rfft3(reshape(xg, {N * D, 1, H, W, C}));  // (N*D,1,H,Wh,2C)
            // Fold depth into the spectral channel axis for the mixer.
            int to_folded[] = {0, 2, 3, 1, 4};
            Tensor zf = reshape(permute(reshape(z, {N, D, H, Wh, 2 * C}), to_folded),
                                {N, H, Wh, D * 2 * C});
            Tensor y = post(conv2d(zf, st.pw));
            const std::int64_t c_out = y.dim(-1) / (2 * D);
            int from_folded[] = {0, 3, 1, 2, 4};
            Tensor yu = permute(reshape(y, {N, H, Wh, D, 2 * c_out}), from_folded);
            Tensor back = irfft3(reshape(yu, {N * D, 1, H, Wh, 2 * c_out}), W);
            return reshape(back, {N, D, H, W, c_out});
        }
    }
    throw std::invalid_argument("spectral_transform: unknown kind");
}

Tensor ffc_forward(const Tensor& x, FfcUnit& u, bool training) {
    if (x.rank() != 5)
        throw std::invalid_argument("ffc_forward: expected rank-5 input, got " +
                                    shape_str(x.shape()));
    if (x.dim(-1) != u.c_in)
        throw std::invalid_argument("ffc_forward: expected " + std::to_string(u.c_in) +
                                    " channels, got " + std::to_string(x.dim(-1)));
    const std::int64_t cl_in = u.c_in - u.c_in_g;
    const std::int64_t sizes[] = {cl_in, u.c_in_g};
    auto parts = split(x, 4, sizes);
    const Tensor& xl = parts[0];
    const Tensor& xg = parts[1];

    Tensor zl = add(conv3d(conv3d(xl, u.ll_a), u.ll_b), conv3d(xg, u.gl));
    Tensor zg = add(conv3d(xl, u.lg), spectral_transform(xg, u.st, training, u.opt));
    if (!u.opt.bypass_bn) {
        zl = batch_norm(zl, u.bn_l, training);
        zg = batch_norm(zg, u.bn_g, training);
    }
    if (!u.opt.bypass_act) {
        zl = relu(zl);
        zg = relu(zg);
    }
    const Tensor branches[] = {zl, zg};
    return concat(branches, 4);
}

FfcResBlock make_ffc_res_block(FfcKind kind, std::int64_t channels, std::int64_t depth,
                               double drop_path_p, Rng& rng, FfcOptions opt) {
    FfcResBlock b;
    b.unit = make_ffc(kind, channels, channels, depth, rng, opt);
    b.drop_path_p = drop_path_p;
    return b;
}

Tensor ffc_residual_block(const Tensor& x, FfcResBlock& block, bool training, Rng& rng) {
    if (block.unit.c_in != block.unit.c_out)
        throw std::invalid_argument("ffc_residual_block: unit must preserve channel count");
    Tensor branch = ffc_forward(x, block.unit, training);
    return add(x, drop_path(branch, block.drop_path_p, training, rng));
}

}  // namespace vffc
