#pragma once

#include "vffc/nn.hpp"

namespace vffc {

class Rng;

// Fourier-convolution family. Sffc transforms each depth slice independently
// (2D spectra, weights shared across slices). Stffc also transforms per slice
// but folds depth into the spectral channel axis, so its pointwise mixer sees
// all slices at once and is tied to a fixed depth. Vffc transforms the full
// volume with a 3D FFT.
enum class FfcKind { Sffc, Stffc, Vffc };

const char* ffc_kind_name(FfcKind kind);
FfcKind ffc_kind_from_name(std::string_view name);

struct FfcOptions {
    double global_ratio = 0.5;  // fraction of channels routed through the spectrum
    double bn_eps = 1e-5;
    bool bypass_bn = false;  // test hook: skip every BatchNorm in the unit
    bool bypass_act = false;  // test hook: skip every ReLU in the unit
};

// Pointwise mixer applied between forward and inverse transform, acting on
// stacked (Re | Im) channels.
struct SpectralTransform {
    FfcKind kind = FfcKind::Vffc;
    std::int64_t depth = 0;  // fixed D; used by Stffc only
    Conv3d pw;
    BatchNorm bn;
};

// One FFC unit: channels split into a local and a global branch.
//   z_l = ll_b(ll_a(x_l)) + gl(x_g)   -> BN -> ReLU   (5^3 receptive field)
//   z_g = lg(x_l) + ST(x_g)           -> BN -> ReLU   (unbounded receptive field)
//   out = concat(z_l, z_g)
// All convolutions are bias-free (each path lands in a BatchNorm).
struct FfcUnit {
    FfcKind kind = FfcKind::Vffc;
    std::int64_t c_in = 0, c_out = 0;
    std::int64_t c_in_g = 0, c_out_g = 0;
    Conv3d ll_a, ll_b;  // local -> local, stacked 3x3x3
    Conv3d lg, gl;      // cross-branch 1x1x1
    SpectralTransform st;
    BatchNorm bn_l, bn_g;
    FfcOptions opt;
};

std::int64_t global_channels(std::int64_t c, double ratio);

// `depth` is required for FfcKind::Stffc and ignored otherwise.
FfcUnit make_ffc(FfcKind kind, std::int64_t c_in, std::int64_t c_out, std::int64_t depth,
                 Rng& rng, FfcOptions opt = {});

Tensor spectral_transform(const Tensor& xg, SpectralTransform& st, bool training,
                          const FfcOptions& opt = {});
Tensor ffc_forward(const Tensor& x, FfcUnit& unit, bool training);

// Identity-shortcut residual wrapper: x + DropPath(FFC(x)). Requires
// c_in == c_out; downsampling lives outside the block.
struct FfcResBlock {
    FfcUnit unit;
    double drop_path_p = 0.0;
};

FfcResBlock make_ffc_res_block(FfcKind kind, std::int64_t channels, std::int64_t depth,
                               double drop_path_p, Rng& rng, FfcOptions opt = {});
Tensor ffc_residual_block(const Tensor& x, FfcResBlock& block, bool training, Rng& rng);

}  // namespace vffc
