#pragma once

#include <array>

#include "vffc/tensor.hpp"

namespace vffc {

class Rng;

// 3D convolution parameters, channels-last activations. Weight layout is
// (C_out, kD, kH, kW, C_in); symmetric zero padding. Leave `bias` undefined
// for convolutions that feed a BatchNorm (the affine shift would be redundant
// and its gradient identically zero).
struct Conv3d {
    Tensor weight;
    Tensor bias;
    std::array<std::int64_t, 3> stride{1, 1, 1};
    std::array<std::int64_t, 3> pad{0, 0, 0};
};

// Kaiming-normal init: std = sqrt(2 / fan_in), fan_in = kD*kH*kW*c_in.
Conv3d make_conv3d(std::int64_t c_in, std::int64_t c_out, std::array<std::int64_t, 3> kernel,
                   std::array<std::int64_t, 3> stride, std::array<std::int64_t, 3> pad,
                   bool with_bias, Rng& rng);

Tensor conv3d(const Tensor& x, const Conv3d& p);  // (N,D,H,W,Cin) -> (N,Do,Ho,Wo,Cout)

// 2D convolution on (N,H,W,C) maps; requires kD == 1 and unit depth geometry.
// Delegates to the conv3d core.
Tensor conv2d(const Tensor& x, const Conv3d& p);

struct BatchNorm {
    Tensor gamma, beta;                // learnable, (C)
    Tensor running_mean, running_var;  // buffers, (C); biased variance
    double eps = 1e-5;
    double momentum = 0.1;
};

BatchNorm make_batch_norm(std::int64_t channels);

// Normalizes over every axis but the last. Training mode uses batch statistics
// and folds them into the running buffers; eval mode uses the running buffers.
Tensor batch_norm(const Tensor& x, BatchNorm& bn, bool training);

Tensor depth_mean(const Tensor& x);    // (N,D,H,W,C) -> (N,H,W,C)
Tensor bilinear_up2(const Tensor& x);  // (N,H,W,C) -> (N,2H,2W,C), align_corners=false

// Stochastic depth: zeroes whole samples of a residual branch with probability
// p and rescales survivors by 1/(1-p). Identity when !training or p == 0.
Tensor drop_path(const Tensor& x, double p, bool training, Rng& rng);

// Zeroes whole (sample, channel) slices with probability p, rescaling
// survivors by 1/(1-p). Channels are the last axis.
Tensor channel_dropout(const Tensor& x, double p, bool training, Rng& rng);

}  // namespace vffc
