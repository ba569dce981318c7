#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vffc/network.hpp"
#include "vffc/volume_io.hpp"

namespace vffc {

// One inference tile: spatial origin plus the kept span [ky0,ky1)x[kx0,kx1)
// in full-resolution coordinates (all multiples of 4, so kept spans map
// exactly onto the quarter-resolution output grid).
struct StitchTile {
    std::int64_t oy = 0, ox = 0;
    std::int64_t ky0 = 0, ky1 = 0, kx0 = 0, kx1 = 0;
};

// Kept spans partition the volume exactly: boundaries between neighboring
// tiles sit at the overlap midpoint (rounded to a multiple of 4); border
// tiles keep their outer half.
struct StitchPlan {
    std::int64_t tile = 256;
    std::int64_t height = 0, width = 0;
    std::vector<StitchTile> tiles;
};

StitchPlan build_stitch_plan(std::int64_t height, std::int64_t width, std::int64_t tile = 256,
                             std::int64_t stride = 128);

// Tiled eval-mode inference over the depth window [z0, z0+net.cfg.depth).
// z0 = -1 centers the window. Returns the (H/4)x(W/4) probability map.
std::vector<double> tile_predict(const FragmentVolume& v, Network& net, std::int64_t z0 = -1);

// Simplified gradient-weighted activation probe: for each depth-window start
// z, the per-input-slice relevance (spatial/channel mean of
// relu(d sum(logits) / d act) * act at the probed layer, expanded to input
// depth). `layer` selects the probed activation: 0..2 = encoder stage
// outputs (depth resolution input/2, /4, /8), 3 = bottleneck output (/8);
// layer 0 gives the finest depth localization. Returns a row-major
// (v.depth x n_cols) matrix with n_cols = v.depth - window + 1; entries
// outside a column's window are 0.
std::vector<double> depth_activation_sweep(const FragmentVolume& v, Network& net,
                                           std::int64_t layer, std::int64_t oy, std::int64_t ox,
                                           std::int64_t& n_cols);

std::string sweep_to_csv(const std::vector<double>& matrix, std::int64_t rows,
                         std::int64_t cols);

}  // namespace vffc
