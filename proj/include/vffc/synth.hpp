#pragma once

#include <cstdint>
#include <utility>

#include "vffc/volume_io.hpp"

namespace vffc {

// Synthetic carbonized-papyrus stand-in. The background is a pseudo-periodic
// fiber texture (oriented sinusoids with per-slice phase drift, a smooth 2D
// density field, and per-voxel noise). Ink is a set of dilated polyline
// strokes; inside a central depth band the texture under the strokes is
// low-pass smoothed and its density raised by `delta`. The smoothing factor
// s(delta) = 0.9 * min(1, delta/0.03) saturates quickly, so small deltas keep
// the mean-intensity shift below the noise amplitude while the textural cue
// stays strong. delta = 0 leaves the volume untouched by ink.
struct SynthParams {
    std::int64_t depth = 24, height = 512, width = 512;
    int strokes = 18;
    double delta = 0.04;
    double fiber_amp = 0.085;    // per-sinusoid amplitude ceiling
    double field_std = 0.10;     // smooth 2D density field, std after rescale
    double voxel_noise = 0.04;   // iid per-voxel noise std
    std::int64_t band_lo = -1;   // ink depth band; -1 = [depth/3, 2*depth/3)
    std::int64_t band_hi = -1;
};

std::pair<FragmentVolume, InkMask> synth_fragment(std::uint64_t seed, const SynthParams& params);

}  // namespace vffc
