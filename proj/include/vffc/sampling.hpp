#pragma once

#include <cstdint>
#include <vector>

#include "vffc/rng.hpp"
#include "vffc/volume_io.hpp"

namespace vffc {

// One training unit: a (d,h,w) subvolume plus its x4-downscaled soft ink
// target, with provenance (fragment, origin, applied D4 element).
struct FragmentSample {
    std::int64_t d = 0, h = 0, w = 0;
    std::vector<double> voxels;  // d*h*w
    std::vector<double> target;  // (h/4)*(w/4), in [0,1]
    std::int64_t oz = 0, oy = 0, ox = 0;
    int fragment_id = 0;
    int d4 = 0;
};

struct LatticeCell {
    std::int64_t z = 0, y = 0, x = 0;
    std::int64_t d = 0, h = 0, w = 0;
    int fragment_id = 0;
};

// Cells at spatial `stride` covering the volume (boundary cells clamped
// inward); depth cells tile without overlap. Deterministic order.
std::vector<LatticeCell> build_lattice(const FragmentVolume& v, std::int64_t cell_d,
                                       std::int64_t cell_h, std::int64_t cell_w,
                                       std::int64_t stride, int fragment_id = 0);

// Uniform random 3D origin within the cell (or the cell center when
// random_crop is false). The target is the aligned mask crop downscaled x4.
FragmentSample sample_subvolume(const LatticeCell& cell, const FragmentVolume& v,
                                const InkMask& mask, std::int64_t sub_d, std::int64_t sub_h,
                                std::int64_t sub_w, Rng& rng, bool random_crop = true);

// The 8 dihedral-group elements: 0 e, 1 r90, 2 r180, 3 r270, 4 flipH,
// 5 flipV, 6 transpose, 7 anti-transpose. Rotations by 90/270 and transposes
// require square spatial dims.
FragmentSample d4_transform(const FragmentSample& s, int g);

// Mean over 4x4 blocks; h and w must be divisible by 4.
std::vector<double> mask_downscale4(const std::vector<std::uint8_t>& mask, std::int64_t h,
                                    std::int64_t w);

}  // namespace vffc
