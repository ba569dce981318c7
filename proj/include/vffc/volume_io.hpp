#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace vffc {

// A micro-CT slice stack: depth x height x width voxels, intensities
// normalized to [0,1] (16-bit grid). Loaded from a directory of
// slice_0000.pgm ... files plus a volume.meta sidecar.
struct FragmentVolume {
    std::int64_t depth = 0, height = 0, width = 0;
    std::vector<double> voxels;  // depth*height*width, z-major

    double at(std::int64_t z, std::int64_t y, std::int64_t x) const {
        return voxels[(z * height + y) * width + x];
    }
    double& at(std::int64_t z, std::int64_t y, std::int64_t x) {
        return voxels[(z * height + y) * width + x];
    }
};

// Binary ground-truth ink map aligned with a FragmentVolume's (H, W).
struct InkMask {
    std::int64_t height = 0, width = 0;
    std::vector<std::uint8_t> values;  // 0 or 1

    double prevalence() const;
};

FragmentVolume load_volume(const std::string& dir);
void save_volume(const std::string& dir, const FragmentVolume& v,
                 double voxel_size_um = 10.0);

InkMask load_mask(const std::string& path);
void save_mask(const std::string& path, const InkMask& m);

// Probability maps in [0,1], stored as 8-bit PGM (quantized).
std::vector<double> load_inkmap(const std::string& path, std::int64_t& h, std::int64_t& w);
void save_inkmap(const std::string& path, const std::vector<double>& map, std::int64_t h,
                 std::int64_t w);

}  // namespace vffc
