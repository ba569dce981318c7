#include "vffc/sampling.hpp"

#include <stdexcept>

#include "vffc/errors.hpp"

namespace vffc {

namespace {

std::vector<std::int64_t> axis_positions(std::int64_t extent, std::int64_t cell,
                                         std::int64_t stride) {
    std::vector<std::int64_t> pos;
    for (std::int64_t p = 0; p + cell <= extent; p += stride) pos.push_back(p);
    if (pos.back() + cell < extent) pos.push_back(extent - cell);  // clamp inward
    return pos;
}

// Destination (y,x) -> source (y,x) for the D4 element g on an n-by-m grid
// (n-by-m are the destination dims; callers ensure square grids where needed).
inline void d4_source(int g, std::int64_t y, std::int64_t x, std::int64_t h, std::int64_t w,
                      std::int64_t& sy, std::int64_t& sx) {
    switch (g) {
        case 0: sy = y; sx = x; break;                  // e
        case 1: sy = x; sx = w - 1 - y; break;          // r90 (ccw)
        case 2: sy = h - 1 - y; sx = w - 1 - x; break;  // r180
        case 3: sy = h - 1 - x; sx = y; break;          // r270
        case 4: sy = y; sx = w - 1 - x; break;          // flipH
        case 5: sy = h - 1 - y; sx = x; break;          // flipV
        case 6: sy = x; sx = y; break;                  // transpose
        case 7: sy = h - 1 - x; sx = w - 1 - y; break;  // anti-transpose
        default: throw std::invalid_argument("d4_transform: element must be in 0..7");
    }
}

void d4_apply_plane(const double* src, double* dst, int g, std::int64_t h, std::int64_t w) {
    for (std::int64_t y = 0; y < h; ++y) {
        for (std::int64_t x = 0; x < w; ++x) {
            std::int64_t sy, sx;
            d4_source(g, y, x, h, w, sy, sx);
            dst[y * w + x] = src[sy * w + sx];
        }
    }
}

}  // namespace

std::vector<LatticeCell> build_lattice(const FragmentVolume& v, std::int64_t cell_d,
                                       std::int64_t cell_h, std::int64_t cell_w,
                                       std::int64_t stride, int fragment_id) {
    if (cell_d <= 0 || cell_h <= 0 || cell_w <= 0 || stride <= 0)
        throw std::invalid_argument("build_lattice: cell and stride must be positive");
    if (cell_d > v.depth || cell_h > v.height || cell_w > v.width)
        throw DataError("build_lattice: cell larger than volume");
    const auto zs = axis_positions(v.depth, cell_d, cell_d);  // depth tiles without overlap
    const auto ys = axis_positions(v.height, cell_h, stride);
    const auto xs = axis_positions(v.width, cell_w, stride);
    std::vector<LatticeCell> cells;
    cells.reserve(zs.size() * ys.size() * xs.size());
    for (auto z : zs)
        for (auto y : ys)
            for (auto x : xs)
                cells.push_back({z, y, x, cell_d, cell_h, cell_w, fragment_id});
    return cells;
}

FragmentSample sample_subvolume(const LatticeCell& cell, const FragmentVolume& v,
                                const InkMask& mask, std::int64_t sub_d, std::int64_t sub_h,
                                std::int64_t sub_w, Rng& rng, bool random_crop) {
    if (sub_d > cell.d || sub_h > cell.h || sub_w > cell.w)
        throw std::invalid_argument("sample_subvolume: subvolume does not fit in cell");
    if (mask.height != v.height || mask.width != v.width)
        throw DataError("sample_subvolume: mask does not match volume dimensions");
    FragmentSample s;
    s.d = sub_d;
    s.h = sub_h;
    s.w = sub_w;
    s.fragment_id = cell.fragment_id;
    if (random_crop) {
        s.oz = cell.z + rng.uniform_int(0, cell.d - sub_d);
        s.oy = cell.y + rng.uniform_int(0, cell.h - sub_h);
        s.ox = cell.x + rng.uniform_int(0, cell.w - sub_w);
    } else {
        s.oz = cell.z + (cell.d - sub_d) / 2;
        s.oy = cell.y + (cell.h - sub_h) / 2;
        s.ox = cell.x + (cell.w - sub_w) / 2;
    }
    s.voxels.resize(static_cast<std::size_t>(sub_d * sub_h * sub_w));
    for (std::int64_t z = 0; z < sub_d; ++z)
        for (std::int64_t y = 0; y < sub_h; ++y) {
            const double* src = &v.voxels[((s.oz + z) * v.height + s.oy + y) * v.width + s.ox];
            std::copy(src, src + sub_w, &s.voxels[(z * sub_h + y) * sub_w]);
        }
    std::vector<std::uint8_t> crop(static_cast<std::size_t>(sub_h * sub_w));
    for (std::int64_t y = 0; y < sub_h; ++y) {
        const std::uint8_t* src = &mask.values[(s.oy + y) * v.width + s.ox];
        std::copy(src, src + sub_w, &crop[y * sub_w]);
    }
    s.target = mask_downscale4(crop, sub_h, sub_w);
    return s;
}

FragmentSample d4_transform(const FragmentSample& s, int g) {
    if (g == 0) return s;
    const bool needs_square = g == 1 || g == 3 || g == 6 || g == 7;
    if (needs_square && s.h != s.w)
        throw std::invalid_argument("d4_transform: rotations/transposes need square dims");
    FragmentSample out = s;
    out.d4 = g;
    for (std::int64_t z = 0; z < s.d; ++z)
        d4_apply_plane(&s.voxels[z * s.h * s.w], &out.voxels[z * s.h * s.w], g, s.h, s.w);
    d4_apply_plane(s.target.data(), out.target.data(), g, s.h / 4, s.w / 4);
    return out;
}

std::vector<double> mask_downscale4(const std::vector<std::uint8_t>& mask, std::int64_t h,
                                    std::int64_t w) {
    if (h % 4 != 0 || w % 4 != 0)
        throw std::invalid_argument("mask_downscale4: dims must be divisible by 4");
    if (static_cast<std::int64_t>(mask.size()) != h * w)
        throw std::invalid_argument("mask_downscale4: size does not match dims");
    std::vector<double> out(static_cast<std::size_t>((h / 4) * (w / 4)));
    for (std::int64_t by = 0; by < h / 4; ++by) {
        for (std::int64_t bx = 0; bx < w / 4; ++bx) {
            int acc = 0;
            for (std::int64_t y = 0; y < 4; ++y)
                for (std::int64_t x = 0; x < 4; ++x)
                    acc += mask[(by * 4 + y) * w + bx * 4 + x];
            out[by * (w / 4) + bx] = static_cast<double>(acc) / 16.0;
        }
    }
    return out;
}

}  // namespace vffc
