#include "vffc/inference.hpp"

#include <cstdio>
#include <sstream>

#include "vffc/errors.hpp"
#include "vffc/rng.hpp"

namespace vffc {

namespace {

std::vector<std::int64_t> axis_origins(std::int64_t extent, std::int64_t tile,
                                       std::int64_t stride) {
    std::vector<std::int64_t> pos;
    for (std::int64_t p = 0; p + tile <= extent; p += stride) pos.push_back(p);
    if (pos.back() + tile < extent) pos.push_back(extent - tile);
    return pos;
}

// Kept-span boundaries along one axis: 0, overlap midpoints (rounded down to
// a multiple of 4), extent.
std::vector<std::int64_t> axis_boundaries(const std::vector<std::int64_t>& origins,
                                          std::int64_t tile, std::int64_t extent) {
    std::vector<std::int64_t> b{0};
    for (std::size_t i = 0; i + 1 < origins.size(); ++i)
        b.push_back(((origins[i] + tile + origins[i + 1]) / 2) & ~std::int64_t{3});
    b.push_back(extent);
    return b;
}

Tensor gather_tile(const FragmentVolume& v, std::int64_t z0, std::int64_t td, std::int64_t oy,
                   std::int64_t ox, std::int64_t tile) {
    Tensor x = Tensor::zeros({1, td, tile, tile, 1});
    auto dst = x.mut_data();
    for (std::int64_t z = 0; z < td; ++z)
        for (std::int64_t y = 0; y < tile; ++y) {
            const double* src = &v.voxels[((z0 + z) * v.height + oy + y) * v.width + ox];
            std::copy(src, src + tile, &dst[(z * tile + y) * tile]);
        }
    return x;
}

}  // namespace

StitchPlan build_stitch_plan(std::int64_t height, std::int64_t width, std::int64_t tile,
                             std::int64_t stride) {
    if (tile <= 0 || stride <= 0 || stride > tile)
        throw std::invalid_argument("stitch plan: need 0 < stride <= tile");
    if (tile % 4 != 0 || height % 4 != 0 || width % 4 != 0)
        throw std::invalid_argument("stitch plan: tile and volume dims must be multiples of 4");
    if (height < tile || width < tile)
        throw DataError("stitch plan: volume smaller than one tile");
    StitchPlan plan;
    plan.tile = tile;
    plan.height = height;
    plan.width = width;
    const auto ys = axis_origins(height, tile, stride);
    const auto xs = axis_origins(width, tile, stride);
    const auto by = axis_boundaries(ys, tile, height);
    const auto bx = axis_boundaries(xs, tile, width);
    for (std::size_t i = 0; i < ys.size(); ++i)
        for (std::size_t j = 0; j < xs.size(); ++j)
            plan.tiles.push_back(
                {ys[i], xs[j], by[i], by[i + 1], bx[j], bx[j + 1]});
    return plan;
}

std::vector<double> tile_predict(const FragmentVolume& v, Network& net, std::int64_t z0) {
    const std::int64_t td = net.cfg.depth;
    if (z0 < 0) z0 = (v.depth - td) / 2;
    if (z0 + td > v.depth || z0 < 0)
        throw DataError("tile_predict: depth window [" + std::to_string(z0) + "," +
                        std::to_string(z0 + td) + ") outside volume depth " +
                        std::to_string(v.depth));
    const StitchPlan plan = build_stitch_plan(v.height, v.width);
    const std::int64_t out_w = v.width / 4;
    std::vector<double> out(static_cast<std::size_t>((v.height / 4) * out_w), 0.0);
    GradPause pause;
    Rng rng(0);  // unused in eval mode
    for (const auto& t : plan.tiles) {
        Tensor x = gather_tile(v, z0, td, t.oy, t.ox, plan.tile);
        Tensor probs = sigmoid(network_forward(net, x, false, rng));
        auto src = probs.data();
        const std::int64_t tile_out = plan.tile / 4;
        for (std::int64_t y = t.ky0 / 4; y < t.ky1 / 4; ++y) {
            const std::int64_t ly = y - t.oy / 4;
            for (std::int64_t x2 = t.kx0 / 4; x2 < t.kx1 / 4; ++x2)
                out[y * out_w + x2] = src[ly * tile_out + (x2 - t.ox / 4)];
        }
    }
    return out;
}

std::vector<double> depth_activation_sweep(const FragmentVolume& v, Network& net,
                                           std::int64_t layer, std::int64_t oy, std::int64_t ox,
                                           std::int64_t& n_cols) {
    const std::int64_t td = net.cfg.depth;
    const std::int64_t tile = 256;
    if (layer < 0 || layer > 3) throw DataError("sweep: layer must be in 0..3");
    if (v.depth < td) throw DataError("sweep: volume shallower than the model depth window");
    if (oy < 0 || ox < 0 || oy + tile > v.height || ox + tile > v.width)
        throw DataError("sweep: region out of bounds");
    n_cols = v.depth - td + 1;
    std::vector<double> matrix(static_cast<std::size_t>(v.depth * n_cols), 0.0);
    for (std::int64_t z0 = 0; z0 < n_cols; ++z0) {
        Tensor x = gather_tile(v, z0, td, oy, ox, tile);
        Rng rng(0);
        ForwardProbe probe;
        Tensor y = network_forward(net, x, false, rng, &probe);
        sum(y).backward();
        const Tensor& act = probe.stage[static_cast<std::size_t>(layer)];
        if (act.rank() != 5) throw DataError("sweep: probed layer is not 3D");
        auto a = act.data();
        auto g = act.grad();
        const Shape& s = act.shape();
        const std::int64_t layer_d = s[1], plane = s[2] * s[3] * s[4];
        const std::int64_t expand = td / layer_d;
        for (std::int64_t d = 0; d < layer_d; ++d) {
            double acc = 0.0;
            for (std::int64_t i = d * plane; i < (d + 1) * plane; ++i)
                acc += (g[i] > 0.0 ? g[i] : 0.0) * a[i];
            const double rel = acc / static_cast<double>(plane);
            for (std::int64_t o = d * expand; o < (d + 1) * expand; ++o)
                matrix[(z0 + o) * n_cols + z0] = rel;
        }
    }
    ParamStore ps = collect_params(net);
    for (auto& e : ps.params) e.tensor.zero_grad();  // drop probe-only gradients
    return matrix;
}

std::string sweep_to_csv(const std::vector<double>& matrix, std::int64_t rows,
                         std::int64_t cols) {
    std::ostringstream os;
    os << "z";
    for (std::int64_t c = 0; c < cols; ++c) os << ",start_" << c;
    os << "\n";
    char buf[48];
    for (std::int64_t r = 0; r < rows; ++r) {
        os << r;
        for (std::int64_t c = 0; c < cols; ++c) {
            std::snprintf(buf, sizeof buf, "%.9g", matrix[r * cols + c]);
            os << "," << buf;
        }
        os << "\n";
    }
    return os.str();
}

}  // namespace vffc
