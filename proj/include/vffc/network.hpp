#pragma once

#include <array>
#include <string>
#include <vector>

#include "vffc/ffc.hpp"

namespace vffc {

// Encoder-decoder segmentation network. The encoder reduces depth by 8 and
// space by 32 (stem stride (2,4,4) plus stage strides (2,2,2), (2,2,2),
// (1,2,2)); the bottleneck runs at the deepest scale and is the only part
// whose kind varies (none | conv | sffc | stffc | vffc). The decoder collapses
// depth and upsamples 2D maps back to 1/4 resolution, emitting one logit
// channel.
struct NetworkConfig {
    std::string bottleneck = "vffc";
    std::vector<std::int64_t> widths{16, 32, 64, 128};
    std::vector<int> blocks{2, 2, 2, 2};
    double global_ratio = 0.5;
    double drop_path = 0.1;
    double channel_dropout_p = 0.5;
    std::int64_t depth = 16;     // training subvolume depth; fixes stffc folding
    std::uint64_t init_seed = 1;
};

std::string network_config_to_text(const NetworkConfig& cfg);
NetworkConfig network_config_from_text(const std::string& text);
// Returns false when the key is not a network key (value untouched).
bool apply_network_config_kv(NetworkConfig& cfg, std::string_view key, std::string_view value);

struct ConvResBlock {
    Conv3d a, b;  // stacked 3x3x3, bias-free
    BatchNorm bn;
    double drop_path_p = 0.0;
};

struct ConvBnLayer {
    Conv3d conv;
    BatchNorm bn;
};

struct Network {
    NetworkConfig cfg;
    Conv3d stem;
    BatchNorm stem_bn;
    std::array<std::vector<ConvResBlock>, 3> enc;  // stages 0..2
    std::array<ConvBnLayer, 3> down;               // entries into stages 1..3
    std::vector<ConvResBlock> bott_conv;           // bottleneck, kind == "conv"
    std::vector<FfcResBlock> bott_ffc;             // bottleneck, spectral kinds
    std::array<ConvBnLayer, 3> dec;                // upsampling decoder blocks
    ConvBnLayer refine;                            // final non-upsampling block
    Conv3d head;                                   // 1x1 conv2d with bias
};

Network make_network(const NetworkConfig& cfg);

// Optional view into the forward pass for attribution probes. `stage[s]`
// holds the output of encoder stage s (s = 0,1,2, at depth input/2,4,8 and
// spatial extent input/4,8,16) and `stage[3]` the bottleneck output (depth
// input/8, spatial input/32). `last_encoder` aliases stage[2].
struct ForwardProbe {
    Tensor last_encoder;
    std::array<Tensor, 4> stage;
};

// `rng` drives DropPath and ChannelDropout; it is only consumed in training
// mode, in a fixed traversal order.
Tensor network_forward(Network& net, const Tensor& x, bool training, Rng& rng,
                       ForwardProbe* probe = nullptr);

struct ParamEntry {
    std::string name;
    Tensor tensor;
};

// Learnable parameters and BN running buffers in a fixed, name-stable order.
struct ParamStore {
    std::vector<ParamEntry> params;
    std::vector<ParamEntry> buffers;
};

ParamStore collect_params(Network& net);
std::int64_t param_count(const ParamStore& store);

// Checkpoint container: magic "VFFCCKPT", u32 version, u64 payload length,
// payload (config text + named tensors), u64 FNV-1a digest of the payload.
void save_checkpoint(const std::string& path, Network& net);
Network load_checkpoint(const std::string& path);

}  // namespace vffc
