#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vffc/losses.hpp"
#include "vffc/network.hpp"
#include "vffc/synth.hpp"
#include "vffc/volume_io.hpp"

namespace vffc {

// Full training configuration, addressable as "key = value" lines (network
// keys included). The network depth always follows the subvolume depth.
struct TrainConfig {
    NetworkConfig net;
    std::int64_t sub_d = 16, sub_h = 256, sub_w = 256;
    std::int64_t cell_d = 32, cell_h = 512, cell_w = 512;
    std::int64_t stride = 64;
    double lr_max = 0.003, pct_start = 0.3, lr_div = 25.0, lr_final_div = 1e4;
    double beta1 = 0.9, beta2 = 0.95, weight_decay = 0.01, adam_eps = 1e-8;
    std::int64_t batch_size = 4;
    std::int64_t epochs = 20;
    std::uint64_t seed = 1;
    double ink_weight = 1.0;
    LossMode loss = LossMode::Both;
    bool wbce_verbatim = false;
    double dice_eps = 1e-6;
    bool dihedral = true;
    bool random_crop = true;
    double threshold = 0.5;
    std::int64_t val_depth_offset = -1;  // -1 = centered window
    std::int64_t val_every = 1;
};

TrainConfig train_config_from_text(const std::string& text);
std::string train_config_to_text(const TrainConfig& cfg);

struct TrainDataset {
    std::vector<FragmentVolume> volumes;
    std::vector<InkMask> masks;
};

struct TrainResult {
    double best_fbeta = -1.0;
    std::int64_t best_epoch = -1;
    std::string ckpt_path;
    std::string log_path;
};

// Deterministic given cfg.seed: per-sample rng streams derive from
// (seed, epoch, position), so logs and checkpoints are bit-identical across
// runs. Writes out_dir/train_log.csv and the best-by-F_beta checkpoint
// out_dir/best.ckpt (the untrained network when epochs = 0).
TrainResult train(const TrainConfig& cfg, const TrainDataset& train_data,
                  const TrainDataset& val_data, const std::string& out_dir);

}  // namespace vffc
