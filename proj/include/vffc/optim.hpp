#pragma once

#include <cstdint>
#include <vector>

#include "vffc/network.hpp"

namespace vffc {

struct AdamWHyper {
    double beta1 = 0.9;
    double beta2 = 0.95;
    double eps = 1e-8;
    double weight_decay = 0.01;
};

// First/second moment accumulators, one pair per parameter tensor.
struct AdamWState {
    std::vector<std::vector<double>> m, v;
    std::int64_t step = 0;
};

AdamWState make_adamw_state(const ParamStore& params);

// One decoupled-weight-decay Adam step over all learnable parameters; reads
// each tensor's accumulated gradient and updates data in place.
void adamw_step(ParamStore& params, AdamWState& state, const AdamWHyper& hyper, double lr);

// Cosine warmup from lr_max/div to lr_max over pct_start*total_steps, then
// cosine anneal to lr_max/final_div.
double onecycle_lr(std::int64_t step, std::int64_t total_steps, double lr_max = 0.003,
                   double pct_start = 0.3, double div = 25.0, double final_div = 1e4);

}  // namespace vffc
