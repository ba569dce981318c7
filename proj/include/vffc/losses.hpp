#pragma once

#include <string>

#include "vffc/tensor.hpp"

namespace vffc {

// 1 - DiceCoefficient, with coefficient (2*sum(p*g)+eps)/(sum(p^2)+sum(g^2)+eps).
Tensor dice_loss(const Tensor& p, const Tensor& g, double eps = 1e-6);

// Positive-class-weighted BCE: -(1/N) sum [w*g*log(p) + (1-g)*log(1-p)], with
// p clamped to [1e-12, 1-1e-12]. `verbatim` instead multiplies both terms by
// w (a pure rescale, kept for comparison).
Tensor wbce_loss(const Tensor& p, const Tensor& g, double w, bool verbatim = false);

enum class LossMode { Both, Dice, Wbce };
LossMode loss_mode_from_name(const std::string& name);
std::string loss_mode_name(LossMode mode);

Tensor total_loss(const Tensor& p, const Tensor& g, double w, double eps = 1e-6,
                  LossMode mode = LossMode::Both, bool verbatim_wbce = false);

}  // namespace vffc
