#include "vffc/losses.hpp"

#include <stdexcept>

namespace vffc {

namespace {

void check_pair(const Tensor& p, const Tensor& g) {
    if (p.shape() != g.shape())
        throw std::invalid_argument("loss: prediction and target shapes differ: " +
                                    shape_str(p.shape()) + " vs " + shape_str(g.shape()));
}

}  // namespace

Tensor dice_loss(const Tensor& p, const Tensor& g, double eps) {
    check_pair(p, g);
    Tensor num = add(scale(sum(mul(p, g)), 2.0), Tensor::scalar(eps));
    Tensor den = add(add(sum(mul(p, p)), sum(mul(g, g))), Tensor::scalar(eps));
    return sub(Tensor::scalar(1.0), div(num, den));
}

Tensor wbce_loss(const Tensor& p, const Tensor& g, double w, bool verbatim) {
    check_pair(p, g);
    if (w <= 0.0) throw std::invalid_argument("wbce_loss: ink weight must be positive");
    Tensor pc = clamp(p, 1e-12, 1.0 - 1e-12);
    Tensor pos = mul(g, log(pc));
    Tensor neg = mul(sub(Tensor::full(g.shape(), 1.0), g),
                     log(sub(Tensor::full(pc.shape(), 1.0), pc)));
    Tensor inner = verbatim ? scale(add(pos, neg), w) : add(scale(pos, w), neg);
    return scale(mean(inner), -1.0);
}

LossMode loss_mode_from_name(const std::string& name) {
    if (name == "both") return LossMode::Both;
    if (name == "dice") return LossMode::Dice;
    if (name == "wbce") return LossMode::Wbce;
    throw std::invalid_argument("loss mode must be one of: both, dice, wbce (got '" + name +
                                "')");
}

std::string loss_mode_name(LossMode mode) {
    switch (mode) {
        case LossMode::Both: return "both";
        case LossMode::Dice: return "dice";
        case LossMode::Wbce: return "wbce";
    }
    return "both";
}

Tensor total_loss(const Tensor& p, const Tensor& g, double w, double eps, LossMode mode,
                  bool verbatim_wbce) {
    switch (mode) {
        case LossMode::Dice: return dice_loss(p, g, eps);
        case LossMode::Wbce: return wbce_loss(p, g, w, verbatim_wbce);
        case LossMode::Both:
            return add(dice_loss(p, g, eps), wbce_loss(p, g, w, verbatim_wbce));
    }
    throw std::invalid_argument("total_loss: bad mode");
}

}  // namespace vffc
