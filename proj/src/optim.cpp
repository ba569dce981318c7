#include "vffc/optim.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

#include "vffc/errors.hpp"

namespace vffc {

AdamWState make_adamw_state(const ParamStore& params) {
    AdamWState st;
    st.m.reserve(params.params.size());
    st.v.reserve(params.params.size());
    for (const auto& e : params.params) {
        st.m.emplace_back(static_cast<std::size_t>(e.tensor.size()), 0.0);
        st.v.emplace_back(static_cast<std::size_t>(e.tensor.size()), 0.0);
    }
    return st;
}

void adamw_step(ParamStore& params, AdamWState& state, const AdamWHyper& hyper, double lr) {
    if (state.m.size() != params.params.size())
        throw std::invalid_argument("adamw_step: state does not match parameter store");
    state.step += 1;
    const double bc1 = 1.0 - std::pow(hyper.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(hyper.beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < params.params.size(); ++i) {
        auto& entry = params.params[i];
        if (!entry.tensor.has_grad())
            throw std::invalid_argument("adamw_step: parameter '" + entry.name +
                                        "' has no gradient");
        auto grad = entry.tensor.grad();
        auto theta = entry.tensor.mut_data();
        auto& m = state.m[i];
        auto& v = state.v[i];
        for (std::size_t j = 0; j < m.size(); ++j) {
            const double g = grad[j];
            if (!std::isfinite(g))
                throw NumericError("adamw_step: non-finite gradient in '" + entry.name + "'");
            theta[j] -= lr * hyper.weight_decay * theta[j];  // decoupled decay
            m[j] = hyper.beta1 * m[j] + (1.0 - hyper.beta1) * g;
            v[j] = hyper.beta2 * v[j] + (1.0 - hyper.beta2) * g * g;
            const double mhat = m[j] / bc1;
            const double vhat = v[j] / bc2;
            theta[j] -= lr * mhat / (std::sqrt(vhat) + hyper.eps);
        }
    }
}

double onecycle_lr(std::int64_t step, std::int64_t total_steps, double lr_max, double pct_start,
                   double div, double final_div) {
    if (total_steps < 1) throw std::invalid_argument("onecycle_lr: total_steps must be >= 1");
    if (step < 0 || step > total_steps)
        throw std::invalid_argument("onecycle_lr: step out of [0, total_steps]");
    const double warm = pct_start * static_cast<double>(total_steps);
    const double lr_start = lr_max / div;
    const double lr_final = lr_max / final_div;
    auto cosine = [](double from, double to, double t) {
        return to + (from - to) * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
    };
    if (static_cast<double>(step) <= warm) {
        const double t = warm > 0.0 ? static_cast<double>(step) / warm : 1.0;
        return cosine(lr_start, lr_max, t);
    }
    const double t = (static_cast<double>(step) - warm) /
                     (static_cast<double>(total_steps) - warm);
    return cosine(lr_max, lr_final, t);
}

}  // namespace vffc
