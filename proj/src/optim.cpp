#include "mcae/optim.hpp"

#include <cmath>
#include <numbers>

namespace mcae {

void AdamW::step(ModelParams& params, const ModelParams& grads, Real lr, Real weight_decay,
                 std::array<bool, 3> groups) {
    ++t_;
    const Real bc1 = 1.0 - std::pow(beta1, static_cast<Real>(t_));
    const Real bc2 = 1.0 - std::pow(beta2, static_cast<Real>(t_));
    auto p = params.refs();
    auto g = grads.refs();
    auto m = m_.refs();
    auto v = v_.refs();
    for (Index i = 0; i < p.size(); ++i) {
        if (!p[i].trainable || !groups[static_cast<Index>(p[i].group)]) continue;
        auto& pv = p[i].tensor->values();
        const auto& gv = g[i].tensor->values();
        auto& mv = m[i].tensor->values();
        auto& vv = v[i].tensor->values();
        const Real decay = p[i].decays ? lr * weight_decay : 0.0;
        for (Index k = 0; k < pv.size(); ++k) {
            mv[k] = beta1 * mv[k] + (1 - beta1) * gv[k];
            vv[k] = beta2 * vv[k] + (1 - beta2) * gv[k] * gv[k];
            const Real update = (mv[k] / bc1) / (std::sqrt(vv[k] / bc2) + eps);
            pv[k] -= decay * pv[k] + lr * update;
        }
    }
}

Real learning_rate_at(Index step, Index warmup_steps, Index total_steps, Real base_lr) {
    if (step < warmup_steps)
        return base_lr * static_cast<Real>(step + 1) / static_cast<Real>(warmup_steps);
    if (total_steps <= warmup_steps) return base_lr;
    const Real progress = static_cast<Real>(step - warmup_steps) / static_cast<Real>(total_steps - warmup_steps);
    return base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * std::min(progress, 1.0)));
}

}  // namespace mcae
