#pragma once

#include <array>

#include "mcae/model.hpp"

namespace mcae {

// Adam with decoupled weight decay. Moments mirror the parameter layout.
class AdamW {
public:
    static constexpr Real beta1 = 0.9;
    static constexpr Real beta2 = 0.95;
    static constexpr Real eps = 1e-8;

    AdamW() = default;
    explicit AdamW(const ModelParams& like) : m_(like.zeros_like()), v_(like.zeros_like()) {}

    // Updates trainable tensors whose group is enabled in `groups`
    // (indexed by ParamGroup). Weight decay applies to linear weights only.
    void step(ModelParams& params, const ModelParams& grads, Real lr, Real weight_decay,
              std::array<bool, 3> groups);

    Index steps() const { return t_; }

private:
    ModelParams m_;
    ModelParams v_;
    Index t_ = 0;
};

// Linear warmup over `warmup_steps`, then cosine decay to zero at `total_steps`.
Real learning_rate_at(Index step, Index warmup_steps, Index total_steps, Real base_lr);

}  // namespace mcae
