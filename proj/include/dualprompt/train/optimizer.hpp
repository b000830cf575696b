#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "dualprompt/model/params.hpp"

namespace dualprompt::train {

// Adaptive-moment optimizer with decoupled weight decay. Moment buffers are
// keyed by parameter name and created on first use, so the same instance
// can drive any subset of a store's trainable entries.
class AdamW {
public:
    AdamW(float beta1 = 0.9f, float beta2 = 0.999f, float eps = 1e-8f,
          float weight_decay = 1e-5f)
        : b1_(beta1), b2_(beta2), eps_(eps), wd_(weight_decay) {}

    // One update over every named gradient; entries must exist and be
    // trainable. `lr` is the fully scheduled learning rate for this step.
    void step(model::ParamStore& ps,
              const std::unordered_map<std::string, std::vector<float>>& grads,
              double lr);

    int64_t steps_taken() const { return t_; }

private:
    struct Moments {
        std::vector<float> m, v;
    };
    std::unordered_map<std::string, Moments> state_;
    float b1_, b2_, eps_, wd_;
    int64_t t_ = 0;
};

}  // namespace dualprompt::train
