#pragma once

#include <cstdint>
#include <stdexcept>

#include "json.hpp"

namespace dualprompt::model {

// Static shape of the conditioned encoder-decoder. Channel width doubles per
// level; the deepest level's output is the dense feature used by the
// prediction head and the prognosis branch.
struct BackboneConfig {
    int levels = 3;
    int base_channels = 8;
    int patch = 32;       // cubic training patch edge, divisible by 2^(levels-1)
    int gn_groups = 4;
    int text_dim = 64;    // must match the text encoder output
    int film_hidden = 128; // width of the shared modulation trunk
    int pred_hidden = 128;
    int head_channels = 8;      // intermediate width of the generated head
    bool film_residual = true;  // scale acts as (1 + predicted offset)
    float film_head_init_std = 0.5f;
    uint64_t init_seed = 1;

    int channels_at(int level) const { return base_channels << level; }
    int dense_channels() const { return channels_at(levels - 1); }
    // flattened parameter count of the generated three-layer pointwise head:
    // kernel then biases per layer, layers in application order
    int head_theta_count() const {
        const int c = head_channels, cd = base_channels;  // head reads the decoder output
        return (cd * c + c) + (c * c + c) + (c + 1);
    }
    void validate() const {
        if (levels < 2) throw std::invalid_argument("config: need at least two levels");
        if (patch % (1 << (levels - 1)) != 0)
            throw std::invalid_argument("config: patch not divisible by the downsampling factor");
        if (base_channels % gn_groups != 0)
            throw std::invalid_argument("config: base channels not divisible by norm groups");
    }
};

struct TrainConfig {
    int epochs = 40;
    int steps_per_epoch = 16;
    int batch_size = 2;
    float lr_max = 2e-3f;
    float weight_decay = 1e-5f;
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    float adam_eps = 1e-8f;
    float fg_crop_fraction = 0.667f; // crops guaranteed to contain foreground
    float augment_prob = 0.5f;       // per-transform application probability
    uint64_t seed = 7;
};

void to_json(nlohmann::json& j, const BackboneConfig& c);
void from_json(const nlohmann::json& j, BackboneConfig& c);
void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

// Cosine decay from lr_max at step 0 to zero at total_steps.
double lr_at(double lr_max, int64_t step, int64_t total_steps);

}  // namespace dualprompt::model
