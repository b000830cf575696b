#include "dualprompt/model/config.hpp"

#include <cmath>
#include <numbers>

namespace dualprompt::model {

void to_json(nlohmann::json& j, const BackboneConfig& c) {
    j = nlohmann::json{{"levels", c.levels},
                       {"base_channels", c.base_channels},
                       {"patch", c.patch},
                       {"gn_groups", c.gn_groups},
                       {"text_dim", c.text_dim},
                       {"film_hidden", c.film_hidden},
                       {"pred_hidden", c.pred_hidden},
                       {"head_channels", c.head_channels},
                       {"film_residual", c.film_residual},
                       {"film_head_init_std", c.film_head_init_std},
                       {"init_seed", c.init_seed}};
}

void from_json(const nlohmann::json& j, BackboneConfig& c) {
    j.at("levels").get_to(c.levels);
    j.at("base_channels").get_to(c.base_channels);
    j.at("patch").get_to(c.patch);
    j.at("gn_groups").get_to(c.gn_groups);
    j.at("text_dim").get_to(c.text_dim);
    j.at("film_hidden").get_to(c.film_hidden);
    j.at("pred_hidden").get_to(c.pred_hidden);
    j.at("head_channels").get_to(c.head_channels);
    j.at("film_residual").get_to(c.film_residual);
    j.at("film_head_init_std").get_to(c.film_head_init_std);
    j.at("init_seed").get_to(c.init_seed);
    c.validate();
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
    j = nlohmann::json{{"epochs", c.epochs},
                       {"steps_per_epoch", c.steps_per_epoch},
                       {"batch_size", c.batch_size},
                       {"lr_max", c.lr_max},
                       {"weight_decay", c.weight_decay},
                       {"beta1", c.beta1},
                       {"beta2", c.beta2},
                       {"adam_eps", c.adam_eps},
                       {"fg_crop_fraction", c.fg_crop_fraction},
                       {"augment_prob", c.augment_prob},
                       {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
    j.at("epochs").get_to(c.epochs);
    j.at("steps_per_epoch").get_to(c.steps_per_epoch);
    j.at("batch_size").get_to(c.batch_size);
    j.at("lr_max").get_to(c.lr_max);
    j.at("weight_decay").get_to(c.weight_decay);
    j.at("beta1").get_to(c.beta1);
    j.at("beta2").get_to(c.beta2);
    j.at("adam_eps").get_to(c.adam_eps);
    j.at("fg_crop_fraction").get_to(c.fg_crop_fraction);
    j.at("augment_prob").get_to(c.augment_prob);
    j.at("seed").get_to(c.seed);
}

double lr_at(double lr_max, int64_t step, int64_t total_steps) {
    if (total_steps <= 0) throw std::invalid_argument("lr_at: total_steps must be positive");
    if (step < 0 || step > total_steps) throw std::invalid_argument("lr_at: step out of range");
    if (step == total_steps) return 0.0;  // exact endpoint, no cos() rounding
    if (step == 0) return lr_max;
    return 0.5 * lr_max * (1.0 + std::cos(std::numbers::pi * double(step) / double(total_steps)));
}

}  // namespace dualprompt::model
