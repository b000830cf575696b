#include "dualprompt/train/optimizer.hpp"

#include <cmath>
#include <stdexcept>

namespace dualprompt::train {

void AdamW::step(model::ParamStore& ps,
                 const std::unordered_map<std::string, std::vector<float>>& grads,
                 double lr) {
    ++t_;
    const double bias1 = 1.0 - std::pow(double(b1_), double(t_));
    const double bias2 = 1.0 - std::pow(double(b2_), double(t_));
    for (const auto& [name, g] : grads) {
        auto& e = ps.at(name);
        if (!e.trainable) throw std::invalid_argument("optimizer step on frozen parameter: " + name);
        if (g.size() != e.data.size())
            throw std::invalid_argument("gradient size mismatch for parameter: " + name);
        auto& mom = state_[name];
        if (mom.m.empty()) {
            mom.m.assign(g.size(), 0.0f);
            mom.v.assign(g.size(), 0.0f);
        }
        for (size_t i = 0; i < g.size(); ++i) {
            const double gi = g[i];
            const double m = double(b1_) * mom.m[i] + (1.0 - double(b1_)) * gi;
            const double v = double(b2_) * mom.v[i] + (1.0 - double(b2_)) * gi * gi;
            mom.m[i] = float(m);
            mom.v[i] = float(v);
            const double update = (m / bias1) / (std::sqrt(v / bias2) + double(eps_));
            e.data[i] = float(double(e.data[i]) - lr * (update + double(wd_) * e.data[i]));
        }
    }
}

}  // namespace dualprompt::train
