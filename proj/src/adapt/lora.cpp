#include "dualprompt/adapt/lora.hpp"

#include <stdexcept>

#include "dualprompt/core/rng.hpp"

namespace dualprompt::adapt {

model::LoraSpec default_lora_spec(const model::BackboneConfig& cfg) {
    model::LoraSpec spec;
    spec.targets = {"film.fc1", "film.fc2"};
    for (const auto& site : model::film_sites(cfg)) spec.targets.push_back("film.head." + site);
    return spec;
}

LoraReport apply_lora(model::ParamStore& ps, const model::LoraSpec& spec, uint64_t seed) {
    if (spec.rank < 1) throw std::invalid_argument("apply_lora: rank must be >= 1");
    if (spec.targets.empty()) throw std::invalid_argument("apply_lora: no target layers");

    LoraReport rep;
    for (const auto& prefix : spec.targets) {
        const std::string wname = prefix + ".w";
        if (!ps.contains(wname))
            throw std::invalid_argument("apply_lora: no such linear layer: " + prefix);
        const auto& w = ps.at(wname);
        if (w.shape.size() != 2)
            throw std::invalid_argument("apply_lora: target is not a 2-D linear map: " + prefix);
        const std::string aname = model::LoraSpec::a_name(prefix);
        const std::string bname = model::LoraSpec::b_name(prefix);
        if (ps.contains(aname))
            throw std::invalid_argument("apply_lora: layer already adapted: " + prefix);

        const int out = w.shape[0], in = w.shape[1];
        auto& a = ps.add(aname, {spec.rank, in}, true);
        Rng rng(seed ^ fnv1a64(aname));
        for (float& v : a.data) v = static_cast<float>(rng.normal(0.0, 0.01));
        ps.add(bname, {out, spec.rank}, true);  // zero-initialised
        rep.adapted.push_back(prefix);
    }

    // Freeze everything that is not an adapter factor.
    for (auto& e : ps.entries())
        e.trainable = e.name.rfind("lora.", 0) == 0;

    rep.total = ps.total_count();
    for (const auto& e : ps.entries())
        if (e.trainable) rep.trainable += static_cast<int64_t>(e.data.size());
    rep.fraction = static_cast<double>(rep.trainable) / static_cast<double>(rep.total);
    return rep;
}

void set_trainable_prefixes(model::ParamStore& ps, const std::vector<std::string>& prefixes) {
    for (auto& e : ps.entries()) {
        bool on = false;
        for (const auto& p : prefixes)
            if (e.name.rfind(p, 0) == 0) {
                on = true;
                break;
            }
        e.trainable = on;
    }
}

model::ParamStore strip_adapters(const model::ParamStore& ps) {
    model::ParamStore out;
    for (const auto& e : ps.entries()) {
        if (e.name.rfind("lora.", 0) == 0) continue;
        auto& n = out.add(e.name, e.shape, e.trainable);
        n.data = e.data;
    }
    return out;
}

}  // namespace dualprompt::adapt
