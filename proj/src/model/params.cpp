#include "dualprompt/model/params.hpp"

#include <cmath>
#include <stdexcept>

#include "dualprompt/core/rng.hpp"
#include "dualprompt/volume/volume.hpp"

namespace dualprompt::model {

ParamStore::Entry& ParamStore::add(const std::string& name, std::vector<int> shape,
                                   bool trainable) {
    if (index_.count(name)) throw std::invalid_argument("duplicate parameter: " + name);
    int64_t n = 1;
    for (int d : shape) {
        if (d < 1) throw std::invalid_argument("bad shape for parameter: " + name);
        n *= d;
    }
    Entry e;
    e.name = name;
    e.shape = std::move(shape);
    e.data.assign(static_cast<size_t>(n), 0.0f);
    e.trainable = trainable;
    index_[name] = entries_.size();
    entries_.push_back(std::move(e));
    return entries_.back();
}

ParamStore::Entry& ParamStore::at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("unknown parameter: " + name);
    return entries_[it->second];
}

const ParamStore::Entry& ParamStore::at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("unknown parameter: " + name);
    return entries_[it->second];
}

int64_t ParamStore::total_count() const {
    int64_t n = 0;
    for (const auto& e : entries_) n += static_cast<int64_t>(e.data.size());
    return n;
}

int64_t ParamStore::trainable_count() const {
    int64_t n = 0;
    for (const auto& e : entries_)
        if (e.trainable) n += static_cast<int64_t>(e.data.size());
    return n;
}

namespace {

Rng rng_for(uint64_t seed, const std::string& name) {
    return Rng(seed ^ fnv1a64(name));
}

void fill_normal(ParamStore::Entry& e, uint64_t seed, double std) {
    auto rng = rng_for(seed, e.name);
    for (float& v : e.data) v = static_cast<float>(rng.normal(0.0, std));
}

void fill_const(ParamStore::Entry& e, float v) {
    for (float& x : e.data) x = v;
}

// conv + norm parameter block shared by stems and resolution blocks
void add_conv_gn(ParamStore& ps, const BackboneConfig& cfg, const std::string& prefix,
                 int cin, int cout, int taps) {
    const double he = std::sqrt(2.0 / (double(cin) * taps));
    fill_normal(ps.add(prefix + ".conv.w", {cout, cin, taps}), cfg.init_seed, he);
    fill_const(ps.add(prefix + ".conv.b", {cout}), 0.0f);
    fill_const(ps.add(prefix + ".gn.g", {cout}), 1.0f);
    fill_const(ps.add(prefix + ".gn.b", {cout}), 0.0f);
}

void add_linear(ParamStore& ps, uint64_t seed, const std::string& prefix, int in, int out,
                double std) {
    fill_normal(ps.add(prefix + ".w", {out, in}), seed, std);
    fill_const(ps.add(prefix + ".b", {out}), 0.0f);
}

}  // namespace

std::vector<std::string> film_sites(const BackboneConfig& cfg) {
    std::vector<std::string> s;
    for (int l = 0; l < cfg.levels; ++l) s.push_back("down" + std::to_string(l));
    for (int l = cfg.levels - 2; l >= 0; --l) s.push_back("up" + std::to_string(l));
    return s;
}

int film_site_channels(const BackboneConfig& cfg, const std::string& site) {
    const int level = std::stoi(site.substr(site.find_first_of("0123456789")));
    return cfg.channels_at(level);
}

ParamStore build_backbone_params(const BackboneConfig& cfg) {
    cfg.validate();
    ParamStore ps;
    const uint64_t seed = cfg.init_seed;
    const int c0 = cfg.base_channels;

    // one intensity stem per imaging modality, all mapping 1 -> c0 channels
    for (Modality m : kAllModalities) {
        const std::string p = std::string("stem.") + to_string(m);
        add_conv_gn(ps, cfg, p + ".block1", 1, c0, 27);
        add_conv_gn(ps, cfg, p + ".block2", c0, c0, 27);
    }

    // encoder blocks and strided transitions
    for (int l = 0; l < cfg.levels; ++l) {
        const int c = cfg.channels_at(l);
        add_conv_gn(ps, cfg, "down" + std::to_string(l) + ".block1", c, c, 27);
        add_conv_gn(ps, cfg, "down" + std::to_string(l) + ".block2", c, c, 27);
        if (l + 1 < cfg.levels)
            add_conv_gn(ps, cfg, "transition" + std::to_string(l),
                        c, cfg.channels_at(l + 1), 8);
    }

    // decoder blocks; input is upsampled deep features joined with the skip
    for (int l = cfg.levels - 2; l >= 0; --l) {
        const int c = cfg.channels_at(l);
        const int cin = c + cfg.channels_at(l + 1);
        add_conv_gn(ps, cfg, "up" + std::to_string(l) + ".block1", cin, c, 27);
        add_conv_gn(ps, cfg, "up" + std::to_string(l) + ".block2", c, c, 27);
    }

    // modulation network: shared trunk over the context embedding, then one
    // scale/shift head per application site
    add_linear(ps, seed, "film.fc1", cfg.text_dim, cfg.film_hidden,
               std::sqrt(2.0 / cfg.text_dim));
    add_linear(ps, seed, "film.fc2", cfg.film_hidden, cfg.film_hidden,
               std::sqrt(2.0 / cfg.film_hidden));
    for (const auto& site : film_sites(cfg)) {
        const int c = film_site_channels(cfg, site);
        add_linear(ps, seed, "film.head." + site, cfg.film_hidden, 2 * c,
                   cfg.film_head_init_std);
    }

    // prediction-head generator: target embedding joined with pooled dense
    // features -> flattened pointwise-head parameters
    const int c_dense = cfg.dense_channels();
    add_linear(ps, seed, "pred.fc1", cfg.text_dim + c_dense, cfg.pred_hidden,
               std::sqrt(2.0 / (cfg.text_dim + c_dense)));
    add_linear(ps, seed, "pred.fc2", cfg.pred_hidden, cfg.pred_hidden,
               std::sqrt(2.0 / cfg.pred_hidden));
    add_linear(ps, seed, "pred.proj", cfg.pred_hidden, cfg.head_theta_count(), 0.05);
    // Give the generated head a usable default kernel: the bias of the
    // projection holds the text-independent part, so seed its weight blocks
    // at He scale and leave its bias blocks at zero.
    {
        auto& proj_b = ps.at("pred.proj.b");
        const int hc = cfg.head_channels, cd = cfg.base_channels;
        auto rng = rng_for(seed, "pred.proj.b.default");
        int off = 0;
        double he = std::sqrt(2.0 / cd);
        for (int i = 0; i < hc * cd; ++i) proj_b.data[off + i] = float(rng.normal(0.0, he));
        off += hc * cd + hc;
        he = std::sqrt(2.0 / hc);
        for (int i = 0; i < hc * hc; ++i) proj_b.data[off + i] = float(rng.normal(0.0, he));
        off += hc * hc + hc;
        for (int i = 0; i < hc; ++i) proj_b.data[off + i] = float(rng.normal(0.0, he));
    }
    return ps;
}

void add_prognosis_params(ParamStore& ps, const BackboneConfig& cfg, int bins,
                          uint64_t seed) {
    const int c_dense = cfg.dense_channels();
    const int hidden = 64;
    add_linear(ps, seed, "prog.fc1", c_dense, hidden, std::sqrt(2.0 / c_dense));
    add_linear(ps, seed, "prog.fc2", hidden, bins, std::sqrt(2.0 / hidden));
}

}  // namespace dualprompt::model
