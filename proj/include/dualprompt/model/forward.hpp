#pragma once

#include <span>
#include <type_traits>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "dualprompt/model/config.hpp"
#include "dualprompt/model/params.hpp"
#include "dualprompt/nn/ops3d.hpp"
#include "dualprompt/nn/tape.hpp"
#include "dualprompt/volume/volume.hpp"

namespace dualprompt::model {

// Low-rank adapter attached to selected linear layers. The base weight stays
// frozen; the effective weight is W + (alpha / rank) * B A.
struct LoraSpec {
    int rank = 4;
    float alpha = 8.0f;
    std::vector<std::string> targets;

    bool applies_to(const std::string& prefix) const {
        for (const auto& t : targets)
            if (t == prefix) return true;
        return false;
    }
    static std::string a_name(const std::string& prefix) { return "lora." + prefix + ".A"; }
    static std::string b_name(const std::string& prefix) { return "lora." + prefix + ".B"; }
};

// Bridges a ParamStore into a tape: lazily creates one leaf per tensor
// (widening float storage to S) and wires low-rank adapters into linear
// layers when present. Leaves require grad only for trainable entries.
template <class S>
class TapeParams {
public:
    using Id = typename nn::Tape<S>::Id;

    TapeParams(nn::Tape<S>& tape, const ParamStore& ps, bool with_grads,
               const LoraSpec* lora = nullptr)
        : tape_(&tape), ps_(&ps), with_grads_(with_grads), lora_(lora) {}

    nn::Tape<S>& tape() { return *tape_; }
    const ParamStore& store() const { return *ps_; }

    Id get(const std::string& name) {
        auto it = ids_.find(name);
        if (it != ids_.end()) return it->second;
        const auto& e = ps_->at(name);
        std::vector<S> vals(e.data.begin(), e.data.end());
        nn::Shape sh;
        if (e.shape.size() == 2)
            sh = nn::Shape::mat(e.shape[0], e.shape[1]);
        else
            sh = nn::Shape::vec(static_cast<int>(vals.size()));
        const Id id = tape_->leaf(sh, vals, with_grads_ && e.trainable);
        ids_.emplace(name, id);
        return id;
    }

    // y = W x + b for the named layer, with the adapter folded in when one
    // is registered for this prefix.
    Id linear_apply(const std::string& prefix, Id x) {
        Id w = get(prefix + ".w");
        if (lora_ && lora_->applies_to(prefix) && ps_->contains(LoraSpec::a_name(prefix))) {
            const Id a = get(LoraSpec::a_name(prefix));
            const Id b = get(LoraSpec::b_name(prefix));
            const Id delta = tape_->scale(tape_->matmul(b, a), S(lora_->alpha / lora_->rank));
            w = tape_->add(w, delta);
        }
        return tape_->linear(w, get(prefix + ".b"), x);
    }

    // Copy accumulated leaf gradients back out, keyed by parameter name.
    void export_grads(std::unordered_map<std::string, std::vector<float>>& out) const {
        for (const auto& [name, id] : ids_) {
            if (!tape_->node(id).rg) continue;
            const auto g = tape_->grad(id);
            auto& dst = out[name];
            dst.resize(g.size(), 0.0f);
            for (size_t i = 0; i < g.size(); ++i) dst[i] += static_cast<float>(g[i]);
        }
    }

    const std::unordered_map<std::string, Id>& leaf_ids() const { return ids_; }

private:
    nn::Tape<S>* tape_;
    const ParamStore* ps_;
    bool with_grads_;
    const LoraSpec* lora_;
    std::unordered_map<std::string, Id> ids_;
};

// Per-site scale/shift vectors computed from a context embedding.
template <class S>
struct FilmVectors {
    std::unordered_map<std::string, std::pair<typename nn::Tape<S>::Id,
                                              typename nn::Tape<S>::Id>> by_site;
};

template <class S>
FilmVectors<S> film_forward(TapeParams<S>& tp, const BackboneConfig& cfg,
                            std::span<const float> context_embedding) {
    using Id = typename nn::Tape<S>::Id;
    auto& t = tp.tape();
    if (static_cast<int>(context_embedding.size()) != cfg.text_dim)
        throw std::invalid_argument("film_forward: embedding dim mismatch");
    std::vector<S> ev(context_embedding.begin(), context_embedding.end());
    Id e = t.leaf(nn::Shape::vec(cfg.text_dim), ev, false);
    Id h = t.relu(tp.linear_apply("film.fc1", e));
    h = t.relu(tp.linear_apply("film.fc2", h));
    FilmVectors<S> out;
    for (const auto& site : film_sites(cfg)) {
        const int c = film_site_channels(cfg, site);
        const Id gb = tp.linear_apply("film.head." + site, h);
        out.by_site[site] = {t.slice_vec(gb, 0, c), t.slice_vec(gb, c, c)};
    }
    return out;
}

// Everything downstream consumers need from one backbone pass.
template <class S>
struct BackboneFeatures {
    typename nn::Tape<S>::Id decoder;  // full-resolution decoder output
    typename nn::Tape<S>::Id dense;    // deepest encoder output
    // named activations after each stage, for equivalence checks
    std::vector<std::pair<std::string, typename nn::Tape<S>::Id>> stages;
};

// Shared conv -> norm -> activation step. When `fv` has an entry for `site`
// the modulation is applied between the norm and the activation of the
// second conv, matching where conditioning enters each block. With
// `encoder_only` the decoder is skipped and `decoder` aliases `dense`; use it
// when only pooled deep features are consumed.
template <class S>
BackboneFeatures<S> backbone_forward(TapeParams<S>& tp, const BackboneConfig& cfg,
                                     std::span<const float> voxels,
                                     Modality mod,
                                     const std::type_identity_t<FilmVectors<S>>* fv,
                                     bool encoder_only = false) {
    using Id = typename nn::Tape<S>::Id;
    auto& t = tp.tape();
    const int p = cfg.patch;
    if (static_cast<int64_t>(voxels.size()) != int64_t(p) * p * p)
        throw std::invalid_argument("backbone_forward: voxel count != patch^3");

    auto conv_gn = [&](const std::string& prefix, Id x, int cout, int taps) {
        const Id w = tp.get(prefix + ".conv.w");
        const Id b = tp.get(prefix + ".conv.b");
        Id y = taps == 27 ? nn::conv3x3(t, x, w, b, cout) : nn::conv_down2(t, x, w, b, cout);
        return nn::group_norm(t, y, tp.get(prefix + ".gn.g"), tp.get(prefix + ".gn.b"),
                              cfg.gn_groups);
    };
    auto modulated_block = [&](const std::string& name, Id x, int c) {
        Id h = t.relu(conv_gn(name + ".block1", x, c, 27));
        Id h2 = conv_gn(name + ".block2", h, c, 27);
        if (fv) {
            const auto& [gam, bet] = fv->by_site.at(name);
            h2 = nn::film_modulate(t, h2, gam, bet, cfg.film_residual);
        }
        return t.relu(h2);
    };

    std::vector<S> vox(voxels.begin(), voxels.end());
    Id x = t.leaf(nn::Shape::fmap(1, p, p, p), vox, false);

    const std::string stem = std::string("stem.") + to_string(mod);
    x = t.relu(conv_gn(stem + ".block1", x, cfg.base_channels, 27));
    x = t.relu(conv_gn(stem + ".block2", x, cfg.base_channels, 27));

    BackboneFeatures<S> out;
    out.stages.emplace_back("stem", x);

    std::vector<Id> skips(cfg.levels);
    for (int l = 0; l < cfg.levels; ++l) {
        const std::string name = "down" + std::to_string(l);
        x = modulated_block(name, x, cfg.channels_at(l));
        out.stages.emplace_back(name, x);
        skips[l] = x;
        if (l + 1 < cfg.levels)
            x = t.relu(conv_gn("transition" + std::to_string(l), x, cfg.channels_at(l + 1), 8));
    }
    out.dense = x;
    out.stages.emplace_back("dense", x);

    if (encoder_only) {  // pooled-feature consumers skip the decoder entirely
        out.decoder = x;
        return out;
    }

    for (int l = cfg.levels - 2; l >= 0; --l) {
        const std::string name = "up" + std::to_string(l);
        x = nn::upsample_trilinear2(t, x);
        x = nn::concat_channels(t, x, skips[l]);
        x = modulated_block(name, x, cfg.channels_at(l));
        out.stages.emplace_back(name, x);
    }
    out.decoder = x;
    return out;
}

// Generates the pointwise head from the target embedding and the pooled
// dense feature, then applies it: two hidden pointwise convs with ReLU and a
// final single-channel pointwise conv with a sigmoid. `theta_out`, when
// given, receives the flattened generated parameters (kernel then biases,
// layers in application order).
template <class S>
typename nn::Tape<S>::Id head_forward(TapeParams<S>& tp, const BackboneConfig& cfg,
                                      const BackboneFeatures<S>& feats,
                                      std::span<const float> target_embedding,
                                      typename nn::Tape<S>::Id* theta_out = nullptr) {
    using Id = typename nn::Tape<S>::Id;
    auto& t = tp.tape();
    if (static_cast<int>(target_embedding.size()) != cfg.text_dim)
        throw std::invalid_argument("head_forward: embedding dim mismatch");

    std::vector<S> ev(target_embedding.begin(), target_embedding.end());
    const Id e = t.leaf(nn::Shape::vec(cfg.text_dim), ev, false);
    const Id pooled = nn::global_avg_pool(t, feats.dense);
    Id h = t.concat_vec(e, pooled);
    h = t.relu(tp.linear_apply("pred.fc1", h));
    h = tp.linear_apply("pred.fc2", h);
    const Id theta = tp.linear_apply("pred.proj", h);
    if (theta_out) *theta_out = theta;

    const int hc = cfg.head_channels;
    const int cd = t.shape(feats.decoder).channels();
    int off = 0;
    auto take = [&](int n) {
        const Id s = t.slice_vec(theta, off, n);
        off += n;
        return s;
    };
    const Id w1 = take(hc * cd), b1 = take(hc);
    const Id w2 = take(hc * hc), b2 = take(hc);
    const Id w3 = take(hc), b3 = take(1);

    Id y = t.relu(nn::conv1x1(t, feats.decoder, w1, b1, hc));
    y = t.relu(nn::conv1x1(t, y, w2, b2, hc));
    y = nn::conv1x1(t, y, w3, b3, 1);
    return t.sigmoid(y);
}

// Interval logits for the survival branch from the pooled dense feature.
template <class S>
typename nn::Tape<S>::Id prognosis_logits(TapeParams<S>& tp,
                                          const BackboneFeatures<S>& feats) {
    auto& t = tp.tape();
    auto h = t.relu(tp.linear_apply("prog.fc1", nn::global_avg_pool(t, feats.dense)));
    return tp.linear_apply("prog.fc2", h);
}

}  // namespace dualprompt::model
