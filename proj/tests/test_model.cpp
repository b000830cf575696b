#include <cmath>
#include <cstring>
#include <memory>
#include <string>
#include <vector>

#include "doctest.h"
#include "dualprompt/model/config.hpp"
#include "dualprompt/model/forward.hpp"
#include "dualprompt/model/params.hpp"
#include "dualprompt/nn/loss.hpp"
#include "dualprompt/text/encoder.hpp"
#include "gradcheck.hpp"
#include "json.hpp"

using namespace dualprompt;
using model::BackboneConfig;
using model::ParamStore;
using model::TapeParams;

namespace {

constexpr double kTol = 1e-3;

// smallest valid conditioned backbone: 4-cube patch, two levels, two channels
BackboneConfig tiny_config() {
    BackboneConfig c;
    c.levels = 2;
    c.base_channels = 2;
    c.patch = 4;
    c.gn_groups = 2;
    c.text_dim = 6;
    c.film_hidden = 5;
    c.pred_hidden = 7;
    c.head_channels = 3;
    return c;
}

std::vector<float> random_floats(size_t n, uint64_t seed, double lo = -1.0, double hi = 1.0) {
    Rng rng(seed);
    std::vector<float> v(n);
    for (auto& x : v) x = static_cast<float>(rng.uniform(lo, hi));
    return v;
}

template <class S>
bool bytes_equal(std::span<const S> a, std::span<const S> b) {
    return a.size() == b.size() &&
           std::memcmp(a.data(), b.data(), a.size() * sizeof(S)) == 0;
}

}  // namespace

TEST_CASE("parameter construction is deterministic and validated") {
    const BackboneConfig cfg;  // defaults
    const ParamStore a = model::build_backbone_params(cfg);
    const ParamStore b = model::build_backbone_params(cfg);
    REQUIRE(a.entries().size() == b.entries().size());
    for (size_t i = 0; i < a.entries().size(); ++i) {
        CHECK(a.entries()[i].name == b.entries()[i].name);
        CHECK(bytes_equal<float>(a.entries()[i].data, b.entries()[i].data));
    }

    BackboneConfig bad = cfg;
    bad.patch = 30;  // not divisible by 4
    CHECK_THROWS_AS(model::build_backbone_params(bad), std::invalid_argument);
    bad = cfg;
    bad.base_channels = 6;  // not divisible by gn_groups=4
    CHECK_THROWS_AS(model::build_backbone_params(bad), std::invalid_argument);
}

TEST_CASE("modulation sites and vector lengths follow the block widths") {
    const BackboneConfig cfg;  // 3 levels, base 8
    const auto sites = model::film_sites(cfg);
    REQUIRE(sites == std::vector<std::string>{"down0", "down1", "down2", "up1", "up0"});
    const std::vector<int> widths{8, 16, 32, 16, 8};
    for (size_t i = 0; i < sites.size(); ++i)
        CHECK(model::film_site_channels(cfg, sites[i]) == widths[i]);

    ParamStore ps = model::build_backbone_params(cfg);
    nn::Tape<float> t;
    TapeParams<float> tp(t, ps, false);
    const auto emb = random_floats(size_t(cfg.text_dim), 3);
    const auto fv = model::film_forward(tp, cfg, emb);
    for (size_t i = 0; i < sites.size(); ++i) {
        const auto& [gam, bet] = fv.by_site.at(sites[i]);
        CHECK(t.shape(gam).numel() == widths[i]);
        CHECK(t.shape(bet).numel() == widths[i]);
    }
    // projection head emits 2x width per site
    CHECK(ps.at("film.head.down2.w").shape == std::vector<int>{64, cfg.film_hidden});
}

TEST_CASE("zeroed projection heads emit zero scale offsets and shifts") {
    const BackboneConfig cfg = tiny_config();
    ParamStore ps = model::build_backbone_params(cfg);
    for (const auto& site : model::film_sites(cfg)) {
        auto& w = ps.at("film.head." + site + ".w").data;
        std::fill(w.begin(), w.end(), 0.0f);
    }
    nn::Tape<float> t;
    TapeParams<float> tp(t, ps, false);
    const auto fv = model::film_forward(tp, cfg, random_floats(size_t(cfg.text_dim), 4));
    for (const auto& [site, pair] : fv.by_site) {
        for (const float v : t.val(pair.first)) CHECK(v == 0.0f);
        for (const float v : t.val(pair.second)) CHECK(v == 0.0f);
    }
}

TEST_CASE("distinct context embeddings give distinct modulation vectors") {
    const BackboneConfig cfg = tiny_config();
    ParamStore ps = model::build_backbone_params(cfg);
    nn::Tape<float> t;
    TapeParams<float> tp(t, ps, false);
    const auto fa = model::film_forward(tp, cfg, random_floats(size_t(cfg.text_dim), 5));
    const auto fb = model::film_forward(tp, cfg, random_floats(size_t(cfg.text_dim), 6));
    bool any_diff = false;
    for (const auto& [site, pair] : fa.by_site)
        any_diff = any_diff ||
                   !bytes_equal<float>(t.val(pair.first), t.val(fb.by_site.at(site).first));
    CHECK(any_diff);
}

TEST_CASE("gradcheck: conditioned backbone end to end on a 4-cube") {
    const BackboneConfig cfg = tiny_config();
    ParamStore ps = model::build_backbone_params(cfg);

    const auto emb1 = random_floats(size_t(cfg.text_dim), 7);
    const auto emb2 = random_floats(size_t(cfg.text_dim), 8);
    const auto vox = random_floats(size_t(cfg.patch) * cfg.patch * cfg.patch, 9);
    Rng trng(10);
    auto target = std::make_shared<const std::vector<double>>([&] {
        std::vector<double> m(vox.size());
        for (auto& v : m) v = trng.bernoulli(0.4) ? 1.0 : 0.0;
        return m;
    }());

    auto f = [&](gradcheck::Tape& t, TapeParams<double>& tp) {
        const auto fv = model::film_forward(tp, cfg, emb1);
        const auto feats = model::backbone_forward(tp, cfg, vox, Modality::CT, &fv);
        const auto prob = model::head_forward(tp, cfg, feats, emb2);
        return nn::seg_loss(t, prob, target);
    };

    const std::vector<std::string> names{
        // context-conditioning perceptron and per-site projections
        "film.fc1.w", "film.fc1.b", "film.fc2.w", "film.head.down0.w",
        "film.head.down1.w", "film.head.up0.w", "film.head.up0.b",
        // modality stem
        "stem.ct.block1.conv.w", "stem.ct.block1.conv.b", "stem.ct.block2.conv.w",
        // encoder/decoder convolutions and norms
        "down0.block1.conv.w", "down0.block2.conv.w", "down1.block1.conv.w",
        "down1.block2.conv.w", "transition0.conv.w", "up0.block1.conv.w",
        "up0.block2.conv.w", "down0.block2.gn.g", "down0.block2.gn.b",
        "up0.block2.gn.g",
        // head generator
        "pred.fc1.w", "pred.fc2.w", "pred.proj.w", "pred.proj.b"};
    CHECK(gradcheck::check_params(ps, names, f, 16) < kTol);
}

TEST_CASE("gradcheck: generated head composition on a 2-cube") {
    BackboneConfig cfg = tiny_config();
    cfg.base_channels = 2;
    cfg.gn_groups = 2;
    ParamStore ps = model::build_backbone_params(cfg);

    const auto emb = random_floats(size_t(cfg.text_dim), 11);
    const auto dec = random_floats(size_t(cfg.base_channels) * 8, 12);
    const auto den = random_floats(size_t(cfg.dense_channels()), 13);
    Rng trng(14);
    auto target = std::make_shared<const std::vector<double>>([&] {
        std::vector<double> m(8);
        for (auto& v : m) v = trng.bernoulli(0.5) ? 1.0 : 0.0;
        return m;
    }());

    auto f = [&](gradcheck::Tape& t, TapeParams<double>& tp) {
        model::BackboneFeatures<double> feats;
        std::vector<double> dv(dec.begin(), dec.end()), sv(den.begin(), den.end());
        feats.decoder = t.leaf(nn::Shape::fmap(cfg.base_channels, 2, 2, 2), dv, false);
        feats.dense = t.leaf(nn::Shape::fmap(cfg.dense_channels(), 1, 1, 1), sv, false);
        const auto prob = model::head_forward(tp, cfg, feats, emb);
        return nn::seg_loss(t, prob, target);
    };
    const std::vector<std::string> names{"pred.fc1.w", "pred.fc1.b", "pred.fc2.w",
                                         "pred.fc2.b", "pred.proj.w", "pred.proj.b"};
    CHECK(gradcheck::check_params(ps, names, f, 40) < kTol);
}

TEST_CASE("identity modulation is bit-exact against the unconditioned pass") {
    BackboneConfig cfg;
    cfg.levels = 3;
    cfg.base_channels = 4;
    cfg.gn_groups = 2;
    cfg.patch = 8;
    ParamStore ps = model::build_backbone_params(cfg);
    for (const auto& site : model::film_sites(cfg)) {
        auto& w = ps.at("film.head." + site + ".w").data;
        auto& b = ps.at("film.head." + site + ".b").data;
        std::fill(w.begin(), w.end(), 0.0f);
        std::fill(b.begin(), b.end(), 0.0f);
    }
    const auto vox = random_floats(size_t(cfg.patch) * cfg.patch * cfg.patch, 15);
    const auto emb = random_floats(size_t(cfg.text_dim), 16);

    nn::Tape<float> t;
    TapeParams<float> tp(t, ps, false);
    const auto fv = model::film_forward(tp, cfg, emb);
    const auto with = model::backbone_forward(tp, cfg, vox, Modality::MR, &fv);
    const auto without = model::backbone_forward(tp, cfg, vox, Modality::MR, nullptr);
    REQUIRE(with.stages.size() == without.stages.size());
    for (size_t i = 0; i < with.stages.size(); ++i) {
        CHECK(with.stages[i].first == without.stages[i].first);
        CHECK(bytes_equal<float>(t.val(with.stages[i].second),
                                 t.val(without.stages[i].second)));
    }
    CHECK(bytes_equal<float>(t.val(with.decoder), t.val(without.decoder)));
    CHECK(bytes_equal<float>(t.val(with.dense), t.val(without.dense)));
}

TEST_CASE("non-zero modulation changes the activations") {
    const BackboneConfig cfg = tiny_config();
    const ParamStore ps = model::build_backbone_params(cfg);
    const auto vox = random_floats(size_t(cfg.patch) * cfg.patch * cfg.patch, 17);
    const auto emb = random_floats(size_t(cfg.text_dim), 18);
    nn::Tape<float> t;
    TapeParams<float> tp(t, ps, false);
    const auto fv = model::film_forward(tp, cfg, emb);
    const auto with = model::backbone_forward(tp, cfg, vox, Modality::CT, &fv);
    const auto without = model::backbone_forward(tp, cfg, vox, Modality::CT, nullptr);
    CHECK(!bytes_equal<float>(t.val(with.decoder), t.val(without.decoder)));
}

TEST_CASE("stems are isolated per modality") {
    const BackboneConfig cfg = tiny_config();
    ParamStore ps = model::build_backbone_params(cfg);
    const auto vox = random_floats(size_t(cfg.patch) * cfg.patch * cfg.patch, 19);
    const auto emb = random_floats(size_t(cfg.text_dim), 20);

    auto run = [&](Modality m) {
        nn::Tape<float> t;
        TapeParams<float> tp(t, ps, false);
        const auto fv = model::film_forward(tp, cfg, emb);
        const auto feats = model::backbone_forward(tp, cfg, vox, m, &fv);
        const auto v = t.val(feats.decoder);
        return std::vector<float>(v.begin(), v.end());
    };
    const auto mr_before = run(Modality::MR);
    const auto ct_before = run(Modality::CT);
    for (const auto* name : {"stem.ct.block1.conv.w", "stem.ct.block1.conv.b",
                             "stem.ct.block2.conv.w", "stem.ct.block2.conv.b",
                             "stem.ct.block1.gn.g", "stem.ct.block2.gn.g"}) {
        auto& d = ps.at(name).data;
        std::fill(d.begin(), d.end(), 0.0f);
    }
    const auto mr_after = run(Modality::MR);
    const auto ct_after = run(Modality::CT);
    CHECK(std::memcmp(mr_before.data(), mr_after.data(),
                      mr_before.size() * sizeof(float)) == 0);
    CHECK(std::memcmp(ct_before.data(), ct_after.data(),
                      ct_before.size() * sizeof(float)) != 0);
}

TEST_CASE("shape law holds across level and patch combinations") {
    for (const auto& [levels, patch] : std::vector<std::pair<int, int>>{
             {2, 4}, {2, 8}, {3, 8}, {3, 16}, {4, 16}}) {
        CAPTURE(levels);
        CAPTURE(patch);
        BackboneConfig cfg = tiny_config();
        cfg.levels = levels;
        cfg.patch = patch;
        cfg.validate();
        ParamStore ps = model::build_backbone_params(cfg);
        nn::Tape<float> t;
        TapeParams<float> tp(t, ps, false);
        const auto emb = random_floats(size_t(cfg.text_dim), 21);
        const auto vox = random_floats(size_t(patch) * patch * patch, 22);
        const auto fv = model::film_forward(tp, cfg, emb);
        const auto feats = model::backbone_forward(tp, cfg, vox, Modality::PET, &fv);
        const auto prob = model::head_forward(tp, cfg, feats, emb);

        for (const auto& [name, id] : feats.stages) {
            const int level = name == "stem" || name == "dense"
                                  ? (name == "stem" ? 0 : levels - 1)
                                  : name.back() - '0';
            const int side = patch >> level;
            const nn::Shape want = nn::Shape::fmap(cfg.channels_at(level), side, side, side);
            CHECK(t.shape(id) == want);
        }
        CHECK(t.shape(feats.decoder) ==
              nn::Shape::fmap(cfg.base_channels, patch, patch, patch));
        const int deep = patch >> (levels - 1);
        CHECK(t.shape(feats.dense) ==
              nn::Shape::fmap(cfg.dense_channels(), deep, deep, deep));
        CHECK(t.shape(prob) == nn::Shape::fmap(1, patch, patch, patch));
    }
}

TEST_CASE("generated head is pointwise: per-voxel oracle and shape identity") {
    BackboneConfig cfg = tiny_config();
    cfg.base_channels = 3;
    cfg.gn_groups = 3;
    cfg.head_channels = 4;
    ParamStore ps = model::build_backbone_params(cfg);

    const auto emb = random_floats(size_t(cfg.text_dim), 23);
    // non-cubic spatial extent proves no cross-voxel mixing is hidden anywhere
    const int dz = 1, dy = 2, dx = 3, sp = dz * dy * dx;
    const auto dec = random_floats(size_t(cfg.base_channels) * sp, 24);
    const auto den = random_floats(size_t(cfg.dense_channels()) * 8, 25);

    nn::Tape<double> t;
    TapeParams<double> tp(t, ps, false);
    model::BackboneFeatures<double> feats;
    std::vector<double> dv(dec.begin(), dec.end()), sv(den.begin(), den.end());
    feats.decoder = t.leaf(nn::Shape::fmap(cfg.base_channels, dz, dy, dx), dv, false);
    feats.dense = t.leaf(nn::Shape::fmap(cfg.dense_channels(), 2, 2, 2), sv, false);
    nn::Tape<double>::Id theta_id = nn::Tape<double>::kNone;
    const auto prob = model::head_forward(tp, cfg, feats, emb, &theta_id);

    CHECK(t.shape(prob) == nn::Shape::fmap(1, dz, dy, dx));
    const auto theta = t.val(theta_id);
    REQUIRE(static_cast<int>(theta.size()) == cfg.head_theta_count());

    // slice the flattened layout: kernel then biases, layers in order
    const int hc = cfg.head_channels, cd = cfg.base_channels;
    size_t off = 0;
    const auto* w1 = theta.data() + off; off += size_t(hc) * cd;
    const auto* b1 = theta.data() + off; off += size_t(hc);
    const auto* w2 = theta.data() + off; off += size_t(hc) * hc;
    const auto* b2 = theta.data() + off; off += size_t(hc);
    const auto* w3 = theta.data() + off; off += size_t(hc);
    const auto* b3 = theta.data() + off; off += 1;
    REQUIRE(off == theta.size());

    const auto out = t.val(prob);
    for (int s = 0; s < sp; ++s) {
        std::vector<double> h1(hc), h2(hc);
        for (int o = 0; o < hc; ++o) {
            double acc = b1[o];
            for (int i = 0; i < cd; ++i) acc += w1[size_t(o) * cd + i] * dv[size_t(i) * sp + s];
            h1[o] = std::max(0.0, acc);
        }
        for (int o = 0; o < hc; ++o) {
            double acc = b2[o];
            for (int i = 0; i < hc; ++i) acc += w2[size_t(o) * hc + i] * h1[i];
            h2[o] = std::max(0.0, acc);
        }
        double acc = b3[0];
        for (int i = 0; i < hc; ++i) acc += w3[i] * h2[i];
        const double want = 1.0 / (1.0 + std::exp(-acc));
        CHECK(out[s] == doctest::Approx(want).epsilon(1e-12));
    }
}

TEST_CASE("default head parameter arithmetic") {
    const BackboneConfig cfg;
    // 8->8 kernel + bias, 8->8 kernel + bias, 8->1 kernel + bias
    CHECK(cfg.head_theta_count() == 153);
    CHECK(cfg.dense_channels() == 32);
    CHECK(cfg.channels_at(0) == 8);
    CHECK(cfg.channels_at(2) == 32);
}

TEST_CASE("survival branch: zero weights give uniform bins") {
    const BackboneConfig cfg = tiny_config();
    ParamStore ps = model::build_backbone_params(cfg);
    model::add_prognosis_params(ps, cfg, 8, cfg.init_seed);
    for (const auto* name : {"prog.fc1.w", "prog.fc1.b", "prog.fc2.w", "prog.fc2.b"}) {
        auto& d = ps.at(name).data;
        std::fill(d.begin(), d.end(), 0.0f);
    }
    nn::Tape<float> t;
    TapeParams<float> tp(t, ps, false);
    model::BackboneFeatures<float> feats;
    const auto den = random_floats(size_t(cfg.dense_channels()) * 8, 26);
    std::vector<float> sv(den.begin(), den.end());
    feats.dense = t.leaf(nn::Shape::fmap(cfg.dense_channels(), 2, 2, 2), sv, false);
    const auto probs = t.val(t.softmax_vec(model::prognosis_logits(tp, feats)));
    REQUIRE(probs.size() == 8);
    double risk = 0.0;
    for (size_t b = 0; b < probs.size(); ++b) {
        CHECK(probs[b] == doctest::Approx(0.125).epsilon(1e-6));
        risk += double(b) * probs[b];
    }
    CHECK(risk == doctest::Approx(3.5).epsilon(1e-6));  // (B-1)/2
}

TEST_CASE("learning-rate schedule endpoints are exact") {
    CHECK(model::lr_at(2e-3, 0, 640) == 2e-3);
    CHECK(model::lr_at(2e-3, 640, 640) == 0.0);
    CHECK(model::lr_at(2e-3, 320, 640) == doctest::Approx(1e-3).epsilon(1e-12));
    double prev = model::lr_at(2e-3, 0, 97);
    for (int s = 1; s <= 97; ++s) {
        const double cur = model::lr_at(2e-3, s, 97);
        CHECK(cur <= prev);
        prev = cur;
    }
    CHECK_THROWS_AS(model::lr_at(2e-3, -1, 10), std::invalid_argument);
    CHECK_THROWS_AS(model::lr_at(2e-3, 11, 10), std::invalid_argument);
}

TEST_CASE("config serializes through JSON unchanged") {
    BackboneConfig cfg;
    cfg.levels = 4;
    cfg.patch = 16;
    cfg.film_residual = false;
    cfg.film_head_init_std = 0.25f;
    nlohmann::json j = cfg;
    const auto back = j.get<BackboneConfig>();
    CHECK(back.levels == 4);
    CHECK(back.patch == 16);
    CHECK(back.film_residual == false);
    CHECK(back.film_head_init_std == 0.25f);
    CHECK(back.film_hidden == cfg.film_hidden);

    model::TrainConfig tc;
    tc.epochs = 3;
    tc.seed = 99;
    nlohmann::json tj = tc;
    const auto tback = tj.get<model::TrainConfig>();
    CHECK(tback.epochs == 3);
    CHECK(tback.seed == 99);
    CHECK(tback.lr_max == tc.lr_max);
}
