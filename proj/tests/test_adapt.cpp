#include <cmath>
#include <cstring>
#include <filesystem>

#include "doctest.h"

#include "dualprompt/adapt/lora.hpp"
#include "dualprompt/adapt/prognosis.hpp"
#include "dualprompt/model/checkpoint.hpp"
#include "dualprompt/model/forward.hpp"
#include "dualprompt/nn/tape.hpp"
#include "dualprompt/phantom/phantom.hpp"
#include "dualprompt/volume/io.hpp"

using namespace dualprompt;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    explicit TempDir(const char* name) : path(fs::temp_directory_path() / name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

model::BackboneConfig small_config() {
    model::BackboneConfig cfg;
    cfg.patch = 16;
    return cfg;
}

std::vector<float> random_patch(int edge, uint64_t seed) {
    std::vector<float> v(size_t(edge) * edge * edge);
    Rng rng(seed);
    for (auto& x : v) x = float(rng.normal());
    return v;
}

std::vector<float> head_output(const model::ParamStore& ps, const model::BackboneConfig& cfg,
                               const std::vector<float>& patch, const std::vector<float>& e1,
                               const std::vector<float>& e2, const model::LoraSpec* lora) {
    nn::Tape<float> t;
    model::TapeParams<float> tp(t, ps, false, lora);
    const auto fv = model::film_forward(tp, cfg, e1);
    const auto feats = model::backbone_forward(tp, cfg, patch, Modality::CT, &fv);
    const auto prob = model::head_forward(tp, cfg, feats, e2);
    const auto pv = t.val(prob);
    return {pv.begin(), pv.end()};
}

}  // namespace

TEST_CASE("interval edges split the observed times into equal-count bins") {
    std::vector<double> times{1, 2, 3, 4, 5, 6, 7, 8};
    const auto edges = adapt::equal_frequency_edges(times, 4);
    REQUIRE(edges.size() == 4);
    CHECK(edges[0] == doctest::Approx(2.75));
    CHECK(edges[1] == doctest::Approx(4.5));
    CHECK(edges[2] == doctest::Approx(6.25));
    CHECK(std::isinf(edges[3]));

    std::vector<int> counts(4, 0);
    for (double t : times) counts[adapt::bin_of(edges, t)]++;
    for (int c : counts) CHECK(c == 2);

    CHECK(adapt::bin_of(edges, 0.0) == 0);
    CHECK(adapt::bin_of(edges, 2.75) == 0);   // edges close their interval
    CHECK(adapt::bin_of(edges, 2.7501) == 1);
    CHECK(adapt::bin_of(edges, 1e12) == 3);

    CHECK_THROWS_AS(adapt::equal_frequency_edges({}, 4), std::invalid_argument);
    CHECK_THROWS_AS(adapt::equal_frequency_edges({1.0}, 1), std::invalid_argument);
}

TEST_CASE("adapter attachment: shapes, freezing and the trainable budget") {
    const auto cfg = small_config();
    model::ParamStore ps = model::build_backbone_params(cfg);
    const auto spec = adapt::default_lora_spec(cfg);
    const auto rep = adapt::apply_lora(ps, spec, 45);

    CHECK(rep.adapted.size() == spec.targets.size());
    for (const auto& prefix : spec.targets) {
        const auto& w = ps.at(prefix + ".w");
        const auto& a = ps.at(model::LoraSpec::a_name(prefix));
        const auto& b = ps.at(model::LoraSpec::b_name(prefix));
        REQUIRE(a.shape.size() == 2);
        REQUIRE(b.shape.size() == 2);
        CHECK(a.shape[0] == spec.rank);
        CHECK(a.shape[1] == w.shape[1]);
        CHECK(b.shape[0] == w.shape[0]);
        CHECK(b.shape[1] == spec.rank);
        CHECK(a.trainable);
        CHECK(b.trainable);
        for (float v : b.data) CHECK(v == 0.0f);  // zero start: no initial effect
        double nonzero = 0;
        for (float v : a.data) nonzero += std::abs(v);
        CHECK(nonzero > 0.0);
    }
    for (const auto& e : ps.entries())
        if (e.name.rfind("lora.", 0) != 0) CHECK(!e.trainable);

    // With the risk head attached, the trainable share stays below 5%.
    model::add_prognosis_params(ps, cfg, 8, 45);
    adapt::set_trainable_prefixes(ps, {"lora.", "prog."});
    const double frac = double(ps.trainable_count()) / double(ps.total_count());
    INFO("trainable fraction ", frac);
    CHECK(frac < 0.05);
    CHECK(frac > 0.0);
}

TEST_CASE("adapter attachment rejects unknown and repeated targets") {
    const auto cfg = small_config();
    model::ParamStore ps = model::build_backbone_params(cfg);
    model::LoraSpec bad;
    bad.targets = {"no.such.layer"};
    CHECK_THROWS_AS(adapt::apply_lora(ps, bad, 1), std::invalid_argument);

    const auto spec = adapt::default_lora_spec(cfg);
    adapt::apply_lora(ps, spec, 1);
    CHECK_THROWS_AS(adapt::apply_lora(ps, spec, 1), std::invalid_argument);
}

TEST_CASE("freshly attached adapters leave the forward pass bit-identical") {
    const auto cfg = small_config();
    const model::ParamStore base = model::build_backbone_params(cfg);
    model::ParamStore adapted = base;
    const auto spec = adapt::default_lora_spec(cfg);
    adapt::apply_lora(adapted, spec, 7);

    const TextEncoder enc(512, cfg.text_dim, 1);
    const auto patch = random_patch(cfg.patch, 2);
    const auto e1 = enc.encode("a computed tomography of abdomen").vector;
    const auto e2 = enc.encode("a computed tomography of liver").vector;

    const auto plain = head_output(base, cfg, patch, e1, e2, nullptr);
    const auto with_adapters = head_output(adapted, cfg, patch, e1, e2, &spec);
    REQUIRE(plain.size() == with_adapters.size());
    CHECK(std::memcmp(plain.data(), with_adapters.data(), plain.size() * sizeof(float)) == 0);

    // a non-zero up-projection changes the output (the modulation head feeds
    // the backbone additively, so the shift cannot be masked by a dead unit)
    for (auto& v : adapted.at(model::LoraSpec::b_name("film.head.down0")).data) v = 0.5f;
    const auto perturbed = head_output(adapted, cfg, patch, e1, e2, &spec);
    CHECK(std::memcmp(plain.data(), perturbed.data(), plain.size() * sizeof(float)) != 0);
}

TEST_CASE("strip_adapters restores exactly the base tensor set") {
    const auto cfg = small_config();
    const model::ParamStore base = model::build_backbone_params(cfg);
    const uint64_t fingerprint = model::params_checksum(base);

    model::ParamStore adapted = base;
    adapt::apply_lora(adapted, adapt::default_lora_spec(cfg), 7);
    const model::ParamStore stripped = adapt::strip_adapters(adapted);
    REQUIRE(stripped.entries().size() == base.entries().size());
    CHECK(model::params_checksum(stripped) == fingerprint);
}

TEST_CASE("risk fusion is the arithmetic mean") {
    CHECK(adapt::fuse_risks({1.0, 3.0}) == doctest::Approx(2.0));
    CHECK(adapt::fuse_risks({0.4}) == doctest::Approx(0.4));
    CHECK_THROWS_AS(adapt::fuse_risks({}), std::invalid_argument);
}

TEST_CASE("survival fine-tune: locality, determinism and calibrated outputs") {
    TempDir td("dp_prognosis_test");
    phantom::PhantomConfig pcfg;
    pcfg.cases = 8;
    pcfg.seed = 13;
    pcfg.dims = {24, 24, 24};
    const auto man = phantom::generate_dataset(pcfg, td.path.string());

    const auto cfg = small_config();
    model::Checkpoint base;
    base.kind = "segmentation";
    base.config = cfg;
    base.params = model::build_backbone_params(cfg);
    const TextEncoder enc(512, cfg.text_dim, 1);

    adapt::PrognosisConfig pc;
    pc.steps = 5;
    const auto m = adapt::finetune_prognosis(base, man, Modality::CT, enc, pc);

    CHECK(m.bin_edges.size() == size_t(pc.bins));
    CHECK(m.modality == Modality::CT);
    CHECK(m.base_checksum == model::params_checksum(base.params));

    // every base tensor is byte-identical; only adapters and head train
    for (const auto& e : base.params.entries()) {
        const auto& after = m.params.at(e.name);
        REQUIRE(after.data.size() == e.data.size());
        CHECK(std::memcmp(after.data.data(), e.data.data(), e.data.size() * sizeof(float)) == 0);
    }
    bool any_adapter_moved = false;
    for (const auto& e : m.params.entries())
        if (e.name.rfind("lora.", 0) == 0 || e.name.rfind("prog.", 0) == 0) {
            CHECK(e.trainable);
            for (float v : e.data)
                if (v != 0.0f) any_adapter_moved = true;
        }
    CHECK(any_adapter_moved);

    // prediction: a proper distribution over bins and a bounded score
    const auto& ce = *man.split("test").front();
    const Volume raw = load_volume(man.resolve(ce.volume_paths.at("ct")));
    const auto rp = adapt::predict_risk(m, enc, raw, ce.ehr);
    REQUIRE(rp.bin_probs.size() == size_t(pc.bins));
    double sum = 0.0;
    for (double p : rp.bin_probs) {
        CHECK(p >= 0.0);
        sum += p;
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-5));
    CHECK(rp.risk >= 0.0);
    CHECK(rp.risk <= double(pc.bins - 1));

    // determinism: the same fine-tune twice gives identical weights
    const auto m2 = adapt::finetune_prognosis(base, man, Modality::CT, enc, pc);
    for (const auto& e : m.params.entries()) {
        const auto& other = m2.params.at(e.name);
        CHECK(std::memcmp(e.data.data(), other.data.data(), e.data.size() * sizeof(float)) == 0);
    }
}

TEST_CASE("adapter checkpoints round-trip and reject foreign bases") {
    TempDir td("dp_adapter_ckpt_test");
    phantom::PhantomConfig pcfg;
    pcfg.cases = 6;
    pcfg.seed = 19;
    pcfg.dims = {24, 24, 24};
    const auto man = phantom::generate_dataset(pcfg, td.path.string());

    const auto cfg = small_config();
    model::Checkpoint base;
    base.kind = "segmentation";
    base.config = cfg;
    base.params = model::build_backbone_params(cfg);
    const TextEncoder enc(512, cfg.text_dim, 1);

    adapt::PrognosisConfig pc;
    pc.steps = 2;
    const auto m = adapt::finetune_prognosis(base, man, Modality::PET, enc, pc);

    const auto path = (td.path / "adapter.ckpt").string();
    model::save_checkpoint(path, adapt::to_adapter_checkpoint(m));
    const auto loaded = model::load_checkpoint(path);
    CHECK(loaded.kind == "adapter");

    const auto restored = adapt::from_adapter_checkpoint(loaded, base);
    CHECK(restored.modality == Modality::PET);
    CHECK(restored.bins == m.bins);
    REQUIRE(restored.bin_edges.size() == m.bin_edges.size());
    for (size_t i = 0; i + 1 < m.bin_edges.size(); ++i)
        CHECK(restored.bin_edges[i] == doctest::Approx(m.bin_edges[i]));
    CHECK(std::isinf(restored.bin_edges.back()));
    REQUIRE(restored.params.entries().size() == m.params.entries().size());
    for (const auto& e : m.params.entries()) {
        const auto& other = restored.params.at(e.name);
        CHECK(std::memcmp(e.data.data(), other.data.data(), e.data.size() * sizeof(float)) == 0);
    }

    // predictions through the restored model match the in-memory one
    const auto& ce = *man.split("test").front();
    const Volume raw = load_volume(man.resolve(ce.volume_paths.at("pet")));
    const auto r1 = adapt::predict_risk(m, enc, raw, ce.ehr);
    const auto r2 = adapt::predict_risk(restored, enc, raw, ce.ehr);
    CHECK(r1.risk == doctest::Approx(r2.risk).epsilon(1e-12));

    // a base with different weights is refused
    model::Checkpoint other_base = base;
    other_base.params.at("film.fc1.w").data[0] += 1e-3f;
    CHECK_THROWS_AS(adapt::from_adapter_checkpoint(loaded, other_base), FormatError);
}
