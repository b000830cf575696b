#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "doctest.h"

#include "dualprompt/infer/ablation.hpp"
#include "dualprompt/infer/features.hpp"
#include "dualprompt/infer/infer.hpp"
#include "dualprompt/model/forward.hpp"
#include "dualprompt/nn/tape.hpp"
#include "dualprompt/phantom/phantom.hpp"
#include "dualprompt/text/prompt.hpp"
#include "dualprompt/volume/preprocess.hpp"

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

data::Manifest small_cohort(const fs::path& dir, int cases = 6, uint64_t seed = 42) {
    phantom::PhantomConfig pc;
    pc.cases = cases;
    pc.seed = seed;
    pc.dims = {24, 24, 24};
    return phantom::generate_dataset(pc, dir.string());
}

Volume random_volume(int nx, int ny, int nz, uint64_t seed, Modality mod = Modality::CT) {
    Volume v;
    v.grid = Grid3<float>(nx, ny, nz);
    v.spacing = {1.5, 1.5, 1.5};
    v.modality = mod;
    Rng rng(seed);
    for (auto& x : v.grid.data) x = float(rng.normal());
    return v;
}

}  // namespace

TEST_CASE("sliding window over a patch-sized volume equals one direct forward") {
    const auto cfg = small_config();
    const auto ps = model::build_backbone_params(cfg);
    const TextEncoder enc(512, cfg.text_dim, 1);
    const Volume v = random_volume(cfg.patch, cfg.patch, cfg.patch, 5);
    const std::string t1 = make_prompt(Modality::CT, "abdomen", PromptKind::Context);
    const std::string t2 = make_prompt(Modality::CT, "liver", PromptKind::Target);

    const auto probs = infer::predict_probabilities(ps, cfg, enc, v, t1, {{"liver", t2}});
    const auto& windowed = probs.at("liver");

    nn::Tape<float> t;
    model::TapeParams<float> tp(t, ps, false);
    const auto fv = model::film_forward(tp, cfg, enc.encode(t1).vector);
    const auto feats = model::backbone_forward(tp, cfg, v.grid.data, v.modality, &fv);
    const auto prob = model::head_forward(tp, cfg, feats, enc.encode(t2).vector);
    const auto direct = t.val(prob);

    REQUIRE(windowed.grid.data.size() == direct.size());
    for (size_t i = 0; i < direct.size(); ++i)
        CHECK(windowed.grid.data[i] == doctest::Approx(direct[i]).epsilon(1e-7));
}

TEST_CASE("sliding window averages overlapping windows uniformly") {
    model::BackboneConfig cfg = small_config();
    cfg.patch = 8;
    const auto ps = model::build_backbone_params(cfg);
    const TextEncoder enc(512, cfg.text_dim, 1);
    const Volume v = random_volume(12, 8, 8, 6);
    const std::string t1 = make_prompt(Modality::CT, "abdomen", PromptKind::Context);
    const std::string t2 = make_prompt(Modality::CT, "liver", PromptKind::Target);

    const auto out = infer::predict_probabilities(ps, cfg, enc, v, t1, {{"liver", t2}}).at("liver");

    // Re-run the two windows (origins 0 and 4 along x) directly and average.
    auto window_prob = [&](int ox) {
        std::vector<float> patch(8 * 8 * 8, 0.0f);
        for (int z = 0; z < 8; ++z)
            for (int y = 0; y < 8; ++y)
                for (int x = 0; x < 8; ++x)
                    patch[size_t(x) + 8 * (y + size_t(8) * z)] = v.grid.at(ox + x, y, z);
        nn::Tape<float> t;
        model::TapeParams<float> tp(t, ps, false);
        const auto fv = model::film_forward(tp, cfg, enc.encode(t1).vector);
        const auto feats = model::backbone_forward(tp, cfg, patch, v.modality, &fv);
        const auto prob = model::head_forward(tp, cfg, feats, enc.encode(t2).vector);
        const auto pv = t.val(prob);
        return std::vector<float>(pv.begin(), pv.end());
    };
    const auto w0 = window_prob(0), w4 = window_prob(4);

    for (int z = 0; z < 8; ++z)
        for (int y = 0; y < 8; ++y)
            for (int x = 0; x < 12; ++x) {
                double expect = 0.0;
                int n = 0;
                if (x < 8) {
                    expect += w0[size_t(x) + 8 * (y + size_t(8) * z)];
                    ++n;
                }
                if (x >= 4) {
                    expect += w4[size_t(x - 4) + 8 * (y + size_t(8) * z)];
                    ++n;
                }
                expect /= n;
                CHECK(out.grid.at(x, y, z) == doctest::Approx(expect).epsilon(1e-6));
            }
}

TEST_CASE("volumes smaller than the patch are padded and cropped back") {
    model::BackboneConfig cfg = small_config();
    cfg.patch = 8;
    const auto ps = model::build_backbone_params(cfg);
    const TextEncoder enc(512, cfg.text_dim, 1);
    const Volume v = random_volume(5, 6, 7, 8);
    const auto out = infer::predict_probabilities(
        ps, cfg, enc, v, "a computed tomography of abdomen",
        {{"x", "a computed tomography of liver"}});
    const auto& prob = out.at("x");
    CHECK(prob.grid.dims == v.grid.dims);
    for (float p : prob.grid.data) {
        CHECK(p >= 0.0f);
        CHECK(p <= 1.0f);
    }
}

TEST_CASE("threshold_mask binarizes at one half") {
    Volume prob;
    prob.grid = Grid3<float>(2, 1, 1);
    prob.grid.data = {0.5f, 0.500001f};
    prob.id = "c1";
    const Mask m = infer::threshold_mask(prob, "liver");
    CHECK(m.grid.data[0] == 0);  // exactly 0.5 is background
    CHECK(m.grid.data[1] == 1);
    CHECK(m.organ == "liver");
    CHECK(m.id == "c1");
}

TEST_CASE("evaluate_split covers every case, modality and organ") {
    TempDir td("dp_eval_split_test");
    const auto man = small_cohort(td.path);
    const auto cfg = small_config();
    const auto ps = model::build_backbone_params(cfg);
    const TextEncoder enc(512, cfg.text_dim, 1);

    const auto ev = infer::evaluate_split(ps, cfg, enc, man, "train");
    const auto cases = man.split("train");
    size_t expected = 0;
    for (const auto* ce : cases) expected += 3 * man.regions.at(ce->region).size();
    CHECK(ev.rows.size() == expected);

    // macro mean: average the per-organ means
    double macro = 0.0;
    for (const auto& [organ, mean] : ev.per_organ_mean) {
        double sum = 0.0;
        int n = 0;
        for (const auto& r : ev.rows)
            if (r.organ == organ) {
                sum += r.dsc;
                ++n;
            }
        CHECK(mean == doctest::Approx(sum / n));
        macro += mean;
    }
    CHECK(ev.mean_dsc == doctest::Approx(macro / ev.per_organ_mean.size()));
}

TEST_CASE("prompt mismatch policies rewrite the advertised prompt") {
    const auto correct = infer::PromptPolicy::correct();
    CHECK(correct.context(Modality::MR, "thorax") == "a magnetic resonance of thorax");
    CHECK(correct.target(Modality::PET, "heart") == "a positron emission tomography of heart");

    CHECK(infer::next_modality(Modality::CT) == Modality::MR);
    CHECK(infer::next_modality(Modality::MR) == Modality::PET);
    CHECK(infer::next_modality(Modality::PET) == Modality::CT);
}

TEST_CASE("next_region cycles through the manifest regions") {
    data::Manifest man;
    man.regions["abdomen"] = {"liver"};
    man.regions["thorax"] = {"heart"};
    CHECK(infer::next_region(man, "abdomen") == "thorax");
    CHECK(infer::next_region(man, "thorax") == "abdomen");
    CHECK_THROWS_AS(infer::next_region(man, "pelvis"), std::invalid_argument);
}

TEST_CASE("ablation produces every condition with finite scores") {
    TempDir td("dp_ablate_test");
    const auto man = small_cohort(td.path);
    const auto cfg = small_config();
    const auto ps = model::build_backbone_params(cfg);
    const TextEncoder enc(512, cfg.text_dim, 1);

    const auto rows = infer::run_ablation(ps, cfg, enc, man, "test");
    const auto& want = infer::ablation_conditions();
    REQUIRE(rows.size() == want.size());
    for (size_t i = 0; i < rows.size(); ++i) {
        CHECK(rows[i].condition == want[i]);
        CHECK(std::isfinite(rows[i].mean_dsc));
        CHECK(rows[i].mean_dsc >= 0.0);
        CHECK(rows[i].mean_dsc <= 1.0);
    }
    const auto& control = rows.back();
    CHECK(control.condition == "organ_control");
    CHECK(control.prompted_dsc >= 0.0);
    CHECK(control.unprompted_overlap >= 0.0);
}

TEST_CASE("feature export: row inventory, target invariance and CSV shape") {
    TempDir td("dp_features_test");
    const auto man = small_cohort(td.path);
    const auto cfg = small_config();
    const auto ps = model::build_backbone_params(cfg);
    const TextEncoder enc(512, cfg.text_dim, 1);

    const auto rep = infer::export_features(ps, cfg, enc, man, "train");
    const auto cases = man.split("train");
    size_t expect_a = 0, expect_b = 0;
    for (const auto* ce : cases) {
        expect_a += 3;
        expect_b += 3 * man.regions.at(ce->region).size();
    }
    size_t got_a = 0, got_b = 0;
    for (const auto& r : rep.rows) (r.set == "A" ? got_a : got_b) += 1;
    CHECK(got_a == expect_a);
    CHECK(got_b == expect_b);

    // identical pooled feature for every target prompt of one study: the
    // deep feature depends on the context prompt only
    for (const auto& a : rep.rows) {
        if (a.set != "B") continue;
        for (const auto& b : rep.rows) {
            if (b.set != "B" || a.case_id != b.case_id || a.modality != b.modality) continue;
            CHECK(std::memcmp(a.pooled.data(), b.pooled.data(),
                              a.pooled.size() * sizeof(float)) == 0);
        }
    }

    for (const auto& r : rep.rows) {
        CHECK(r.pooled.size() == size_t(cfg.dense_channels()));
        CHECK(std::isfinite(r.projection[0]));
        CHECK(std::isfinite(r.projection[1]));
    }
    CHECK(rep.within_t1 >= 0.0);
    CHECK(rep.between_t1 >= 0.0);

    const auto csv = (td.path / "f.csv").string();
    infer::write_features_csv(csv, rep);
    std::ifstream in(csv);
    REQUIRE(in.good());
    std::string line;
    size_t lines = 0;
    while (std::getline(in, line)) ++lines;
    CHECK(lines == rep.rows.size() + 1);
}

TEST_CASE("resample_to_dims lands exactly on the requested grid") {
    const Volume v = random_volume(24, 20, 16, 3);
    const Volume r = resample_to_dims(v, {16, 16, 16});
    CHECK(r.grid.dims == std::array<int, 3>{16, 16, 16});
    // physical extent is preserved
    for (int a = 0; a < 3; ++a)
        CHECK(r.spacing[a] * r.grid.dims[a] ==
              doctest::Approx(v.spacing[a] * v.grid.dims[a]).epsilon(1e-9));
    // identity resize is bit-exact
    const Volume same = resample_to_dims(v, v.grid.dims);
    CHECK(std::memcmp(same.grid.data.data(), v.grid.data.data(),
                      v.grid.data.size() * sizeof(float)) == 0);
}
