#include <cstring>
#include <filesystem>
#include <numbers>

#include "doctest.h"
#include "dualprompt/metrics/metrics.hpp"
#include "dualprompt/phantom/phantom.hpp"
#include "dualprompt/volume/io.hpp"

using namespace dualprompt;
namespace ph = dualprompt::phantom;

TEST_CASE("ellipsoid voxel count tracks the analytic volume within 10%") {
    const std::array<double, 3> r{9.0, 7.5, 8.0};
    Mask m = ph::render_shape({48, 48, 48}, ph::ShapeKind::Ellipsoid, {24, 24, 24}, r);
    const double analytic = 4.0 / 3.0 * std::numbers::pi * r[0] * r[1] * r[2];
    const double voxels = double(m.foreground_count());
    CHECK(voxels > 0.9 * analytic);
    CHECK(voxels < 1.1 * analytic);
}

TEST_CASE("cuboid voxel count is exact for integer half-widths") {
    Mask m = ph::render_shape({48, 48, 48}, ph::ShapeKind::Cuboid, {24, 24, 24}, {7, 3.5, 3});
    // per axis: voxels with |x - 24| <= h, i.e. 2*floor(h) + 1
    CHECK(m.foreground_count() == size_t(15 * 7 * 7));
}

TEST_CASE("case generation is deterministic") {
    ph::PhantomConfig cfg;
    ph::PhantomCase a = ph::generate_case(cfg, 3);
    ph::PhantomCase b = ph::generate_case(cfg, 3);
    REQUIRE(a.volumes.size() == b.volumes.size());
    for (size_t i = 0; i < a.volumes.size(); ++i)
        CHECK(std::memcmp(a.volumes[i].grid.data.data(), b.volumes[i].grid.data.data(),
                          a.volumes[i].grid.data.size() * sizeof(float)) == 0);
    CHECK(a.survival.time == b.survival.time);
    CHECK(a.lesion_fraction == b.lesion_fraction);
}

TEST_CASE("organ masks are pairwise disjoint and non-empty") {
    ph::PhantomConfig cfg;
    for (int idx : {0, 1}) {  // one abdomen, one thorax case
        ph::PhantomCase pc = ph::generate_case(cfg, idx);
        REQUIRE(pc.masks.size() == 4);
        std::vector<uint8_t> seen(pc.masks[0].grid.size(), 0);
        for (const auto& m : pc.masks) {
            CHECK(m.foreground_count() > 0);
            for (size_t i = 0; i < m.grid.data.size(); ++i)
                if (m.grid.data[i]) {
                    CHECK(seen[i] == 0);
                    seen[i] = 1;
                }
        }
    }
}

TEST_CASE("lesion fraction is positive and bounded by the host organ") {
    ph::PhantomConfig cfg;
    for (int idx = 0; idx < 6; ++idx) {
        ph::PhantomCase pc = ph::generate_case(cfg, idx);
        CHECK(pc.lesion_fraction > 0.0);
        CHECK(pc.lesion_fraction < 1.0);
    }
}

TEST_CASE("dataset splits follow the floor rule with at least one val case") {
    ph::PhantomConfig cfg;
    cfg.cases = 20;
    cfg.seed = 9;
    const std::string dir = (std::filesystem::temp_directory_path() / "dp_split_test").string();
    std::filesystem::remove_all(dir);
    data::Manifest man = ph::generate_dataset(cfg, dir);
    CHECK(man.split("train").size() == 15);
    CHECK(man.split("val").size() == 1);
    CHECK(man.split("test").size() == 4);

    // both regions must appear in train and test for the downstream studies
    for (const char* split : {"train", "test"}) {
        bool abd = false, tho = false;
        for (const auto* c : man.split(split)) {
            abd = abd || c->region == "abdomen";
            tho = tho || c->region == "thorax";
        }
        CHECK(abd);
        CHECK(tho);
    }

    // manifest round-trips through disk
    data::Manifest loaded = data::load_manifest(dir + "/manifest.json");
    REQUIRE(loaded.cases.size() == man.cases.size());
    CHECK(loaded.cases[0].id == man.cases[0].id);
    CHECK(loaded.cases[0].survival.time == man.cases[0].survival.time);
    CHECK(loaded.lesion_organ.at("abdomen") == "liver");

    // volumes referenced by the manifest load back with matching geometry
    const auto& c0 = loaded.cases[0];
    Volume v = load_volume(loaded.resolve(c0.volume_paths.at("ct")));
    CHECK(v.grid.dims == std::array<int, 3>{48, 48, 48});
    Mask m = load_mask(loaded.resolve(c0.mask_paths.begin()->second));
    CHECK(m.foreground_count() > 0);
    std::filesystem::remove_all(dir);
}

TEST_CASE("simulated survival carries imaging signal") {
    ph::PhantomConfig cfg;
    cfg.cases = 48;
    std::vector<double> lf, times;
    int events = 0;
    for (int i = 0; i < cfg.cases; ++i) {
        ph::PhantomCase pc = ph::generate_case(cfg, i);
        CHECK(pc.survival.time > 0.0);
        events += pc.survival.event;
        if (pc.survival.event) {
            lf.push_back(pc.lesion_fraction);
            times.push_back(pc.survival.time);
        }
    }
    // censoring should be present but not dominant
    CHECK(events >= cfg.cases / 2);
    CHECK(events < cfg.cases);
    // larger lesion burden means earlier events
    CHECK(spearman_rho(lf, times) < -0.2);
}
