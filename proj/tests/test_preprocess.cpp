#include <cmath>
#include <cstring>

#include "doctest.h"
#include "dualprompt/core/rng.hpp"
#include "dualprompt/volume/preprocess.hpp"

using namespace dualprompt;

namespace {

Volume make_volume(int nx, int ny, int nz, std::array<double, 3> spacing, Modality m = Modality::CT) {
    Volume v;
    v.grid = Grid3<float>(nx, ny, nz);
    v.spacing = spacing;
    v.modality = m;
    v.region = "abdomen";
    v.id = "t";
    return v;
}

}  // namespace

TEST_CASE("percentile interpolates between order statistics") {
    std::vector<float> vals;
    for (int i = 1; i <= 100; ++i) vals.push_back(float(i));
    // rank = p/100*(n-1): p=2 -> 1.98 -> 2.98, p=98 -> 97.02 -> 98.02
    CHECK(percentile(vals, 2.0) == doctest::Approx(2.98).epsilon(1e-12));
    CHECK(percentile(vals, 98.0) == doctest::Approx(98.02).epsilon(1e-12));
    CHECK(percentile(vals, 0.0) == doctest::Approx(1.0));
    CHECK(percentile(vals, 100.0) == doctest::Approx(100.0));
    CHECK(percentile({5.0f}, 50.0) == doctest::Approx(5.0));
}

TEST_CASE("resample dims follow round(n * old / target), floored at one") {
    Volume v = make_volume(30, 20, 10, {1.0, 1.5, 3.0});
    Volume r = resample_isotropic(v, {1.5, 1.5, 1.5});
    CHECK(r.grid.dims == std::array<int, 3>{20, 20, 20});
    CHECK(r.spacing == std::array<double, 3>{1.5, 1.5, 1.5});

    Volume tiny = make_volume(2, 2, 2, {1.0, 1.0, 1.0});
    Volume rt = resample_isotropic(tiny, {10.0, 10.0, 10.0});
    CHECK(rt.grid.dims == std::array<int, 3>{1, 1, 1});
}

TEST_CASE("identity resample reproduces the input bytes") {
    Rng rng(11);
    Volume v = make_volume(9, 7, 5, {1.5, 1.5, 1.5});
    for (auto& x : v.grid.data) x = float(rng.normal(0.0, 100.0));
    Volume r = resample_isotropic(v, {1.5, 1.5, 1.5});
    REQUIRE(r.grid.dims == v.grid.dims);
    CHECK(std::memcmp(r.grid.data.data(), v.grid.data.data(),
                      v.grid.data.size() * sizeof(float)) == 0);
}

TEST_CASE("resampling twice to the same spacing is shape-stable") {
    Rng rng(3);
    Volume v = make_volume(13, 9, 17, {0.7, 1.9, 1.1});
    for (auto& x : v.grid.data) x = float(rng.uniform(-50.0, 50.0));
    Volume once = resample_isotropic(v, {1.5, 1.5, 1.5});
    Volume twice = resample_isotropic(once, {1.5, 1.5, 1.5});
    CHECK(twice.grid.dims == once.grid.dims);
}

TEST_CASE("CT intensities clamp to the fixed window") {
    Volume v = make_volume(4, 1, 1, {1, 1, 1}, Modality::CT);
    v.grid.data = {-2000.0f, -990.0f, 499.5f, 3000.0f};
    Volume c = clip_intensities(v);
    CHECK(c.grid.data[0] == -990.0f);
    CHECK(c.grid.data[1] == -990.0f);
    CHECK(c.grid.data[2] == 499.5f);
    CHECK(c.grid.data[3] == 500.0f);
}

TEST_CASE("MR clips to its own 2nd and 98th percentile") {
    Volume v = make_volume(100, 1, 1, {1, 1, 1}, Modality::MR);
    for (int i = 0; i < 100; ++i) v.grid.data[i] = float(i + 1);
    Volume c = clip_intensities(v);
    float lo = 1e9f, hi = -1e9f;
    for (float x : c.grid.data) {
        lo = std::min(lo, x);
        hi = std::max(hi, x);
    }
    CHECK(lo == doctest::Approx(2.98));
    CHECK(hi == doctest::Approx(98.02));
}

TEST_CASE("z-normalization maps a two-value volume to unit deviations") {
    Volume v = make_volume(2, 1, 1, {1, 1, 1});
    v.grid.data = {0.0f, 2.0f};
    Volume z = znormalize(v);
    CHECK(z.grid.data[0] == doctest::Approx(-1.0).epsilon(1e-12));
    CHECK(z.grid.data[1] == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("constant volumes normalize to zero instead of dividing by zero") {
    Volume v = make_volume(3, 3, 3, {1, 1, 1});
    for (auto& x : v.grid.data) x = 42.0f;
    Volume z = znormalize(v);
    for (float x : z.grid.data) CHECK(x == 0.0f);
}

TEST_CASE("preprocess output has near-zero mean and unit variance") {
    Rng rng(5);
    Volume v = make_volume(12, 10, 8, {2.0, 1.0, 1.5}, Modality::MR);
    for (auto& x : v.grid.data) x = float(rng.uniform(0.0, 800.0));
    Volume p = preprocess(v);
    double mean = 0.0;
    for (float x : p.grid.data) mean += x;
    mean /= double(p.grid.size());
    double var = 0.0;
    for (float x : p.grid.data) var += (x - mean) * (x - mean);
    var /= double(p.grid.size());
    CHECK(std::abs(mean) < 1e-5);
    CHECK(var == doctest::Approx(1.0).epsilon(1e-3));
}
