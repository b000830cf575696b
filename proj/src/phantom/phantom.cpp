#include "dualprompt/phantom/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numbers>
#include <stdexcept>

#include "dualprompt/volume/io.hpp"
#include "dualprompt/volume/preprocess.hpp"

namespace dualprompt::phantom {

namespace {

// Canonical layout on a 48^3 grid; scaled linearly for other dims.
// extent = radii for ellipsoids, half-widths for cuboids.
struct OrganTemplate {
    const char* name;
    ShapeKind kind;
    std::array<double, 3> center;
    std::array<double, 3> extent;
};

constexpr double kCanonicalEdge = 48.0;

const std::vector<OrganTemplate>& organ_templates(const std::string& region) {
    static const std::vector<OrganTemplate> abdomen{
        {"liver", ShapeKind::Ellipsoid, {31, 20, 22}, {9.0, 7.5, 8.0}},
        {"spleen", ShapeKind::Ellipsoid, {10, 16, 18}, {5.5, 5.0, 5.5}},
        {"left_kidney", ShapeKind::Ellipsoid, {12, 34, 28}, {5.0, 5.5, 6.0}},
        {"pancreas", ShapeKind::Cuboid, {24, 38, 13}, {7.5, 4.5, 4.0}},
    };
    static const std::vector<OrganTemplate> thorax{
        {"left_lung", ShapeKind::Ellipsoid, {12, 16, 20}, {6.0, 8.0, 11.0}},
        {"right_lung", ShapeKind::Ellipsoid, {36, 16, 20}, {6.0, 8.0, 11.0}},
        {"heart", ShapeKind::Ellipsoid, {24, 36, 16}, {5.5, 6.0, 6.5}},
        {"spinal_cord", ShapeKind::Cuboid, {24, 38, 36}, {3.5, 3.5, 9.0}},
    };
    if (region == "abdomen") return abdomen;
    if (region == "thorax") return thorax;
    throw std::invalid_argument("unknown region: " + region);
}

// Intensity transfer per (region, modality): background plus one plateau per
// organ in roster order. Each modality owns a single plateau vocabulary
// shared by both regions; the regions assign organs to those plateaus
// through different permutations. A voxel's intensity therefore never
// identifies the organ on its own — the pairing is resolved by anatomical
// context, which is exactly the cue the context prompt supplies. CT values
// sit inside the fixed clip window; MR and PET ride above a low background.
struct IntensityDesign {
    float background;
    std::array<float, 4> organs;
    float noise_sd;
};

IntensityDesign design_for(const std::string& region, Modality m) {
    const bool abd = region == "abdomen";
    const auto assign = [&](std::array<float, 4> plateaus, std::array<int, 4> abd_perm,
                            std::array<int, 4> tho_perm) {
        const auto& perm = abd ? abd_perm : tho_perm;
        std::array<float, 4> out;
        for (int i = 0; i < 4; ++i) out[i] = plateaus[perm[i]];
        return out;
    };
    if (m == Modality::CT)
        return {-400.0f, assign({-80.0f, 80.0f, 220.0f, 350.0f}, {1, 2, 0, 3}, {3, 0, 2, 1}),
                25.0f};
    if (m == Modality::MR)
        return {100.0f, assign({450.0f, 680.0f, 910.0f, 1140.0f}, {2, 0, 3, 1}, {0, 2, 1, 3}),
                32.0f};
    // PET uptake
    return {0.05f, assign({1.5f, 2.5f, 3.5f, 4.5f}, {0, 1, 2, 3}, {1, 3, 0, 2}), 0.10f};
}

constexpr float kPetLesionValue = 8.0f;


bool any_overlap(const std::vector<Mask>& masks) {
    if (masks.empty()) return false;
    std::vector<uint8_t> seen(masks[0].grid.size(), 0);
    for (const auto& m : masks)
        for (size_t i = 0; i < m.grid.data.size(); ++i)
            if (m.grid.data[i]) {
                if (seen[i]) return true;
                seen[i] = 1;
            }
    return false;
}

// Organ mean must sit at least one standard deviation away from the
// background mean after standard preprocessing, in every modality.
void check_learnability(const PhantomCase& pc) {
    std::vector<uint8_t> any_fg(pc.volumes.front().grid.size(), 0);
    for (const auto& m : pc.masks)
        for (size_t i = 0; i < any_fg.size(); ++i)
            if (m.grid.data[i]) any_fg[i] = 1;

    for (const auto& v : pc.volumes) {
        const Volume p = preprocess(v);
        if (p.grid.size() != any_fg.size())
            throw std::runtime_error("learnability probe: resample changed voxel count");
        double bg_sum = 0.0;
        size_t bg_n = 0;
        for (size_t i = 0; i < any_fg.size(); ++i)
            if (!any_fg[i]) {
                bg_sum += p.grid.data[i];
                ++bg_n;
            }
        const double bg_mean = bg_sum / double(bg_n);
        for (const auto& m : pc.masks) {
            double s = 0.0;
            size_t n = 0;
            for (size_t i = 0; i < any_fg.size(); ++i)
                if (m.grid.data[i]) {
                    s += p.grid.data[i];
                    ++n;
                }
            if (n == 0)
                throw std::runtime_error("phantom organ rendered empty: " + m.organ +
                                         " in " + pc.id);
            const double contrast = std::abs(s / double(n) - bg_mean);
            if (contrast < 1.0)
                throw std::runtime_error("phantom not learnable: |organ-background| = " +
                                         std::to_string(contrast) + " < 1 for " + m.organ +
                                         " (" + to_string(v.modality) + ") in " + pc.id);
        }
    }
}

}  // namespace

Mask render_shape(const std::array<int, 3>& dims, ShapeKind kind,
                  const std::array<double, 3>& c, const std::array<double, 3>& e) {
    Mask m;
    m.grid = Grid3<uint8_t>(dims[0], dims[1], dims[2]);
    for (int z = 0; z < dims[2]; ++z)
        for (int y = 0; y < dims[1]; ++y)
            for (int x = 0; x < dims[0]; ++x) {
                bool inside;
                if (kind == ShapeKind::Ellipsoid) {
                    const double dx = (x - c[0]) / e[0], dy = (y - c[1]) / e[1],
                                 dz = (z - c[2]) / e[2];
                    inside = dx * dx + dy * dy + dz * dz <= 1.0;
                } else {
                    inside = std::abs(x - c[0]) <= e[0] && std::abs(y - c[1]) <= e[1] &&
                             std::abs(z - c[2]) <= e[2];
                }
                if (inside) m.grid.at(x, y, z) = 1;
            }
    return m;
}

const std::vector<std::string>& region_names() {
    static const std::vector<std::string> names{"abdomen", "thorax"};
    return names;
}

const std::vector<std::string>& region_organs(const std::string& region) {
    static std::map<std::string, std::vector<std::string>> cache = [] {
        std::map<std::string, std::vector<std::string>> m;
        for (const auto& r : region_names()) {
            std::vector<std::string> organs;
            for (const auto& t : organ_templates(r)) organs.push_back(t.name);
            m[r] = std::move(organs);
        }
        return m;
    }();
    auto it = cache.find(region);
    if (it == cache.end()) throw std::invalid_argument("unknown region: " + region);
    return it->second;
}

const std::string& lesion_organ(const std::string& region) {
    static const std::string liver = "liver", heart = "heart";
    if (region == "abdomen") return liver;
    if (region == "thorax") return heart;
    throw std::invalid_argument("unknown region: " + region);
}

PhantomCase generate_case(const PhantomConfig& cfg, int index) {
    if (index < 0 || index >= cfg.cases) throw std::invalid_argument("case index out of range");
    Rng rng(splitmix64(cfg.seed) ^ (0x9e3779b97f4a7c15ull * (uint64_t(index) + 1)));

    PhantomCase pc;
    {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "case_%04d", index);
        pc.id = buf;
    }
    pc.region = region_names()[index % region_names().size()];
    const auto& templates = organ_templates(pc.region);
    const std::array<int, 3>& dims = cfg.dims;
    const double sx = dims[0] / kCanonicalEdge, sy = dims[1] / kCanonicalEdge,
                 sz = dims[2] / kCanonicalEdge;

    // jittered geometry, re-drawn until all organs are pairwise disjoint
    for (int attempt = 0;; ++attempt) {
        pc.masks.clear();
        for (const auto& t : templates) {
            const std::array<double, 3> c{t.center[0] * sx + rng.uniform(-2.0, 2.0),
                                          t.center[1] * sy + rng.uniform(-2.0, 2.0),
                                          t.center[2] * sz + rng.uniform(-2.0, 2.0)};
            const double rs = rng.uniform(0.92, 1.08);
            const std::array<double, 3> e{t.extent[0] * sx * rs, t.extent[1] * sy * rs,
                                          t.extent[2] * sz * rs};
            Mask m = render_shape(dims, t.kind, c, e);
            m.organ = t.name;
            m.id = pc.id;
            pc.masks.push_back(std::move(m));
        }
        if (!any_overlap(pc.masks)) break;
        if (attempt == 19)
            throw std::runtime_error("phantom geometry would not settle for " + pc.id);
    }

    // functional lesion inside the host organ; its mask is the intersection
    const auto& host_name = lesion_organ(pc.region);
    size_t host_idx = 0;
    for (size_t i = 0; i < pc.masks.size(); ++i)
        if (pc.masks[i].organ == host_name) host_idx = i;
    const auto& host_tpl = templates[host_idx];
    const std::array<double, 3> lc{host_tpl.center[0] * sx + rng.uniform(-1.5, 1.5),
                                   host_tpl.center[1] * sy + rng.uniform(-1.5, 1.5),
                                   host_tpl.center[2] * sz + rng.uniform(-1.5, 1.5)};
    const double lr = rng.uniform(1.5, 4.2);
    Mask lesion = render_shape(dims, ShapeKind::Ellipsoid, lc, {lr, lr, lr});
    size_t lesion_vox = 0;
    for (size_t i = 0; i < lesion.grid.data.size(); ++i) {
        lesion.grid.data[i] = uint8_t(lesion.grid.data[i] & pc.masks[host_idx].grid.data[i]);
        lesion_vox += lesion.grid.data[i];
    }
    pc.lesion_fraction = double(lesion_vox) / double(pc.masks[host_idx].foreground_count());

    // demographic record and simulated outcome; the lesion burden dominates
    // the linear risk, so imaging carries real prognostic signal
    pc.ehr.sex = rng.bernoulli(0.5) ? "male" : "female";
    pc.ehr.age = int(40 + rng.uniform_index(41));
    pc.ehr.weight_kg = double(55 + rng.uniform_index(41));
    pc.ehr.smoking = rng.bernoulli(0.5);
    pc.ehr.alcohol = rng.bernoulli(0.4);
    pc.ehr.region = pc.region;
    const double risk = 10.0 * pc.lesion_fraction + 0.015 * (*pc.ehr.age - 60) +
                        (*pc.ehr.smoking ? 0.3 : 0.0) + (*pc.ehr.alcohol ? 0.2 : 0.0) +
                        0.004 * (*pc.ehr.weight_kg - 75.0) + rng.normal(0.0, 0.12);
    const double base_rate = 0.05;
    const double t_event = -std::log(1.0 - rng.uniform()) / (base_rate * std::exp(risk));
    const double t_censor = -std::log(1.0 - rng.uniform()) / (base_rate * 0.5);
    pc.survival.time = std::min(t_event, t_censor);
    pc.survival.event = t_event <= t_censor ? 1 : 0;

    // render each modality over the shared anatomy
    for (Modality mod : kAllModalities) {
        const IntensityDesign d = design_for(pc.region, mod);
        Volume v;
        v.grid = Grid3<float>(dims[0], dims[1], dims[2], d.background);
        v.spacing = cfg.spacing;
        v.modality = mod;
        v.region = pc.region;
        v.id = pc.id;
        for (size_t o = 0; o < pc.masks.size(); ++o) {
            const float val = d.organs[o];
            const auto& mg = pc.masks[o].grid.data;
            for (size_t i = 0; i < mg.size(); ++i)
                if (mg[i]) v.grid.data[i] = val;
        }
        if (mod == Modality::PET)
            for (size_t i = 0; i < lesion.grid.data.size(); ++i)
                if (lesion.grid.data[i]) v.grid.data[i] = kPetLesionValue;
        for (auto& x : v.grid.data) x += float(rng.normal(0.0, d.noise_sd));
        if (mod == Modality::MR) {
            // slowly varying multiplicative field, strongest mid-volume
            for (int z = 0; z < dims[2]; ++z)
                for (int y = 0; y < dims[1]; ++y)
                    for (int x = 0; x < dims[0]; ++x) {
                        const double b =
                            1.0 + 0.15 * std::sin(std::numbers::pi * x / (dims[0] - 1)) *
                                      std::sin(std::numbers::pi * y / (dims[1] - 1)) *
                                      std::sin(std::numbers::pi * z / (dims[2] - 1));
                        v.grid.at(x, y, z) = float(v.grid.at(x, y, z) * b);
                    }
        }
        if (mod == Modality::PET)
            for (auto& x : v.grid.data) x = std::max(0.0f, x);
        pc.volumes.push_back(std::move(v));
    }

    check_learnability(pc);
    return pc;
}

data::Manifest generate_dataset(const PhantomConfig& cfg, const std::string& out_dir) {
    if (cfg.cases < 3) throw std::invalid_argument("need at least 3 cases for splits");
    namespace fs = std::filesystem;

    data::Manifest man;
    man.spacing = cfg.spacing;
    for (const auto& r : region_names()) {
        man.regions[r] = region_organs(r);
        man.lesion_organ[r] = lesion_organ(r);
    }

    // Region-stratified split: shuffle ids within each region, re-interleave
    // to keep regions balanced, then cut train/val/test by count. Counts are
    // floor(train_frac*n) and max(1, floor(val_frac*n)).
    std::map<std::string, std::vector<int>> by_region;
    for (int i = 0; i < cfg.cases; ++i)
        by_region[region_names()[i % region_names().size()]].push_back(i);
    Rng split_rng(splitmix64(cfg.seed ^ fnv1a64("splits")));
    for (auto& [r, ids] : by_region) split_rng.shuffle(ids);
    std::vector<int> order;
    for (size_t k = 0; order.size() < size_t(cfg.cases); ++k)
        for (const auto& r : region_names()) {
            auto& ids = by_region[r];
            if (k < ids.size()) order.push_back(ids[k]);
        }
    const int n_train = int(cfg.train_frac * cfg.cases);
    const int n_val = std::max(1, int(cfg.val_frac * cfg.cases));
    if (n_train + n_val >= cfg.cases)
        throw std::invalid_argument("split fractions leave no test cases");
    std::vector<std::string> split_of(cfg.cases);
    for (int k = 0; k < cfg.cases; ++k)
        split_of[order[k]] = k < n_train ? "train" : (k < n_train + n_val ? "val" : "test");

    for (int i = 0; i < cfg.cases; ++i) {
        PhantomCase pc = generate_case(cfg, i);
        const std::string case_rel = "cases/" + pc.id;
        fs::create_directories(fs::path(out_dir) / case_rel);

        data::CaseEntry entry;
        entry.id = pc.id;
        entry.region = pc.region;
        entry.split = split_of[i];
        entry.lesion_fraction = pc.lesion_fraction;
        entry.ehr = pc.ehr;
        entry.survival = pc.survival;
        for (const auto& v : pc.volumes) {
            const std::string rel = case_rel + "/" + to_string(v.modality);
            save_volume(v, out_dir + "/" + rel);
            entry.volume_paths[to_string(v.modality)] = rel;
        }
        for (const auto& m : pc.masks) {
            const std::string rel = case_rel + "/mask_" + m.organ;
            save_mask(m, out_dir + "/" + rel);
            entry.mask_paths[m.organ] = rel;
        }
        man.cases.push_back(std::move(entry));
    }
    save_manifest(out_dir + "/manifest.json", man);
    man.root_dir = out_dir;
    return man;
}

}  // namespace dualprompt::phantom
