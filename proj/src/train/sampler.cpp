#include "dualprompt/train/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "dualprompt/text/prompt.hpp"
#include "dualprompt/volume/io.hpp"
#include "dualprompt/volume/preprocess.hpp"

namespace dualprompt::train {

std::vector<CachedCase> load_cached_split(const data::Manifest& man, const std::string& split) {
    std::vector<CachedCase> out;
    for (const data::CaseEntry* ce : man.split(split)) {
        CachedCase cc;
        cc.id = ce->id;
        cc.region = ce->region;
        cc.lesion_fraction = ce->lesion_fraction;
        cc.ehr = ce->ehr;
        cc.survival = ce->survival;

        std::array<double, 3> raw_spacing{1.0, 1.0, 1.0};
        std::array<int, 3> dims{0, 0, 0};
        bool first = true;
        for (const auto& [mod_name, rel] : ce->volume_paths) {
            Volume raw = load_volume(man.resolve(rel));
            raw_spacing = raw.spacing;
            Volume prepped = preprocess(raw, man.spacing);
            if (first) {
                dims = prepped.grid.dims;
                first = false;
            } else if (prepped.grid.dims != dims) {
                throw std::runtime_error("case " + cc.id + ": modality grids disagree after resampling");
            }
            cc.volumes.emplace(mod_name, std::move(prepped));
        }
        if (cc.volumes.empty()) throw std::runtime_error("case " + cc.id + " has no volumes");

        for (const auto& [organ, rel] : ce->mask_paths) {
            Mask m = load_mask(man.resolve(rel));
            m = resample_mask(m, raw_spacing, man.spacing);
            if (m.grid.dims != dims)
                throw std::runtime_error("case " + cc.id + ": mask '" + organ +
                                         "' is off the volume grid after resampling");
            std::vector<int64_t> fg;
            for (size_t i = 0; i < m.grid.data.size(); ++i)
                if (m.grid.data[i]) fg.push_back(static_cast<int64_t>(i));
            cc.organ_fg.emplace(organ, std::move(fg));
            cc.masks.emplace(organ, std::move(m));
        }
        out.push_back(std::move(cc));
    }
    if (out.empty()) throw std::invalid_argument("split '" + split + "' has no cases");
    return out;
}

AugmentParams draw_augment(Rng& rng, float prob) {
    AugmentParams p;
    p.rotate = rng.bernoulli(prob);
    if (p.rotate) {
        p.axis = static_cast<int>(rng.uniform_index(3));
        p.angle_deg = rng.uniform(-15.0, 15.0);
    }
    p.scale = rng.bernoulli(prob);
    if (p.scale) p.scale_factor = rng.uniform(0.9, 1.1);
    p.brightness = rng.bernoulli(prob);
    if (p.brightness) p.brightness_offset = rng.uniform(-0.1, 0.1);
    p.contrast = rng.bernoulli(prob);
    if (p.contrast) p.contrast_gain = rng.uniform(0.9, 1.1);
    p.gamma = rng.bernoulli(prob);
    if (p.gamma) p.gamma_exponent = rng.uniform(0.8, 1.25);
    return p;
}

namespace {

// Inverse of the forward map "scale about center, then rotate about center":
// source = c + R(-angle) * (out - c) / s. Returns source coordinates.
std::array<double, 3> source_coord(const AugmentParams& p, double cx, int x, int y, int z) {
    double vx = (x - cx), vy = (y - cx), vz = (z - cx);
    if (p.rotate) {
        const double th = -p.angle_deg * 3.14159265358979323846 / 180.0;
        const double c = std::cos(th), s = std::sin(th);
        double a = vx, b = vy;
        switch (p.axis) {
            case 0:  // rotate in the (y, z) plane
                a = vy, b = vz;
                vy = c * a - s * b;
                vz = s * a + c * b;
                break;
            case 1:  // (z, x) plane
                a = vz, b = vx;
                vz = c * a - s * b;
                vx = s * a + c * b;
                break;
            default:  // (x, y) plane
                a = vx, b = vy;
                vx = c * a - s * b;
                vy = s * a + c * b;
                break;
        }
    }
    if (p.scale) {
        vx /= p.scale_factor;
        vy /= p.scale_factor;
        vz /= p.scale_factor;
    }
    return {cx + vx, cx + vy, cx + vz};
}

inline size_t flat(int n, int x, int y, int z) {
    return static_cast<size_t>(x) + static_cast<size_t>(n) * (static_cast<size_t>(y) + static_cast<size_t>(n) * z);
}

float sample_trilinear(const std::vector<float>& v, int n, const std::array<double, 3>& q) {
    const int x0 = static_cast<int>(std::floor(q[0]));
    const int y0 = static_cast<int>(std::floor(q[1]));
    const int z0 = static_cast<int>(std::floor(q[2]));
    const double fx = q[0] - x0, fy = q[1] - y0, fz = q[2] - z0;
    double acc = 0.0;
    for (int dz = 0; dz < 2; ++dz)
        for (int dy = 0; dy < 2; ++dy)
            for (int dx = 0; dx < 2; ++dx) {
                const int x = x0 + dx, y = y0 + dy, z = z0 + dz;
                if (x < 0 || y < 0 || z < 0 || x >= n || y >= n || z >= n) continue;  // zero fill
                const double w = (dx ? fx : 1.0 - fx) * (dy ? fy : 1.0 - fy) * (dz ? fz : 1.0 - fz);
                acc += w * v[flat(n, x, y, z)];
            }
    return static_cast<float>(acc);
}

float sample_nearest(const std::vector<float>& v, int n, const std::array<double, 3>& q) {
    const int x = static_cast<int>(std::lround(q[0]));
    const int y = static_cast<int>(std::lround(q[1]));
    const int z = static_cast<int>(std::lround(q[2]));
    if (x < 0 || y < 0 || z < 0 || x >= n || y >= n || z >= n) return 0.0f;
    return v[flat(n, x, y, z)];
}

}  // namespace

void apply_spatial(std::vector<float>& image, std::vector<float>& mask, int n,
                   const AugmentParams& p) {
    if (!p.spatial_active()) return;
    if (image.size() != static_cast<size_t>(n) * n * n || mask.size() != image.size())
        throw std::invalid_argument("apply_spatial: patch size does not match edge length");
    const double cx = (n - 1) / 2.0;
    std::vector<float> img_out(image.size()), msk_out(mask.size());
    for (int z = 0; z < n; ++z)
        for (int y = 0; y < n; ++y)
            for (int x = 0; x < n; ++x) {
                const auto q = source_coord(p, cx, x, y, z);
                const size_t i = flat(n, x, y, z);
                img_out[i] = sample_trilinear(image, n, q);
                msk_out[i] = sample_nearest(mask, n, q);
            }
    image = std::move(img_out);
    mask = std::move(msk_out);
}

void apply_intensity(std::vector<float>& image, const AugmentParams& p) {
    if (!p.intensity_active()) return;
    if (p.brightness)
        for (float& v : image) v += static_cast<float>(p.brightness_offset);
    if (p.contrast)
        for (float& v : image) v *= static_cast<float>(p.contrast_gain);
    if (p.gamma) {
        const auto [lo_it, hi_it] = std::minmax_element(image.begin(), image.end());
        const double lo = *lo_it, hi = *hi_it;
        if (hi - lo > 1e-8) {
            for (float& v : image) {
                const double u = (v - lo) / (hi - lo);
                v = static_cast<float>(lo + (hi - lo) * std::pow(u, p.gamma_exponent));
            }
        }
    }
}

Sampler::Sampler(const data::Manifest& man, const std::string& split,
                 const model::BackboneConfig& bcfg, const model::TrainConfig& tcfg)
    : cases_(load_cached_split(man, split)),
      patch_(bcfg.patch),
      fg_fraction_(tcfg.fg_crop_fraction),
      aug_prob_(tcfg.augment_prob) {}

TrainSample Sampler::draw(Rng& rng) const {
    const CachedCase& cc = cases_[rng.uniform_index(cases_.size())];

    std::vector<const std::string*> organs;
    organs.reserve(cc.masks.size());
    for (const auto& [organ, m] : cc.masks) organs.push_back(&organ);
    const std::string& organ = *organs[rng.uniform_index(organs.size())];

    std::vector<const std::string*> mods;
    mods.reserve(cc.volumes.size());
    for (const auto& [name, v] : cc.volumes) mods.push_back(&name);
    const std::string& mod_name = *mods[rng.uniform_index(mods.size())];
    const Modality mod = modality_from_string(mod_name);

    const Volume& vol = cc.volumes.at(mod_name);
    const Mask& mask = cc.masks.at(organ);
    const std::vector<int64_t>& fg = cc.organ_fg.at(organ);
    const auto& dims = vol.grid.dims;

    TrainSample s;
    s.case_id = cc.id;
    s.organ = organ;
    s.modality = mod;
    s.fg_guaranteed = rng.bernoulli(fg_fraction_) && !fg.empty();

    if (s.fg_guaranteed) {
        const int64_t pick = fg[rng.uniform_index(fg.size())];
        const int vx = static_cast<int>(pick % dims[0]);
        const int vy = static_cast<int>((pick / dims[0]) % dims[1]);
        const int vz = static_cast<int>(pick / (static_cast<int64_t>(dims[0]) * dims[1]));
        const std::array<int, 3> voxel{vx, vy, vz};
        // Keep the anchor voxel in the central band of the patch so the
        // surrounding structure enters the crop too; a bare one-voxel overlap
        // would show tiny slivers of small organs that starve the loss of
        // foreground. Clamping near volume edges may shrink the band but the
        // anchor always stays inside the patch.
        const int margin = patch_ / 4;
        for (int a = 0; a < 3; ++a) {
            const int lo =
                std::max(0, std::min(dims[a] - patch_, voxel[a] - (patch_ - 1 - margin)));
            const int hi = std::max(lo, std::min(dims[a] - patch_, voxel[a] - margin));
            s.origin[a] = lo + static_cast<int>(rng.uniform_index(static_cast<uint64_t>(hi - lo + 1)));
        }
    } else {
        for (int a = 0; a < 3; ++a) {
            const int hi = std::max(0, dims[a] - patch_);
            s.origin[a] = static_cast<int>(rng.uniform_index(static_cast<uint64_t>(hi + 1)));
        }
    }

    const size_t voxels = static_cast<size_t>(patch_) * patch_ * patch_;
    s.patch.assign(voxels, 0.0f);
    s.target.assign(voxels, 0.0f);
    for (int z = 0; z < patch_; ++z)
        for (int y = 0; y < patch_; ++y)
            for (int x = 0; x < patch_; ++x) {
                const int gx = s.origin[0] + x, gy = s.origin[1] + y, gz = s.origin[2] + z;
                if (gx >= dims[0] || gy >= dims[1] || gz >= dims[2]) continue;  // zero pad
                const size_t i = flat(patch_, x, y, z);
                s.patch[i] = vol.grid.at(gx, gy, gz);
                s.target[i] = static_cast<float>(mask.grid.at(gx, gy, gz));
            }

    s.aug = draw_augment(rng, aug_prob_);
    apply_spatial(s.patch, s.target, patch_, s.aug);
    apply_intensity(s.patch, s.aug);

    s.t1_text = make_prompt(mod, cc.region, PromptKind::Context);
    s.t2_text = make_prompt(mod, organ, PromptKind::Target);
    return s;
}

}  // namespace dualprompt::train
