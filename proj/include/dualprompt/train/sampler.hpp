#pragma once

#include <array>
#include <map>
#include <string>
#include <vector>

#include "dualprompt/core/rng.hpp"
#include "dualprompt/data/manifest.hpp"
#include "dualprompt/model/config.hpp"
#include "dualprompt/volume/volume.hpp"

namespace dualprompt::train {

// One study held in memory after preprocessing, so the training loop never
// touches the filesystem. Foreground voxel indices are precomputed per organ
// to make foreground-guaranteed cropping O(1) per draw.
struct CachedCase {
    std::string id;
    std::string region;
    double lesion_fraction = 0.0;
    EhrRecord ehr;
    SurvivalLabel survival;
    std::map<std::string, Volume> volumes;              // modality name -> preprocessed volume
    std::map<std::string, Mask> masks;                  // organ -> binary mask on the same grid
    std::map<std::string, std::vector<int64_t>> organ_fg;  // organ -> flat foreground indices
};

// Loads and preprocesses every case of one split. Masks are resampled onto
// the preprocessed grid and verified to stay on it.
std::vector<CachedCase> load_cached_split(const data::Manifest& man, const std::string& split);

// Sampled spatial/intensity perturbation. Rotation and scale compose into a
// single trilinear resample; when neither fires the patch is passed through
// untouched (bit-exact identity).
struct AugmentParams {
    bool rotate = false;
    int axis = 0;           // 0=x, 1=y, 2=z
    double angle_deg = 0.0;  // within +/-15
    bool scale = false;
    double scale_factor = 1.0;  // within [0.9, 1.1]
    bool brightness = false;
    double brightness_offset = 0.0;  // within +/-0.1
    bool contrast = false;
    double contrast_gain = 1.0;  // within [0.9, 1.1]
    bool gamma = false;
    double gamma_exponent = 1.0;  // within [0.8, 1.25]

    bool spatial_active() const { return rotate || scale; }
    bool intensity_active() const { return brightness || contrast || gamma; }
};

// Draws each transform independently with probability `prob`.
AugmentParams draw_augment(Rng& rng, float prob);

// Resamples a cubic patch (edge n, x-fastest layout) through the composed
// rotate+scale map: image trilinear with zero fill, mask nearest neighbour so
// it stays binary. No-op when the params carry no spatial transform.
void apply_spatial(std::vector<float>& image, std::vector<float>& mask, int n,
                   const AugmentParams& p);

// Brightness (additive), contrast (multiplicative), then gamma applied on a
// min-max rescaled copy of the patch and mapped back to the original range.
void apply_intensity(std::vector<float>& image, const AugmentParams& p);

// One training example plus enough provenance to reproduce it exactly.
struct TrainSample {
    std::vector<float> patch;   // edge^3 voxels
    std::vector<float> target;  // same layout, values in {0,1}
    std::string t1_text;
    std::string t2_text;
    std::string case_id;
    std::string organ;
    Modality modality = Modality::CT;
    std::array<int, 3> origin{0, 0, 0};  // crop corner in volume coordinates
    bool fg_guaranteed = false;          // crop was forced to contain foreground
    AugmentParams aug;
};

// Draws training patches: uniform over cases, then uniform over the organs of
// that case's region, then uniform over modalities. With probability
// `fg_crop_fraction` the crop window is chosen around a random foreground
// voxel of the target organ; otherwise the corner is uniform over all valid
// positions. Augmentation follows per `augment_prob`.
class Sampler {
public:
    Sampler(const data::Manifest& man, const std::string& split,
            const model::BackboneConfig& bcfg, const model::TrainConfig& tcfg);

    TrainSample draw(Rng& rng) const;

    const std::vector<CachedCase>& cases() const { return cases_; }
    int patch_edge() const { return patch_; }

private:
    std::vector<CachedCase> cases_;
    int patch_;
    float fg_fraction_;
    float aug_prob_;
};

}  // namespace dualprompt::train
