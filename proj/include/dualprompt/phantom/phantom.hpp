#pragma once

#include <array>
#include <string>
#include <vector>

#include "dualprompt/core/rng.hpp"
#include "dualprompt/data/manifest.hpp"
#include "dualprompt/volume/volume.hpp"

namespace dualprompt::phantom {

struct PhantomConfig {
    int cases = 24;
    std::array<int, 3> dims{48, 48, 48};
    std::array<double, 3> spacing{1.5, 1.5, 1.5};
    uint64_t seed = 42;
    double train_frac = 0.75;
    double val_frac = 0.05;
};

// One synthetic study rendered in memory: the same anatomy imaged under all
// three modalities, plus one binary mask per organ.
struct PhantomCase {
    std::string id;
    std::string region;
    std::vector<Volume> volumes;  // one per modality, co-registered
    std::vector<Mask> masks;      // one per organ of the region
    double lesion_fraction = 0.0;
    EhrRecord ehr;
    SurvivalLabel survival;
};

// Solid-shape voxelizer used for organs and lesions. `extent` holds radii
// for ellipsoids and half-widths for cuboids; a voxel belongs to the shape
// when its integer coordinate satisfies the implicit inequality.
enum class ShapeKind { Ellipsoid, Cuboid };
Mask render_shape(const std::array<int, 3>& dims, ShapeKind kind,
                  const std::array<double, 3>& center, const std::array<double, 3>& extent);

// Organ roster per region; order is the intensity-table order.
const std::vector<std::string>& region_organs(const std::string& region);
const std::vector<std::string>& region_names();
// Organ hosting the functional lesion rendered in the PET channel.
const std::string& lesion_organ(const std::string& region);

// Deterministic case synthesis: geometry jitter, intensity noise, labels and
// record fields all derive from (seed, index). Organ masks are verified
// pairwise disjoint and each organ is verified separable from background
// (mean contrast of at least one standard deviation after normalization) in
// every modality; violations throw instead of producing unlearnable data.
PhantomCase generate_case(const PhantomConfig& cfg, int index);

// Render the whole cohort to disk plus a manifest.json describing it.
// Split assignment: seeded shuffle, floor(train_frac*n) train cases,
// floor(val_frac*n) but at least one val case, remainder test.
data::Manifest generate_dataset(const PhantomConfig& cfg, const std::string& out_dir);

}  // namespace dualprompt::phantom
