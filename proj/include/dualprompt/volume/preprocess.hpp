#pragma once

#include "dualprompt/volume/volume.hpp"

namespace dualprompt {

// Percentile with linear interpolation between order statistics (the
// "inclusive" convention): rank = p/100 * (n-1), value interpolated between
// the two neighbouring sorted samples.
double percentile(std::vector<float> values, double p);

// Trilinear resample to the requested voxel spacing. New dims are
// round(old_dims * old_spacing / target_spacing), at least 1 per axis.
// An identity target spacing reproduces the input bytes exactly.
Volume resample_isotropic(const Volume& v, const std::array<double, 3>& target_spacing);

// Nearest-neighbour resample for masks so values stay binary.
Mask resample_mask(const Mask& m, const std::array<double, 3>& old_spacing,
                   const std::array<double, 3>& target_spacing);

// Trilinear resize to an exact voxel count per axis (whole-study inputs for
// pooled-feature consumers). Spacing is adjusted to keep physical extent.
Volume resample_to_dims(const Volume& v, const std::array<int, 3>& dims);

// Modality-specific intensity clipping: CT to [-990, 500], MR/PET to the
// volume's own 2nd/98th percentiles.
Volume clip_intensities(const Volume& v);

// Z-score normalization over all voxels. Zero-variance volumes (std < 1e-8)
// map to all zeros instead of erroring.
Volume znormalize(const Volume& v);

// resample -> clip -> znormalize, the standard pipeline before any model
// sees a volume.
Volume preprocess(const Volume& v, const std::array<double, 3>& target_spacing = {1.5, 1.5, 1.5});

}  // namespace dualprompt
