#pragma once

#include <array>
#include <string>
#include <vector>

#include "dualprompt/data/manifest.hpp"
#include "dualprompt/model/config.hpp"
#include "dualprompt/model/params.hpp"
#include "dualprompt/text/encoder.hpp"

namespace dualprompt::infer {

struct FeatureRow {
    std::string set;       // "A" (varied context) or "B" (varied target)
    std::string case_id;
    std::string modality;
    std::string region;
    std::string t1;
    std::string t2;
    std::vector<float> pooled;             // deep feature after global average pooling
    std::array<double, 2> projection{0, 0};  // coordinates in the principal plane
};

struct FeatureReport {
    std::vector<FeatureRow> rows;
    // Cosine-distance statistics over set A, grouped by context prompt.
    double within_t1 = 0.0;
    double between_t1 = 0.0;
    double separation_ratio = 0.0;  // between / within
};

// Pooled deep features of every split study under two prompt designs.
// Set A fixes one arbitrary target prompt and varies the context with the
// study (one row per case x modality). Set B fixes the correct context per
// study and varies the target over the region's organs (one row per organ);
// these rows demonstrate that the pooled feature ignores the target prompt.
// The principal plane is fitted on set A and all rows are projected onto it.
FeatureReport export_features(const model::ParamStore& ps, const model::BackboneConfig& cfg,
                              const TextEncoder& enc, const data::Manifest& man,
                              const std::string& split);

// rows as CSV: set,case_id,modality,region,t1,t2,proj0,proj1,f0..f{C-1}.
void write_features_csv(const std::string& path, const FeatureReport& report);

}  // namespace dualprompt::infer
