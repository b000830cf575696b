#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "dualprompt/data/manifest.hpp"
#include "dualprompt/model/config.hpp"
#include "dualprompt/model/params.hpp"
#include "dualprompt/text/encoder.hpp"
#include "dualprompt/volume/volume.hpp"

namespace dualprompt::infer {

// Target prompts to decode from one shared backbone pass. The backbone and
// conditioning trunk run once per window; only the lightweight generated
// head reruns per entry.
struct TargetPrompt {
    std::string name;  // key in the returned map (organ name in practice)
    std::string t2;    // target prompt text
};

// Sliding-window probability maps over a preprocessed volume. Windows are
// patch-sized cubes at stride patch/2 per axis (snapped so the last window
// touches the border); overlapping predictions are averaged with uniform
// weight. Volumes smaller than the patch are zero-padded for the forward
// pass and cropped back. Returns one probability volume per target name on
// the input grid.
std::map<std::string, Volume> predict_probabilities(
    const model::ParamStore& ps, const model::BackboneConfig& cfg, const TextEncoder& enc,
    const Volume& prepped, const std::string& t1, const std::vector<TargetPrompt>& targets);

// Binarize a probability map at the fixed decision threshold (0.5).
Mask threshold_mask(const Volume& prob, const std::string& organ, float threshold = 0.5f);

// Prompt construction policy used during evaluation. The default returns the
// correct prompts for (modality, region, organ); sensitivity studies swap in
// deliberately wrong ones.
struct PromptPolicy {
    std::function<std::string(Modality, const std::string& region)> context;
    std::function<std::string(Modality, const std::string& organ)> target;

    static PromptPolicy correct();
};

struct CaseOrganResult {
    std::string case_id;
    std::string region;
    std::string organ;
    Modality modality = Modality::CT;
    double dsc = 0.0;
};

struct SplitEvaluation {
    std::vector<CaseOrganResult> rows;
    std::map<std::string, double> per_organ_mean;  // organ -> mean over its rows
    double mean_dsc = 0.0;                         // macro average of per-organ means
};

// Segments every (case, modality, organ) triple of a split and scores it
// against the reference masks. One backbone pass per (case, modality) window
// serves all organs of the region.
SplitEvaluation evaluate_split(const model::ParamStore& ps, const model::BackboneConfig& cfg,
                               const TextEncoder& enc, const data::Manifest& man,
                               const std::string& split,
                               const PromptPolicy& policy = PromptPolicy::correct());

}  // namespace dualprompt::infer
