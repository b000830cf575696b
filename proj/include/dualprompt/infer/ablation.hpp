#pragma once

#include <string>
#include <vector>

#include "dualprompt/infer/infer.hpp"

namespace dualprompt::infer {

// Prompt-sensitivity study. Every condition reruns the same evaluation with
// deliberately altered prompts:
//   baseline               correct context and target prompts
//   modality_t1_mismatch   context names the next modality in the cycle
//   modality_t2_mismatch   target names the next modality
//   modality_both_mismatch both prompts name the next modality
//   region_t1_mismatch     context names the other body region
//   organ_control          target names one organ; scores both that organ
//                          and the spill onto a different organ present in
//                          the same study
const std::vector<std::string>& ablation_conditions();

// ct -> mr -> pet -> ct.
Modality next_modality(Modality m);

// The region after `region` in the manifest's region list, cyclically.
std::string next_region(const data::Manifest& man, const std::string& region);

struct AblationRow {
    std::string condition;
    double mean_dsc = 0.0;  // macro DSC under the condition's prompts
    // organ_control only: agreement with the prompted organ and overlap with
    // a present-but-unprompted organ.
    double prompted_dsc = 0.0;
    double unprompted_overlap = 0.0;
};

// Runs every condition on one split. For organ_control the prompted organ is
// the second organ of the region roster and the unprompted reference is the
// first (e.g. prompting the spleen and measuring overlap with the liver).
std::vector<AblationRow> run_ablation(const model::ParamStore& ps,
                                      const model::BackboneConfig& cfg, const TextEncoder& enc,
                                      const data::Manifest& man, const std::string& split);

}  // namespace dualprompt::infer
