#include "dualprompt/infer/ablation.hpp"

#include <stdexcept>

#include "dualprompt/metrics/metrics.hpp"
#include "dualprompt/text/prompt.hpp"
#include "dualprompt/volume/io.hpp"
#include "dualprompt/volume/preprocess.hpp"

namespace dualprompt::infer {

const std::vector<std::string>& ablation_conditions() {
    static const std::vector<std::string> kConditions{
        "baseline",           "modality_t1_mismatch",  "modality_t2_mismatch",
        "modality_both_mismatch", "region_t1_mismatch", "organ_control"};
    return kConditions;
}

Modality next_modality(Modality m) {
    switch (m) {
        case Modality::CT: return Modality::MR;
        case Modality::MR: return Modality::PET;
        case Modality::PET: return Modality::CT;
    }
    throw std::invalid_argument("next_modality: bad modality");
}

std::string next_region(const data::Manifest& man, const std::string& region) {
    std::vector<std::string> names;
    for (const auto& [name, organs] : man.regions) names.push_back(name);
    for (size_t i = 0; i < names.size(); ++i)
        if (names[i] == region) return names[(i + 1) % names.size()];
    throw std::invalid_argument("next_region: unknown region " + region);
}

namespace {

AblationRow organ_control(const model::ParamStore& ps, const model::BackboneConfig& cfg,
                          const TextEncoder& enc, const data::Manifest& man,
                          const std::string& split) {
    AblationRow row;
    row.condition = "organ_control";
    double prompted_sum = 0.0, overlap_sum = 0.0;
    int n = 0;

    for (const data::CaseEntry* ce : man.split(split)) {
        const auto& roster = man.regions.at(ce->region);
        if (roster.size() < 2)
            throw std::runtime_error("organ_control needs two organs in region " + ce->region);
        const std::string& prompted = roster[1];
        const std::string& unprompted = roster[0];

        for (const auto& [mod_name, rel] : ce->volume_paths) {
            const Modality mod = modality_from_string(mod_name);
            const Volume raw = load_volume(man.resolve(rel));
            const Volume prepped = preprocess(raw, man.spacing);

            Mask gt_prompted = resample_mask(load_mask(man.resolve(ce->mask_paths.at(prompted))),
                                             raw.spacing, man.spacing);
            Mask gt_unprompted = resample_mask(
                load_mask(man.resolve(ce->mask_paths.at(unprompted))), raw.spacing, man.spacing);

            const auto probs = predict_probabilities(
                ps, cfg, enc, prepped, make_prompt(mod, ce->region, PromptKind::Context),
                {{prompted, make_prompt(mod, prompted, PromptKind::Target)}});
            const Mask pred = threshold_mask(probs.at(prompted), prompted);

            prompted_sum += dice_score(pred, gt_prompted);
            overlap_sum += dice_score(pred, gt_unprompted);
            ++n;
        }
    }
    if (n == 0) throw std::invalid_argument("organ_control: split is empty");
    row.prompted_dsc = prompted_sum / n;
    row.unprompted_overlap = overlap_sum / n;
    row.mean_dsc = row.prompted_dsc;
    return row;
}

}  // namespace

std::vector<AblationRow> run_ablation(const model::ParamStore& ps,
                                      const model::BackboneConfig& cfg, const TextEncoder& enc,
                                      const data::Manifest& man, const std::string& split) {
    const auto correct = PromptPolicy::correct();

    auto policy_for = [&](const std::string& condition) {
        PromptPolicy p = correct;
        if (condition == "modality_t1_mismatch" || condition == "modality_both_mismatch")
            p.context = [](Modality m, const std::string& region) {
                return make_prompt(next_modality(m), region, PromptKind::Context);
            };
        if (condition == "modality_t2_mismatch" || condition == "modality_both_mismatch")
            p.target = [](Modality m, const std::string& organ) {
                return make_prompt(next_modality(m), organ, PromptKind::Target);
            };
        if (condition == "region_t1_mismatch")
            p.context = [&man](Modality m, const std::string& region) {
                return make_prompt(m, next_region(man, region), PromptKind::Context);
            };
        return p;
    };

    std::vector<AblationRow> rows;
    for (const auto& condition : ablation_conditions()) {
        if (condition == "organ_control") {
            rows.push_back(organ_control(ps, cfg, enc, man, split));
            continue;
        }
        AblationRow row;
        row.condition = condition;
        row.mean_dsc = evaluate_split(ps, cfg, enc, man, split, policy_for(condition)).mean_dsc;
        rows.push_back(std::move(row));
    }
    return rows;
}

}  // namespace dualprompt::infer
