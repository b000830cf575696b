#pragma once

#include <optional>
#include <string>

#include "dualprompt/volume/volume.hpp"

namespace dualprompt {

enum class PromptKind { Context, Target };

struct PromptPair {
    std::string t1;  // modality + body region context
    std::string t2;  // target structure instruction
};

// "a {modality phrase} of {token}", lowercase. Context prompts name a body
// region, target prompts name the structure to segment.
std::string make_prompt(Modality m, const std::string& region_or_organ, PromptKind kind);

inline PromptPair make_prompt_pair(Modality m, const std::string& region, const std::string& organ) {
    return {make_prompt(m, region, PromptKind::Context), make_prompt(m, organ, PromptKind::Target)};
}

struct EhrRecord {
    std::optional<std::string> sex;        // "male" | "female"
    std::optional<int> age;                // years
    std::optional<Modality> modality;
    std::optional<std::string> region;
    std::optional<double> weight_kg;
    std::optional<bool> smoking;
    std::optional<bool> alcohol;
};

// Normative sentence template:
//   "predict the risk score of a {sex} patient, {age} years old, with
//    {modality} imaging of the {region}, a weight of {weight} kilograms,
//    and a history of {habits}"
// Habits are joined with "and"; when both are absent the tail reads
// "no smoking or alcohol history". Missing required fields raise
// invalid-argument naming the field.
std::string serialize_ehr(const EhrRecord& record);

}  // namespace dualprompt
