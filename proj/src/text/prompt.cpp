#include "dualprompt/text/prompt.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace dualprompt {

namespace {

std::string lowercase(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return s;
}

}  // namespace

std::string make_prompt(Modality m, const std::string& region_or_organ, PromptKind) {
    if (region_or_organ.empty()) throw std::invalid_argument("prompt token must be non-empty");
    // Context and target prompts share the surface template; the hierarchy
    // comes from where the embedding is routed, not the sentence shape.
    return lowercase(std::string("a ") + modality_phrase(m) + " of " + region_or_organ);
}

std::string serialize_ehr(const EhrRecord& r) {
    auto need = [](bool ok, const char* field) {
        if (!ok) throw std::invalid_argument(std::string("missing required EHR field: ") + field);
    };
    need(r.sex.has_value(), "sex");
    need(r.age.has_value(), "age");
    need(r.modality.has_value(), "modality");
    need(r.region.has_value(), "region");
    need(r.weight_kg.has_value(), "weight");
    need(r.smoking.has_value(), "smoking");
    need(r.alcohol.has_value(), "alcohol");

    std::ostringstream out;
    out << "predict the risk score of a " << lowercase(*r.sex) << " patient, " << *r.age
        << " years old, with " << to_string(*r.modality) << " imaging of the "
        << lowercase(*r.region) << ", a weight of ";
    const double w = *r.weight_kg;
    if (w == std::floor(w))
        out << static_cast<long long>(w);
    else
        out << w;
    out << " kilograms, ";

    if (*r.smoking && *r.alcohol)
        out << "and a history of smoking and alcohol consumption";
    else if (*r.smoking)
        out << "and a history of smoking";
    else if (*r.alcohol)
        out << "and a history of alcohol consumption";
    else
        out << "and no smoking or alcohol history";
    return out.str();
}

}  // namespace dualprompt
