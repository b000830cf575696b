#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dualprompt/model/config.hpp"
#include "dualprompt/model/forward.hpp"
#include "dualprompt/model/params.hpp"

namespace dualprompt::adapt {

struct LoraReport {
    int64_t trainable = 0;  // parameters marked trainable after attachment
    int64_t total = 0;      // all parameters in the store
    double fraction = 0.0;  // trainable / total
    std::vector<std::string> adapted;  // layer prefixes that received factors
};

// Adapter targets for prompt-path fine-tuning: the conditioning trunk and
// its per-site projections. These are the layers through which the context
// prompt steers the deep features that the prognosis head consumes.
model::LoraSpec default_lora_spec(const model::BackboneConfig& cfg);

// Attaches one low-rank factor pair per target layer: A is [rank, in] drawn
// from N(0, 0.01^2) with a per-name seeded stream, B is [out, rank] zeros, so
// the adapted forward is initially identical to the base forward. All base
// entries are frozen; only the new factors stay trainable. Throws when a
// target layer is missing, not a 2-D linear map, or already adapted.
LoraReport apply_lora(model::ParamStore& ps, const model::LoraSpec& spec, uint64_t seed);

// Marks entries trainable iff their name starts with one of the prefixes.
void set_trainable_prefixes(model::ParamStore& ps, const std::vector<std::string>& prefixes);

// The store without adapter factors: the base weights, byte for byte.
model::ParamStore strip_adapters(const model::ParamStore& ps);

}  // namespace dualprompt::adapt
