#pragma once

#include <cstdint>
#include <string>

#include "dualprompt/model/config.hpp"
#include "dualprompt/model/params.hpp"

namespace dualprompt::model {

// On-disk model container: an 8-byte little-endian header length, a JSON
// header describing config and tensor layout, then raw float32
// little-endian tensor payloads concatenated in header order.
struct Checkpoint {
    std::string kind = "segmentation";  // segmentation | adapter
    BackboneConfig config;
    ParamStore params;
    // identity of the frozen text encoder the weights were trained against
    int text_vocab = 4096;
    int text_dim = 64;
    uint64_t text_seed = 1;
    nlohmann::json extra;  // kind-specific fields, e.g. base weight checksum
};

void save_checkpoint(const std::string& path, const Checkpoint& c);
Checkpoint load_checkpoint(const std::string& path);

// FNV-1a over the concatenated float32 payload bytes; identifies a weight
// state independent of file metadata.
uint64_t params_checksum(const ParamStore& ps);

constexpr int kCheckpointVersion = 1;

}  // namespace dualprompt::model
