#pragma once

#include <filesystem>

#include "dualprompt/volume/volume.hpp"

namespace dualprompt {

// On-disk form: "<base>.json" UTF-8 sidecar plus "<base>.raw" little-endian
// IEEE-754 32-bit payload in x-fastest order. Payload length must equal
// product(dims) * 4 bytes. Masks share the format ({0,1}-valued payload)
// with kind="mask" and an organ field instead of modality/region.
void save_volume(const Volume& v, const std::filesystem::path& base);
Volume load_volume(const std::filesystem::path& base);

void save_mask(const Mask& m, const std::filesystem::path& base);
Mask load_mask(const std::filesystem::path& base);

}  // namespace dualprompt
