#pragma once

#include <array>
#include <map>
#include <string>
#include <vector>

#include "dualprompt/metrics/metrics.hpp"
#include "dualprompt/text/prompt.hpp"
#include "dualprompt/volume/volume.hpp"

namespace dualprompt::data {

// One phantom study: co-registered volumes per modality plus one binary
// mask per organ. Paths are relative to the manifest directory and carry no
// extension; the volume loader appends .json/.raw.
struct CaseEntry {
    std::string id;
    std::string region;
    std::string split;  // train | val | test
    std::map<std::string, std::string> volume_paths;  // modality -> base path
    std::map<std::string, std::string> mask_paths;    // organ -> base path
    double lesion_fraction = 0.0;  // lesion volume / host organ volume
    EhrRecord ehr;
    SurvivalLabel survival;
};

struct Manifest {
    std::array<double, 3> spacing{1.5, 1.5, 1.5};
    std::map<std::string, std::vector<std::string>> regions;  // region -> organs
    std::map<std::string, std::string> lesion_organ;          // region -> host organ
    std::vector<CaseEntry> cases;
    std::string root_dir;  // directory of the manifest file, set on load

    std::vector<const CaseEntry*> split(const std::string& name) const;
    const CaseEntry& case_by_id(const std::string& id) const;
    std::string resolve(const std::string& rel_path) const;
};

void save_manifest(const std::string& path, const Manifest& m);
Manifest load_manifest(const std::string& path);

constexpr int kManifestVersion = 1;

}  // namespace dualprompt::data
