#include "dualprompt/data/manifest.hpp"

#include <fstream>

#include "json.hpp"

namespace dualprompt::data {

using nlohmann::json;

std::vector<const CaseEntry*> Manifest::split(const std::string& name) const {
    std::vector<const CaseEntry*> out;
    for (const auto& c : cases)
        if (c.split == name) out.push_back(&c);
    return out;
}

const CaseEntry& Manifest::case_by_id(const std::string& id) const {
    for (const auto& c : cases)
        if (c.id == id) return c;
    throw FormatError("no case with id " + id + " in manifest");
}

std::string Manifest::resolve(const std::string& rel_path) const {
    return root_dir.empty() ? rel_path : root_dir + "/" + rel_path;
}

namespace {

json ehr_to_json(const EhrRecord& e) {
    json j;
    if (e.sex) j["sex"] = *e.sex;
    if (e.age) j["age"] = *e.age;
    if (e.modality) j["modality"] = to_string(*e.modality);
    if (e.region) j["region"] = *e.region;
    if (e.weight_kg) j["weight_kg"] = *e.weight_kg;
    if (e.smoking) j["smoking"] = *e.smoking;
    if (e.alcohol) j["alcohol"] = *e.alcohol;
    return j;
}

EhrRecord ehr_from_json(const json& j) {
    EhrRecord e;
    if (j.contains("sex")) e.sex = j.at("sex").get<std::string>();
    if (j.contains("age")) e.age = j.at("age").get<int>();
    if (j.contains("modality")) e.modality = modality_from_string(j.at("modality").get<std::string>());
    if (j.contains("region")) e.region = j.at("region").get<std::string>();
    if (j.contains("weight_kg")) e.weight_kg = j.at("weight_kg").get<double>();
    if (j.contains("smoking")) e.smoking = j.at("smoking").get<bool>();
    if (j.contains("alcohol")) e.alcohol = j.at("alcohol").get<bool>();
    return e;
}

}  // namespace

void save_manifest(const std::string& path, const Manifest& m) {
    json j;
    j["format_version"] = kManifestVersion;
    j["spacing"] = m.spacing;
    j["regions"] = m.regions;
    j["lesion_organ"] = m.lesion_organ;
    auto& arr = j["cases"] = json::array();
    for (const auto& c : m.cases) {
        json jc{{"id", c.id},
                {"region", c.region},
                {"split", c.split},
                {"volumes", c.volume_paths},
                {"masks", c.mask_paths},
                {"lesion_fraction", c.lesion_fraction},
                {"ehr", ehr_to_json(c.ehr)},
                {"survival", {{"time", c.survival.time}, {"event", c.survival.event}}}};
        arr.push_back(std::move(jc));
    }
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw FormatError("cannot open manifest for writing: " + path);
    f << j.dump(2) << '\n';
    if (!f) throw FormatError("short write to manifest: " + path);
}

Manifest load_manifest(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw FormatError("cannot open manifest: " + path);
    json j;
    try {
        f >> j;
    } catch (const json::exception& e) {
        throw FormatError("malformed manifest " + path + ": " + e.what());
    }
    Manifest m;
    try {
        if (j.at("format_version").get<int>() != kManifestVersion)
            throw FormatError("unsupported manifest version: " + path);
        j.at("spacing").get_to(m.spacing);
        j.at("regions").get_to(m.regions);
        j.at("lesion_organ").get_to(m.lesion_organ);
        for (const auto& jc : j.at("cases")) {
            CaseEntry c;
            jc.at("id").get_to(c.id);
            jc.at("region").get_to(c.region);
            jc.at("split").get_to(c.split);
            jc.at("volumes").get_to(c.volume_paths);
            jc.at("masks").get_to(c.mask_paths);
            jc.at("lesion_fraction").get_to(c.lesion_fraction);
            c.ehr = ehr_from_json(jc.at("ehr"));
            c.survival.time = jc.at("survival").at("time").get<double>();
            c.survival.event = jc.at("survival").at("event").get<int>();
            m.cases.push_back(std::move(c));
        }
    } catch (const json::exception& e) {
        throw FormatError("bad manifest field in " + path + ": " + e.what());
    }
    const auto slash = path.find_last_of('/');
    m.root_dir = slash == std::string::npos ? std::string() : path.substr(0, slash);
    return m;
}

}  // namespace dualprompt::data
