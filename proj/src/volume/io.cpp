#include "dualprompt/volume/io.hpp"

#include <cstring>
#include <fstream>
#include <limits>

#include <json.hpp>

namespace dualprompt {

namespace {

using nlohmann::json;

static_assert(sizeof(float) == 4 && std::numeric_limits<float>::is_iec559);

void write_file(const std::filesystem::path& p, const std::string& bytes) {
    std::ofstream f(p, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot open for writing: " + p.string());
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw std::runtime_error("write failed: " + p.string());
}

std::string read_file(const std::filesystem::path& p) {
    std::ifstream f(p, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open: " + p.string());
    std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return bytes;
}

// Payloads are little-endian on disk; this code assumes a little-endian host.
std::string payload_bytes(const std::vector<float>& data) {
    std::string bytes(data.size() * 4, '\0');
    std::memcpy(bytes.data(), data.data(), bytes.size());
    return bytes;
}

json parse_header(const std::filesystem::path& p) {
    json h;
    try {
        h = json::parse(read_file(p));
    } catch (const json::exception& e) {
        throw FormatError("malformed header " + p.string() + ": " + e.what());
    }
    if (!h.is_object()) throw FormatError("header is not a JSON object: " + p.string());
    return h;
}

std::array<int, 3> header_dims(const json& h, const std::filesystem::path& p) {
    try {
        auto d = h.at("dims").get<std::vector<int>>();
        if (d.size() != 3) throw FormatError("dims must have 3 entries: " + p.string());
        for (int x : d)
            if (x < 1) throw FormatError("dims must be >= 1: " + p.string());
        return {d[0], d[1], d[2]};
    } catch (const json::exception& e) {
        throw FormatError("bad dims in " + p.string() + ": " + e.what());
    }
}

std::vector<float> read_payload(const std::filesystem::path& raw, const std::array<int, 3>& dims) {
    const std::string bytes = read_file(raw);
    const size_t n = static_cast<size_t>(dims[0]) * dims[1] * dims[2];
    if (bytes.size() != n * 4)
        throw FormatError("payload size mismatch in " + raw.string() + ": header claims " +
                          std::to_string(n) + " voxels (" + std::to_string(n * 4) + " bytes), file has " +
                          std::to_string(bytes.size()) + " bytes");
    std::vector<float> data(n);
    std::memcpy(data.data(), bytes.data(), bytes.size());
    return data;
}

std::string require_string(const json& h, const char* key, const std::filesystem::path& p) {
    if (!h.contains(key) || !h[key].is_string())
        throw FormatError(std::string("missing or non-string \"") + key + "\" in " + p.string());
    return h[key].get<std::string>();
}

}  // namespace

void save_volume(const Volume& v, const std::filesystem::path& base) {
    v.validate();
    json h;
    h["kind"] = "volume";
    h["dims"] = v.grid.dims;
    h["spacing"] = v.spacing;
    h["modality"] = to_string(v.modality);
    h["region"] = v.region;
    h["id"] = v.id;
    h["dtype"] = "f32";
    std::filesystem::path j = base;
    j += ".json";
    std::filesystem::path r = base;
    r += ".raw";
    write_file(j, h.dump(2) + "\n");
    write_file(r, payload_bytes(v.grid.data));
}

Volume load_volume(const std::filesystem::path& base) {
    std::filesystem::path j = base;
    j += ".json";
    std::filesystem::path r = base;
    r += ".raw";
    const json h = parse_header(j);

    if (h.value("kind", "volume") != "volume") throw FormatError("not a volume file: " + j.string());
    if (h.value("dtype", "f32") != "f32") throw FormatError("unsupported dtype in " + j.string());

    Volume v;
    const auto dims = header_dims(h, j);
    try {
        auto sp = h.at("spacing").get<std::vector<double>>();
        if (sp.size() != 3) throw FormatError("spacing must have 3 entries: " + j.string());
        v.spacing = {sp[0], sp[1], sp[2]};
    } catch (const json::exception& e) {
        throw FormatError("bad spacing in " + j.string() + ": " + e.what());
    }
    v.modality = modality_from_string(require_string(h, "modality", j));
    v.region = require_string(h, "region", j);
    v.id = require_string(h, "id", j);
    v.grid.dims = dims;
    v.grid.data = read_payload(r, dims);
    v.validate();
    return v;
}

void save_mask(const Mask& m, const std::filesystem::path& base) {
    json h;
    h["kind"] = "mask";
    h["dims"] = m.grid.dims;
    h["organ"] = m.organ;
    h["id"] = m.id;
    h["dtype"] = "f32";
    std::vector<float> data(m.grid.data.size());
    for (size_t i = 0; i < data.size(); ++i) data[i] = m.grid.data[i] ? 1.0f : 0.0f;
    std::filesystem::path j = base;
    j += ".json";
    std::filesystem::path r = base;
    r += ".raw";
    write_file(j, h.dump(2) + "\n");
    write_file(r, payload_bytes(data));
}

Mask load_mask(const std::filesystem::path& base) {
    std::filesystem::path j = base;
    j += ".json";
    std::filesystem::path r = base;
    r += ".raw";
    const json h = parse_header(j);
    if (h.value("kind", "") != "mask") throw FormatError("not a mask file: " + j.string());

    Mask m;
    m.organ = require_string(h, "organ", j);
    m.id = require_string(h, "id", j);
    const auto dims = header_dims(h, j);
    const auto data = read_payload(r, dims);
    m.grid.dims = dims;
    m.grid.data.resize(data.size());
    for (size_t i = 0; i < data.size(); ++i) {
        if (data[i] != 0.0f && data[i] != 1.0f)
            throw FormatError("mask payload contains non-binary value in " + r.string());
        m.grid.data[i] = data[i] != 0.0f ? 1 : 0;
    }
    return m;
}

}  // namespace dualprompt
