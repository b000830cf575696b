#include "dualprompt/model/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "dualprompt/volume/volume.hpp"

namespace dualprompt::model {

static_assert(std::endian::native == std::endian::little,
              "checkpoint payloads are little-endian");

namespace {


void append_bytes(std::string& out, const void* p, size_t n) {
    out.append(static_cast<const char*>(p), n);
}

}  // namespace

uint64_t params_checksum(const ParamStore& ps) {
    uint64_t h = 14695981039346656037ull;
    for (const auto& e : ps.entries())
        for (float v : e.data) {
            uint32_t bits;
            std::memcpy(&bits, &v, 4);
            for (int i = 0; i < 4; ++i) {
                h ^= (bits >> (8 * i)) & 0xffu;
                h *= 1099511628211ull;
            }
        }
    return h;
}

void save_checkpoint(const std::string& path, const Checkpoint& c) {
    nlohmann::json hdr;
    hdr["format_version"] = kCheckpointVersion;
    hdr["kind"] = c.kind;
    hdr["config"] = c.config;
    hdr["text_encoder"] = {{"vocab", c.text_vocab}, {"dim", c.text_dim}, {"seed", c.text_seed}};
    if (!c.extra.is_null()) hdr["extra"] = c.extra;
    auto& plist = hdr["params"] = nlohmann::json::array();
    for (const auto& e : c.params.entries())
        plist.push_back({{"name", e.name}, {"shape", e.shape}, {"trainable", e.trainable}});

    const std::string hjson = hdr.dump();
    std::string blob;
    const uint64_t hlen = hjson.size();
    append_bytes(blob, &hlen, 8);
    blob += hjson;
    for (const auto& e : c.params.entries())
        append_bytes(blob, e.data.data(), e.data.size() * 4);

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw FormatError("cannot open checkpoint for writing: " + path);
    f.write(blob.data(), static_cast<std::streamsize>(blob.size()));
    if (!f) throw FormatError("short write to checkpoint: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw FormatError("cannot open checkpoint: " + path);
    std::string blob((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    if (blob.size() < 8) throw FormatError("checkpoint truncated before header length: " + path);
    uint64_t hlen = 0;
    std::memcpy(&hlen, blob.data(), 8);
    if (8 + hlen > blob.size()) throw FormatError("checkpoint header overruns file: " + path);

    nlohmann::json hdr;
    try {
        hdr = nlohmann::json::parse(blob.substr(8, hlen));
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("malformed checkpoint header in " + path + ": " + e.what());
    }

    Checkpoint c;
    try {
        if (hdr.at("format_version").get<int>() != kCheckpointVersion)
            throw FormatError("unsupported checkpoint version in " + path);
        hdr.at("kind").get_to(c.kind);
        hdr.at("config").get_to(c.config);
        const auto& te = hdr.at("text_encoder");
        te.at("vocab").get_to(c.text_vocab);
        te.at("dim").get_to(c.text_dim);
        te.at("seed").get_to(c.text_seed);
        if (hdr.contains("extra")) c.extra = hdr.at("extra");

        size_t off = 8 + hlen;
        for (const auto& p : hdr.at("params")) {
            const auto name = p.at("name").get<std::string>();
            auto shape = p.at("shape").get<std::vector<int>>();
            auto& e = c.params.add(name, std::move(shape), p.at("trainable").get<bool>());
            const size_t bytes = e.data.size() * 4;
            if (off + bytes > blob.size())
                throw FormatError("checkpoint payload truncated at tensor " + name + ": " + path);
            std::memcpy(e.data.data(), blob.data() + off, bytes);
            off += bytes;
        }
        if (off != blob.size())
            throw FormatError("checkpoint has trailing bytes: " + path);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("bad checkpoint header field in " + path + ": " + e.what());
    }
    return c;
}

}  // namespace dualprompt::model
