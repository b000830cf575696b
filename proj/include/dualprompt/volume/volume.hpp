#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace dualprompt {

// File/format errors (malformed headers, payload size mismatches).
class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class Modality { CT, MR, PET };

inline const char* to_string(Modality m) {
    switch (m) {
        case Modality::CT: return "ct";
        case Modality::MR: return "mr";
        case Modality::PET: return "pet";
    }
    return "?";
}

inline Modality modality_from_string(const std::string& s) {
    if (s == "ct") return Modality::CT;
    if (s == "mr") return Modality::MR;
    if (s == "pet") return Modality::PET;
    throw FormatError("unknown modality \"" + s + "\" (expected ct|mr|pet)");
}

// Spoken form used in prompt text.
inline const char* modality_phrase(Modality m) {
    switch (m) {
        case Modality::CT: return "computed tomography";
        case Modality::MR: return "magnetic resonance";
        case Modality::PET: return "positron emission tomography";
    }
    return "?";
}

constexpr std::array<Modality, 3> kAllModalities{Modality::CT, Modality::MR, Modality::PET};

// Dense 3D grid, x-fastest storage: index = x + nx*(y + ny*z).
template <typename T>
struct Grid3 {
    std::array<int, 3> dims{0, 0, 0};  // {nx, ny, nz}
    std::vector<T> data;

    Grid3() = default;
    Grid3(int nx, int ny, int nz, T fill = T{})
        : dims{nx, ny, nz}, data(static_cast<size_t>(nx) * ny * nz, fill) {}

    size_t size() const { return data.size(); }
    size_t index(int x, int y, int z) const {
        return static_cast<size_t>(x) + static_cast<size_t>(dims[0]) * (static_cast<size_t>(y) + static_cast<size_t>(dims[1]) * z);
    }
    T& at(int x, int y, int z) { return data[index(x, y, z)]; }
    const T& at(int x, int y, int z) const { return data[index(x, y, z)]; }

    bool same_shape(const Grid3& o) const { return dims == o.dims; }
};

struct Volume {
    Grid3<float> grid;
    std::array<double, 3> spacing{1.0, 1.0, 1.0};  // mm per voxel, {sx, sy, sz}
    Modality modality = Modality::CT;
    std::string region;
    std::string id;

    void validate() const {
        for (int d : grid.dims)
            if (d < 1) throw std::invalid_argument("volume dims must be >= 1");
        for (double s : spacing)
            if (!(s > 0.0)) throw std::invalid_argument("volume spacing must be > 0");
        if (grid.data.size() != static_cast<size_t>(grid.dims[0]) * grid.dims[1] * grid.dims[2])
            throw std::invalid_argument("volume payload size does not match dims");
    }
};

struct Mask {
    Grid3<uint8_t> grid;  // values in {0,1}
    std::string organ;
    std::string id;

    size_t foreground_count() const {
        size_t n = 0;
        for (uint8_t v : grid.data) n += v;
        return n;
    }
};

}  // namespace dualprompt
