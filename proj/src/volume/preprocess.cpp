#include "dualprompt/volume/preprocess.hpp"

#include <algorithm>
#include <cmath>

namespace dualprompt {

double percentile(std::vector<float> values, double p) {
    if (values.empty()) throw std::invalid_argument("percentile of empty set");
    std::sort(values.begin(), values.end());
    const size_t n = values.size();
    if (n == 1) return values[0];
    const double rank = p / 100.0 * static_cast<double>(n - 1);
    const size_t lo = static_cast<size_t>(std::floor(rank));
    const size_t hi = std::min(lo + 1, n - 1);
    const double frac = rank - static_cast<double>(lo);
    return values[lo] + frac * (static_cast<double>(values[hi]) - values[lo]);
}

namespace {

std::array<int, 3> resampled_dims(const std::array<int, 3>& dims,
                                  const std::array<double, 3>& old_sp,
                                  const std::array<double, 3>& new_sp) {
    std::array<int, 3> out{};
    for (int a = 0; a < 3; ++a) {
        if (!(new_sp[a] > 0.0)) throw std::invalid_argument("target spacing must be > 0");
        out[a] = std::max(1, static_cast<int>(std::llround(dims[a] * old_sp[a] / new_sp[a])));
    }
    return out;
}

// Center-aligned mapping from output voxel index to input continuous coord.
inline double src_coord(int i, double scale) { return (i + 0.5) * scale - 0.5; }

}  // namespace

Volume resample_isotropic(const Volume& v, const std::array<double, 3>& target_spacing) {
    v.validate();
    const auto& in = v.grid;
    const auto nd = resampled_dims(in.dims, v.spacing, target_spacing);

    Volume out = v;
    out.spacing = target_spacing;
    out.grid = Grid3<float>(nd[0], nd[1], nd[2]);

    std::array<double, 3> scale{};
    for (int a = 0; a < 3; ++a) scale[a] = target_spacing[a] / v.spacing[a];

    const int nx = in.dims[0], ny = in.dims[1], nz = in.dims[2];
    auto clamp_i = [](int i, int n) { return std::min(std::max(i, 0), n - 1); };

    for (int z = 0; z < nd[2]; ++z) {
        const double fz = src_coord(z, scale[2]);
        int z0 = static_cast<int>(std::floor(fz));
        double tz = fz - z0;
        for (int y = 0; y < nd[1]; ++y) {
            const double fy = src_coord(y, scale[1]);
            int y0 = static_cast<int>(std::floor(fy));
            double ty = fy - y0;
            for (int x = 0; x < nd[0]; ++x) {
                const double fx = src_coord(x, scale[0]);
                int x0 = static_cast<int>(std::floor(fx));
                double tx = fx - x0;

                // exact-gather fast path keeps identity resampling bit-exact
                if (tx == 0.0 && ty == 0.0 && tz == 0.0) {
                    out.grid.at(x, y, z) = in.at(clamp_i(x0, nx), clamp_i(y0, ny), clamp_i(z0, nz));
                    continue;
                }
                const int xa = clamp_i(x0, nx), xb = clamp_i(x0 + 1, nx);
                const int ya = clamp_i(y0, ny), yb = clamp_i(y0 + 1, ny);
                const int za = clamp_i(z0, nz), zb = clamp_i(z0 + 1, nz);
                double acc = 0.0;
                const double wz[2] = {1.0 - tz, tz};
                const double wy[2] = {1.0 - ty, ty};
                const double wx[2] = {1.0 - tx, tx};
                const int xs[2] = {xa, xb}, ys[2] = {ya, yb}, zs[2] = {za, zb};
                for (int kz = 0; kz < 2; ++kz)
                    for (int ky = 0; ky < 2; ++ky)
                        for (int kx = 0; kx < 2; ++kx)
                            acc += wz[kz] * wy[ky] * wx[kx] * in.at(xs[kx], ys[ky], zs[kz]);
                out.grid.at(x, y, z) = static_cast<float>(acc);
            }
        }
    }
    return out;
}

Mask resample_mask(const Mask& m, const std::array<double, 3>& old_spacing,
                   const std::array<double, 3>& target_spacing) {
    const auto& in = m.grid;
    const auto nd = resampled_dims(in.dims, old_spacing, target_spacing);

    Mask out;
    out.organ = m.organ;
    out.id = m.id;
    out.grid = Grid3<uint8_t>(nd[0], nd[1], nd[2]);

    std::array<double, 3> scale{};
    for (int a = 0; a < 3; ++a) scale[a] = target_spacing[a] / old_spacing[a];
    auto nearest = [](double f, int n) {
        int i = static_cast<int>(std::floor(f + 0.5));
        return std::min(std::max(i, 0), n - 1);
    };

    for (int z = 0; z < nd[2]; ++z) {
        const int sz = nearest(src_coord(z, scale[2]), in.dims[2]);
        for (int y = 0; y < nd[1]; ++y) {
            const int sy = nearest(src_coord(y, scale[1]), in.dims[1]);
            for (int x = 0; x < nd[0]; ++x) {
                const int sx = nearest(src_coord(x, scale[0]), in.dims[0]);
                out.grid.at(x, y, z) = in.at(sx, sy, sz);
            }
        }
    }
    return out;
}

Volume clip_intensities(const Volume& v) {
    v.validate();
    Volume out = v;
    float lo, hi;
    if (v.modality == Modality::CT) {
        lo = -990.0f;
        hi = 500.0f;
    } else {
        lo = static_cast<float>(percentile(v.grid.data, 2.0));
        hi = static_cast<float>(percentile(v.grid.data, 98.0));
    }
    for (float& x : out.grid.data) x = std::clamp(x, lo, hi);
    return out;
}

Volume znormalize(const Volume& v) {
    v.validate();
    Volume out = v;
    const size_t n = v.grid.data.size();
    double sum = 0.0;
    for (float x : v.grid.data) sum += x;
    const double mean = sum / static_cast<double>(n);
    double ss = 0.0;
    for (float x : v.grid.data) {
        const double d = x - mean;
        ss += d * d;
    }
    const double sd = std::sqrt(ss / static_cast<double>(n));
    if (sd < 1e-8) {
        std::fill(out.grid.data.begin(), out.grid.data.end(), 0.0f);
        return out;
    }
    const double inv = 1.0 / sd;
    for (float& x : out.grid.data) x = static_cast<float>((x - mean) * inv);
    return out;
}

Volume preprocess(const Volume& v, const std::array<double, 3>& target_spacing) {
    return znormalize(clip_intensities(resample_isotropic(v, target_spacing)));
}

Volume resample_to_dims(const Volume& v, const std::array<int, 3>& dims) {
    std::array<double, 3> target{};
    for (int a = 0; a < 3; ++a) {
        if (dims[a] < 1) throw std::invalid_argument("resample_to_dims: dims must be >= 1");
        target[a] = v.spacing[a] * v.grid.dims[a] / static_cast<double>(dims[a]);
    }
    Volume out = resample_isotropic(v, target);
    if (out.grid.dims != dims) throw std::logic_error("resample_to_dims: resize missed target dims");
    return out;
}

}  // namespace dualprompt
