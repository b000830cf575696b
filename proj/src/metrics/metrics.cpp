#include "dualprompt/metrics/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace dualprompt {

double dice_score(const Mask& pred, const Mask& gt) {
    if (!pred.grid.same_shape(gt.grid)) throw std::invalid_argument("dice_score: shape mismatch");
    size_t a = 0, b = 0, both = 0;
    const size_t n = pred.grid.size();
    for (size_t i = 0; i < n; ++i) {
        const bool pa = pred.grid.data[i] != 0;
        const bool pb = gt.grid.data[i] != 0;
        a += pa;
        b += pb;
        both += pa && pb;
    }
    if (a + b == 0) return 1.0;
    return 2.0 * static_cast<double>(both) / static_cast<double>(a + b);
}

double concordance_index(const std::vector<double>& risks, const std::vector<SurvivalLabel>& labels) {
    if (risks.size() != labels.size())
        throw std::invalid_argument("concordance_index: risks/labels size mismatch");
    const size_t n = risks.size();
    // integer 2x scoring keeps the result exact: concordant=2, tie=1
    long long numer2 = 0, pairs = 0;
    for (size_t i = 0; i < n; ++i) {
        if (labels[i].event != 1) continue;
        for (size_t j = 0; j < n; ++j) {
            if (i == j || !(labels[i].time < labels[j].time)) continue;
            ++pairs;
            if (risks[i] > risks[j])
                numer2 += 2;
            else if (risks[i] == risks[j])
                numer2 += 1;
        }
    }
    if (pairs == 0) throw std::runtime_error("concordance_index undefined: no comparable pairs");
    return static_cast<double>(numer2) / (2.0 * static_cast<double>(pairs));
}

namespace {

std::vector<double> average_ranks(const std::vector<double>& v) {
    const size_t n = v.size();
    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) { return v[a] < v[b]; });
    std::vector<double> ranks(n);
    size_t i = 0;
    while (i < n) {
        size_t j = i;
        while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
        const double r = 0.5 * (static_cast<double>(i) + static_cast<double>(j)) + 1.0;
        for (size_t k = i; k <= j; ++k) ranks[order[k]] = r;
        i = j + 1;
    }
    return ranks;
}

}  // namespace

double spearman_rho(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size() || a.size() < 2)
        throw std::invalid_argument("spearman_rho: need two equally sized samples");
    const auto ra = average_ranks(a);
    const auto rb = average_ranks(b);
    const double n = static_cast<double>(a.size());
    double ma = 0, mb = 0;
    for (size_t i = 0; i < a.size(); ++i) {
        ma += ra[i];
        mb += rb[i];
    }
    ma /= n;
    mb /= n;
    double cov = 0, va = 0, vb = 0;
    for (size_t i = 0; i < a.size(); ++i) {
        const double da = ra[i] - ma, db = rb[i] - mb;
        cov += da * db;
        va += da * da;
        vb += db * db;
    }
    if (va == 0 || vb == 0) return 0.0;
    return cov / std::sqrt(va * vb);
}

}  // namespace dualprompt
