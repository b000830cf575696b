#pragma once

#include <memory>
#include <utility>

#include "dualprompt/nn/tape.hpp"

namespace dualprompt::nn {

template <class S>
struct SegLossParts {
    S dice = S(0);
    S bce = S(0);
};

// Segmentation loss on a probability map: soft Dice plus voxel-mean binary
// cross entropy, equally weighted. `target` holds 0/1 voxel labels matching
// the probability map element count. Probabilities are clamped to
// [1e-7, 1 - 1e-7] inside the BCE term; clamped voxels get zero gradient.
template <class S>
typename Tape<S>::Id seg_loss(Tape<S>& t, typename Tape<S>::Id prob,
                              std::shared_ptr<const std::vector<S>> target,
                              SegLossParts<S>* parts = nullptr) {
    using Id = typename Tape<S>::Id;
    const auto pv = t.val(prob);
    if (!target || target->size() != pv.size())
        throw std::invalid_argument("seg_loss: target size mismatch");
    const size_t n = pv.size();
    constexpr double kEps = 1e-5;    // soft Dice smoothing
    constexpr double kClamp = 1e-7;  // BCE probability floor

    double inter = 0.0, psum = 0.0, msum = 0.0, bce = 0.0;
    for (size_t i = 0; i < n; ++i) {
        const double p = pv[i], m = (*target)[i];
        inter += p * m;
        psum += p;
        msum += m;
        const double pc = std::min(1.0 - kClamp, std::max(kClamp, p));
        bce -= m * std::log(pc) + (1.0 - m) * std::log(1.0 - pc);
    }
    bce /= double(n);
    const double num = 2.0 * inter + kEps;
    const double den = psum + msum + kEps;
    const double dice_term = 1.0 - num / den;
    if (parts) {
        parts->dice = S(dice_term);
        parts->bce = S(bce);
    }

    Id y = t.alloc(Shape::vec(1), t.node(prob).rg);
    t.mutable_node(y).v[0] = S(dice_term + bce);
    if (t.node(prob).rg)
        t.push_backward([&t, prob, y, target, n, num, den] {
            const S g = t.grad(y)[0];
            const auto pv = t.val(prob);
            S* pg = t.mutable_node(prob).g.data();
            const double inv_n = 1.0 / double(n);
            for (size_t i = 0; i < n; ++i) {
                const double p = pv[i], m = (*target)[i];
                // d(1 - num/den)/dp = -(2m*den - num) / den^2
                double d = -(2.0 * m * den - num) / (den * den);
                if (p > kClamp && p < 1.0 - kClamp)
                    d += inv_n * (-(m / p) + (1.0 - m) / (1.0 - p));
                pg[i] += g * S(d);
            }
        });
    return y;
}

struct DeepHitLabel {
    int bin = 0;        // discrete time interval index
    bool event = false; // true: event observed in `bin`; false: censored there
};

// Discrete-time survival loss over per-subject probability rows [n, bins]:
// negative log likelihood plus an exponential ranking penalty on cumulative
// incidence at the earlier subject's bin. Rows must already be normalized
// (softmax upstream); a loose 1e-3 tolerance keeps finite-difference probes
// of this op well defined.
template <class S>
typename Tape<S>::Id deephit_loss(Tape<S>& t, typename Tape<S>::Id probs,
                                  const std::vector<DeepHitLabel>& labels,
                                  S sigma = S(0.1), S lambda_rank = S(0.1)) {
    using Id = typename Tape<S>::Id;
    const Shape sh = t.shape(probs);
    if (sh.rank != 2) throw std::invalid_argument("deephit_loss: probs must be [n, bins]");
    const int n = sh.d[0], bins = sh.d[1];
    if (static_cast<int>(labels.size()) != n)
        throw std::invalid_argument("deephit_loss: label count mismatch");
    const auto pv = t.val(probs);
    constexpr double kTiny = 1e-7;

    for (int i = 0; i < n; ++i) {
        if (labels[i].bin < 0 || labels[i].bin >= bins)
            throw std::invalid_argument("deephit_loss: bin index out of range");
        double s = 0.0;
        for (int b = 0; b < bins; ++b) s += pv[size_t(i) * bins + b];
        if (std::abs(s - 1.0) > 1e-3)
            throw std::invalid_argument("deephit_loss: probability row does not sum to one");
    }

    // cumulative incidence F_i(k) = sum of p_i[0..k]
    auto cif_at = [&](int i, int k) {
        double f = 0.0;
        for (int b = 0; b <= k; ++b) f += pv[size_t(i) * bins + b];
        return f;
    };

    double nll = 0.0;
    for (int i = 0; i < n; ++i) {
        const int k = labels[i].bin;
        if (labels[i].event)
            nll -= std::log(std::max(kTiny, double(pv[size_t(i) * bins + k])));
        else
            nll -= std::log(std::max(kTiny, 1.0 - cif_at(i, k)));
    }
    nll /= double(n);

    // Comparable pairs: i saw the event strictly before j's bin.
    std::vector<std::pair<int, int>> pairs;
    for (int i = 0; i < n; ++i) {
        if (!labels[i].event) continue;
        for (int j = 0; j < n; ++j)
            if (labels[i].bin < labels[j].bin) pairs.emplace_back(i, j);
    }
    // logistic (softplus) penalty on the incidence margin; saturates to zero
    // for well-ordered pairs
    auto softplus = [](double z) { return z > 30.0 ? z : std::log1p(std::exp(z)); };
    double rank = 0.0;
    for (auto [i, j] : pairs)
        rank += softplus(-(cif_at(i, labels[i].bin) - cif_at(j, labels[i].bin)) /
                         double(sigma));
    if (!pairs.empty()) rank /= double(pairs.size());

    Id y = t.alloc(Shape::vec(1), t.node(probs).rg);
    t.mutable_node(y).v[0] = S(nll + double(lambda_rank) * rank);

    if (t.node(probs).rg)
        t.push_backward([&t, probs, y, labels, pairs, n, bins, sigma, lambda_rank] {
            const S g = t.grad(y)[0];
            const auto pv = t.val(probs);
            S* pg = t.mutable_node(probs).g.data();
            auto cif_at = [&](int i, int k) {
                double f = 0.0;
                for (int b = 0; b <= k; ++b) f += pv[size_t(i) * bins + b];
                return f;
            };
            const double inv_n = 1.0 / double(n);
            for (int i = 0; i < n; ++i) {
                const int k = labels[i].bin;
                if (labels[i].event) {
                    const double p = pv[size_t(i) * bins + k];
                    if (p > kTiny) pg[size_t(i) * bins + k] += g * S(-inv_n / p);
                } else {
                    const double surv = 1.0 - cif_at(i, k);
                    if (surv > kTiny)
                        for (int b = 0; b <= k; ++b)
                            pg[size_t(i) * bins + b] += g * S(inv_n / surv);
                }
            }
            if (!pairs.empty()) {
                const double w = double(lambda_rank) / double(pairs.size());
                for (auto [i, j] : pairs) {
                    const int k = labels[i].bin;
                    // d softplus(-m/sigma)/dm = -sigmoid(-m/sigma)/sigma
                    const double z = -(cif_at(i, k) - cif_at(j, k)) / double(sigma);
                    const double e = 1.0 / (1.0 + std::exp(-z));
                    const double d = w * e / double(sigma);
                    for (int b = 0; b <= k; ++b) {
                        pg[size_t(i) * bins + b] += g * S(-d);
                        pg[size_t(j) * bins + b] += g * S(d);
                    }
                }
            }
        });
    return y;
}

}  // namespace dualprompt::nn
