#include "dualprompt/infer/infer.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "dualprompt/metrics/metrics.hpp"
#include "dualprompt/model/forward.hpp"
#include "dualprompt/nn/tape.hpp"
#include "dualprompt/text/prompt.hpp"
#include "dualprompt/volume/io.hpp"
#include "dualprompt/volume/preprocess.hpp"

namespace dualprompt::infer {

namespace {

// Window corners along one axis: stride patch/2, last window snapped to the
// border so every voxel is covered at least once.
std::vector<int> window_origins(int dim, int patch) {
    if (dim <= patch) return {0};
    const int stride = std::max(1, patch / 2);
    std::vector<int> out;
    for (int o = 0; o < dim - patch; o += stride) out.push_back(o);
    out.push_back(dim - patch);
    return out;
}

}  // namespace

std::map<std::string, Volume> predict_probabilities(
    const model::ParamStore& ps, const model::BackboneConfig& cfg, const TextEncoder& enc,
    const Volume& prepped, const std::string& t1, const std::vector<TargetPrompt>& targets) {
    if (targets.empty()) throw std::invalid_argument("predict_probabilities: no targets");
    const auto& dims = prepped.grid.dims;
    const int p = cfg.patch;

    const std::vector<float> e1 = enc.encode(t1).vector;
    std::vector<std::vector<float>> e2(targets.size());
    for (size_t k = 0; k < targets.size(); ++k) e2[k] = enc.encode(targets[k].t2).vector;

    const size_t nvox = prepped.grid.size();
    std::vector<std::vector<double>> accum(targets.size(), std::vector<double>(nvox, 0.0));
    std::vector<double> weight(nvox, 0.0);

    const auto ox = window_origins(dims[0], p);
    const auto oy = window_origins(dims[1], p);
    const auto oz = window_origins(dims[2], p);

    std::vector<float> patch(static_cast<size_t>(p) * p * p);
    for (int wz : oz)
        for (int wy : oy)
            for (int wx : ox) {
                std::fill(patch.begin(), patch.end(), 0.0f);
                for (int z = 0; z < p; ++z)
                    for (int y = 0; y < p; ++y)
                        for (int x = 0; x < p; ++x) {
                            const int gx = wx + x, gy = wy + y, gz = wz + z;
                            if (gx >= dims[0] || gy >= dims[1] || gz >= dims[2]) continue;
                            patch[static_cast<size_t>(x) + static_cast<size_t>(p) * (y + static_cast<size_t>(p) * z)] =
                                prepped.grid.at(gx, gy, gz);
                        }

                nn::Tape<float> t;
                model::TapeParams<float> tp(t, ps, false);
                const auto fv = model::film_forward(tp, cfg, e1);
                const auto feats = model::backbone_forward(tp, cfg, patch, prepped.modality, &fv);
                for (size_t k = 0; k < targets.size(); ++k) {
                    const auto prob = model::head_forward(tp, cfg, feats, e2[k]);
                    const auto& pv = t.val(prob);
                    for (int z = 0; z < p; ++z)
                        for (int y = 0; y < p; ++y)
                            for (int x = 0; x < p; ++x) {
                                const int gx = wx + x, gy = wy + y, gz = wz + z;
                                if (gx >= dims[0] || gy >= dims[1] || gz >= dims[2]) continue;
                                const size_t src = static_cast<size_t>(x) +
                                                   static_cast<size_t>(p) * (y + static_cast<size_t>(p) * z);
                                const size_t dst = prepped.grid.index(gx, gy, gz);
                                accum[k][dst] += pv[src];
                                if (k == 0) weight[dst] += 1.0;
                            }
                }
            }

    std::map<std::string, Volume> out;
    for (size_t k = 0; k < targets.size(); ++k) {
        Volume v;
        v.grid = Grid3<float>(dims[0], dims[1], dims[2]);
        v.spacing = prepped.spacing;
        v.modality = prepped.modality;
        v.region = prepped.region;
        v.id = prepped.id;
        for (size_t i = 0; i < nvox; ++i)
            v.grid.data[i] = static_cast<float>(accum[k][i] / weight[i]);
        out.emplace(targets[k].name, std::move(v));
    }
    return out;
}

Mask threshold_mask(const Volume& prob, const std::string& organ, float threshold) {
    Mask m;
    m.grid = Grid3<uint8_t>(prob.grid.dims[0], prob.grid.dims[1], prob.grid.dims[2]);
    m.organ = organ;
    m.id = prob.id;
    for (size_t i = 0; i < prob.grid.data.size(); ++i)
        m.grid.data[i] = prob.grid.data[i] > threshold ? 1 : 0;
    return m;
}

PromptPolicy PromptPolicy::correct() {
    PromptPolicy p;
    p.context = [](Modality m, const std::string& region) {
        return make_prompt(m, region, PromptKind::Context);
    };
    p.target = [](Modality m, const std::string& organ) {
        return make_prompt(m, organ, PromptKind::Target);
    };
    return p;
}

SplitEvaluation evaluate_split(const model::ParamStore& ps, const model::BackboneConfig& cfg,
                               const TextEncoder& enc, const data::Manifest& man,
                               const std::string& split, const PromptPolicy& policy) {
    SplitEvaluation ev;
    std::map<std::string, std::pair<double, int>> organ_acc;

    for (const data::CaseEntry* ce : man.split(split)) {
        const auto organs_it = man.regions.find(ce->region);
        if (organs_it == man.regions.end())
            throw std::runtime_error("case " + ce->id + " references unknown region " + ce->region);
        const auto& organs = organs_it->second;

        // Reference masks are shared across modalities; load them once.
        std::map<std::string, Mask> gt;
        std::array<double, 3> raw_spacing{1.0, 1.0, 1.0};
        bool have_spacing = false;

        for (const auto& [mod_name, rel] : ce->volume_paths) {
            const Modality mod = modality_from_string(mod_name);
            Volume raw = load_volume(man.resolve(rel));
            raw_spacing = raw.spacing;
            if (!have_spacing) {
                for (const auto& [organ, mrel] : ce->mask_paths) {
                    Mask m = load_mask(man.resolve(mrel));
                    gt.emplace(organ, resample_mask(m, raw_spacing, man.spacing));
                }
                have_spacing = true;
            }
            const Volume prepped = preprocess(raw, man.spacing);

            std::vector<TargetPrompt> targets;
            for (const auto& organ : organs) targets.push_back({organ, policy.target(mod, organ)});
            const auto probs =
                predict_probabilities(ps, cfg, enc, prepped, policy.context(mod, ce->region), targets);

            for (const auto& organ : organs) {
                const Mask pred = threshold_mask(probs.at(organ), organ);
                CaseOrganResult row;
                row.case_id = ce->id;
                row.region = ce->region;
                row.organ = organ;
                row.modality = mod;
                row.dsc = dice_score(pred, gt.at(organ));
                auto& [sum, n] = organ_acc[organ];
                sum += row.dsc;
                ++n;
                ev.rows.push_back(std::move(row));
            }
        }
    }

    if (ev.rows.empty()) throw std::invalid_argument("split '" + split + "' produced no results");
    double total = 0.0;
    for (const auto& [organ, acc] : organ_acc) {
        ev.per_organ_mean[organ] = acc.first / acc.second;
        total += ev.per_organ_mean[organ];
    }
    ev.mean_dsc = total / static_cast<double>(organ_acc.size());
    return ev;
}

}  // namespace dualprompt::infer
