#include "dualprompt/adapt/prognosis.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <sstream>
#include <stdexcept>

#include "dualprompt/model/forward.hpp"
#include "dualprompt/nn/loss.hpp"
#include "dualprompt/nn/tape.hpp"
#include "dualprompt/text/prompt.hpp"
#include "dualprompt/train/optimizer.hpp"
#include "dualprompt/volume/io.hpp"
#include "dualprompt/volume/preprocess.hpp"

namespace dualprompt::adapt {

std::vector<double> equal_frequency_edges(std::vector<double> times, int bins) {
    if (times.empty()) throw std::invalid_argument("equal_frequency_edges: no times");
    if (bins < 2) throw std::invalid_argument("equal_frequency_edges: bins must be >= 2");
    std::sort(times.begin(), times.end());
    std::vector<double> edges(bins);
    const size_t n = times.size();
    for (int k = 0; k + 1 < bins; ++k) {
        // inclusive-rank quantile at (k+1)/bins
        const double rank = (static_cast<double>(k + 1) / bins) * static_cast<double>(n - 1);
        const size_t lo = static_cast<size_t>(rank);
        const double frac = rank - static_cast<double>(lo);
        const size_t hi = std::min(lo + 1, n - 1);
        edges[k] = times[lo] + frac * (times[hi] - times[lo]);
    }
    edges[bins - 1] = std::numeric_limits<double>::infinity();
    return edges;
}

int bin_of(const std::vector<double>& edges, double time) {
    for (size_t b = 0; b < edges.size(); ++b)
        if (time <= edges[b]) return static_cast<int>(b);
    return static_cast<int>(edges.size()) - 1;
}

namespace {

// Preprocess a raw study and resize it onto the patch grid the network
// expects: target spacing per axis is chosen so the resample lands exactly
// on patch voxels per side.
std::vector<float> patch_input(const Volume& raw, const std::array<double, 3>& data_spacing,
                               int patch) {
    const Volume prepped = preprocess(raw, data_spacing);
    return resample_to_dims(prepped, {patch, patch, patch}).grid.data;
}

std::string record_prompt(const EhrRecord& ehr, Modality mod, const std::string& region) {
    EhrRecord r = ehr;
    r.modality = mod;
    if (!r.region) r.region = region;
    return serialize_ehr(r);
}

RiskPrediction risk_from_probs(std::span<const float> probs) {
    RiskPrediction rp;
    rp.bin_probs.assign(probs.begin(), probs.end());
    double sum = 0.0;
    for (size_t b = 0; b < rp.bin_probs.size(); ++b) {
        rp.risk += static_cast<double>(b) * rp.bin_probs[b];
        sum += rp.bin_probs[b];
    }
    if (std::abs(sum - 1.0) > 1e-5)
        throw std::runtime_error("risk_from_probs: bin probabilities do not sum to one");
    return rp;
}

}  // namespace

PrognosisModel finetune_prognosis(const model::Checkpoint& base, const data::Manifest& man,
                                  Modality mod, const TextEncoder& enc, const PrognosisConfig& pc,
                                  std::ostream* log) {
    if (base.kind != "segmentation")
        throw std::invalid_argument("finetune_prognosis: base checkpoint must be a segmentation model");
    const model::BackboneConfig cfg = base.config;
    const std::string mod_name = to_string(mod);

    PrognosisModel m;
    m.config = cfg;
    m.modality = mod;
    m.bins = pc.bins;
    m.data_spacing = man.spacing;
    m.base_checksum = model::params_checksum(base.params);
    m.params = base.params;
    m.lora = default_lora_spec(cfg);
    m.lora.rank = pc.lora_rank;
    m.lora.alpha = pc.lora_alpha;
    apply_lora(m.params, m.lora, pc.seed);
    model::add_prognosis_params(m.params, cfg, pc.bins, pc.seed);
    set_trainable_prefixes(m.params, {"lora.", "prog."});

    // Assemble the full training batch once: inputs, prompts, labels.
    std::vector<std::vector<float>> inputs;
    std::vector<std::vector<float>> prompts;
    std::vector<SurvivalLabel> survival;
    std::vector<double> times;
    for (const data::CaseEntry* ce : man.split("train")) {
        const auto it = ce->volume_paths.find(mod_name);
        if (it == ce->volume_paths.end())
            throw std::runtime_error("case " + ce->id + " lacks a " + mod_name + " volume");
        inputs.push_back(patch_input(load_volume(man.resolve(it->second)), man.spacing, cfg.patch));
        prompts.push_back(enc.encode(record_prompt(ce->ehr, mod, ce->region)).vector);
        survival.push_back(ce->survival);
        times.push_back(ce->survival.time);
    }
    if (inputs.size() < 2)
        throw std::invalid_argument("finetune_prognosis: need at least two training cases");

    m.bin_edges = equal_frequency_edges(times, pc.bins);
    std::vector<nn::DeepHitLabel> labels(survival.size());
    for (size_t i = 0; i < survival.size(); ++i)
        labels[i] = {bin_of(m.bin_edges, survival[i].time), survival[i].event == 1};

    train::AdamW opt(0.9f, 0.999f, 1e-8f, pc.weight_decay);
    for (int step = 0; step < pc.steps; ++step) {
        const double lr = model::lr_at(pc.lr_max, step, pc.steps);
        nn::Tape<float> t;
        model::TapeParams<float> tp(t, m.params, true, &m.lora);
        std::vector<nn::Tape<float>::Id> rows;
        for (size_t i = 0; i < inputs.size(); ++i) {
            const auto fv = model::film_forward(tp, cfg, prompts[i]);
            const auto feats =
                model::backbone_forward(tp, cfg, inputs[i], mod, &fv, /*encoder_only=*/true);
            rows.push_back(t.softmax_vec(model::prognosis_logits(tp, feats)));
        }
        const auto loss =
            nn::deephit_loss(t, t.stack_rows(rows), labels, pc.sigma, pc.lambda_rank);
        const double lv = t.val(loss)[0];
        if (!std::isfinite(lv)) {
            std::ostringstream msg;
            msg << "prognosis fine-tune aborted: non-finite loss at step " << step << " (lr " << lr
                << ", loss " << lv << ")";
            throw std::runtime_error(msg.str());
        }
        t.backward(loss);
        std::unordered_map<std::string, std::vector<float>> grads;
        tp.export_grads(grads);
        opt.step(m.params, grads, lr);
        if (log && (step % 10 == 0 || step + 1 == pc.steps))
            (*log) << mod_name << " step " << step << "  loss " << lv << "  lr " << lr << "\n";
    }

    // Training-split concordance, recorded for the run log.
    std::vector<double> train_risks;
    for (size_t i = 0; i < inputs.size(); ++i) {
        nn::Tape<float> t;
        model::TapeParams<float> tp(t, m.params, false, &m.lora);
        const auto fv = model::film_forward(tp, cfg, prompts[i]);
        const auto feats = model::backbone_forward(tp, cfg, inputs[i], mod, &fv, true);
        const auto prob = t.softmax_vec(model::prognosis_logits(tp, feats));
        train_risks.push_back(risk_from_probs(t.val(prob)).risk);
    }
    m.train_ci = concordance_index(train_risks, survival);
    if (log) (*log) << mod_name << " train concordance " << m.train_ci << "\n";
    return m;
}

RiskPrediction predict_risk(const PrognosisModel& m, const TextEncoder& enc, const Volume& raw,
                            const EhrRecord& ehr) {
    const auto vox = patch_input(raw, m.data_spacing, m.config.patch);
    const auto e1 = enc.encode(record_prompt(ehr, m.modality, raw.region)).vector;
    nn::Tape<float> t;
    model::TapeParams<float> tp(t, m.params, false, &m.lora);
    const auto fv = model::film_forward(tp, m.config, e1);
    const auto feats = model::backbone_forward(tp, m.config, vox, m.modality, &fv, true);
    const auto prob = t.softmax_vec(model::prognosis_logits(tp, feats));
    return risk_from_probs(t.val(prob));
}

double fuse_risks(const std::vector<double>& risks) {
    if (risks.empty()) throw std::invalid_argument("fuse_risks: empty");
    double sum = 0.0;
    for (double r : risks) sum += r;
    return sum / static_cast<double>(risks.size());
}

model::Checkpoint to_adapter_checkpoint(const PrognosisModel& m) {
    model::Checkpoint c;
    c.kind = "adapter";
    c.config = m.config;
    for (const auto& e : m.params.entries()) {
        if (e.name.rfind("lora.", 0) != 0 && e.name.rfind("prog.", 0) != 0) continue;
        auto& n = c.params.add(e.name, e.shape, e.trainable);
        n.data = e.data;
    }
    std::vector<double> interior(m.bin_edges.begin(), m.bin_edges.end() - 1);
    c.extra = nlohmann::json{{"base_params_checksum", m.base_checksum},
                             {"modality", to_string(m.modality)},
                             {"bins", m.bins},
                             {"interior_bin_edges", interior},
                             {"data_spacing", m.data_spacing},
                             {"train_ci", m.train_ci},
                             {"lora",
                              {{"rank", m.lora.rank},
                               {"alpha", m.lora.alpha},
                               {"targets", m.lora.targets}}}};
    return c;
}

PrognosisModel from_adapter_checkpoint(const model::Checkpoint& adapter,
                                       const model::Checkpoint& base) {
    if (adapter.kind != "adapter")
        throw FormatError("expected an adapter checkpoint, got kind '" + adapter.kind + "'");
    if (base.kind != "segmentation")
        throw FormatError("expected a segmentation base checkpoint, got kind '" + base.kind + "'");
    const uint64_t want = adapter.extra.at("base_params_checksum").get<uint64_t>();
    const uint64_t have = model::params_checksum(base.params);
    if (want != have)
        throw FormatError("adapter was trained on different base weights (checksum mismatch)");

    PrognosisModel m;
    m.config = base.config;
    m.modality = modality_from_string(adapter.extra.at("modality").get<std::string>());
    m.bins = adapter.extra.at("bins").get<int>();
    m.bin_edges = adapter.extra.at("interior_bin_edges").get<std::vector<double>>();
    m.bin_edges.push_back(std::numeric_limits<double>::infinity());
    m.data_spacing = adapter.extra.at("data_spacing").get<std::array<double, 3>>();
    m.base_checksum = want;
    m.train_ci = adapter.extra.value("train_ci", 0.0);
    m.lora.rank = adapter.extra.at("lora").at("rank").get<int>();
    m.lora.alpha = adapter.extra.at("lora").at("alpha").get<float>();
    m.lora.targets = adapter.extra.at("lora").at("targets").get<std::vector<std::string>>();

    m.params = base.params;
    for (auto& e : m.params.entries()) e.trainable = false;
    for (const auto& e : adapter.params.entries()) {
        auto& n = m.params.add(e.name, e.shape, e.trainable);
        n.data = e.data;
    }
    return m;
}

PrognosisEvaluation evaluate_prognosis(const std::vector<PrognosisModel>& models,
                                       const TextEncoder& enc, const data::Manifest& man,
                                       const std::string& split) {
    if (models.empty()) throw std::invalid_argument("evaluate_prognosis: no models");
    PrognosisEvaluation ev;
    for (const data::CaseEntry* ce : man.split(split)) {
        ev.case_ids.push_back(ce->id);
        ev.labels.push_back(ce->survival);
        for (const auto& m : models) {
            const std::string mod_name = to_string(m.modality);
            const auto it = ce->volume_paths.find(mod_name);
            if (it == ce->volume_paths.end())
                throw std::runtime_error("case " + ce->id + " lacks a " + mod_name + " volume");
            const Volume raw = load_volume(man.resolve(it->second));
            ev.risks[mod_name].push_back(predict_risk(m, enc, raw, ce->ehr).risk);
        }
    }
    std::vector<double> fused(ev.case_ids.size(), 0.0);
    for (const auto& m : models) {
        const std::string mod_name = to_string(m.modality);
        const auto& r = ev.risks.at(mod_name);
        ev.ci_per_modality[mod_name] = concordance_index(r, ev.labels);
        for (size_t i = 0; i < r.size(); ++i) fused[i] += r[i];
    }
    for (double& f : fused) f /= static_cast<double>(models.size());
    ev.ci_fused = concordance_index(fused, ev.labels);
    return ev;
}

}  // namespace dualprompt::adapt
