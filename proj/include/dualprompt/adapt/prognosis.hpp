#pragma once

#include <array>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "dualprompt/adapt/lora.hpp"
#include "dualprompt/data/manifest.hpp"
#include "dualprompt/metrics/metrics.hpp"
#include "dualprompt/model/checkpoint.hpp"
#include "dualprompt/text/encoder.hpp"
#include "dualprompt/volume/volume.hpp"

namespace dualprompt::adapt {

struct PrognosisConfig {
    int bins = 8;            // discrete-time intervals
    int steps = 60;          // full-batch optimisation steps
    float lr_max = 1e-3f;    // cosine-decayed to zero
    float weight_decay = 1e-5f;
    float sigma = 0.1f;       // ranking temperature
    float lambda_rank = 0.1f; // ranking term weight
    int lora_rank = 4;
    float lora_alpha = 8.0f;
    uint64_t seed = 11;
};

// A risk model for one modality: frozen segmentation backbone plus low-rank
// prompt-path adapters and a small risk head trained with a discrete-time
// survival objective. The record sentence serves as the context prompt.
struct PrognosisModel {
    model::ParamStore params;  // frozen base + adapters + risk head
    model::LoraSpec lora;
    model::BackboneConfig config;
    Modality modality = Modality::CT;
    int bins = 8;
    std::vector<double> bin_edges;           // ascending; bin b covers (edges[b-1], edges[b]]
    std::array<double, 3> data_spacing{1.5, 1.5, 1.5};
    uint64_t base_checksum = 0;  // fingerprint of the base weights pre-adaptation
    double train_ci = 0.0;       // concordance on the training split, for the log
};

// Equal-frequency discretisation of follow-up times: edge k sits at the
// (k+1)/bins quantile, the last edge is +infinity. Throws when times is
// empty or bins < 2.
std::vector<double> equal_frequency_edges(std::vector<double> times, int bins);

// Index of the half-open interval (edges[b-1], edges[b]] containing `time`.
int bin_of(const std::vector<double>& edges, double time);

// Fine-tunes a trained segmentation checkpoint into a per-modality risk
// model. Only adapter factors and the risk head receive gradients; every
// base weight is byte-identical afterwards. Deterministic given the seed.
PrognosisModel finetune_prognosis(const model::Checkpoint& base, const data::Manifest& man,
                                  Modality mod, const TextEncoder& enc, const PrognosisConfig& pc,
                                  std::ostream* log = nullptr);

struct RiskPrediction {
    double risk = 0.0;              // expected bin index under the hazard distribution
    std::vector<double> bin_probs;  // softmax over bins, sums to one
};

// Scores one raw study: preprocess, resize to the network patch, forward
// through the adapted encoder and risk head.
RiskPrediction predict_risk(const PrognosisModel& m, const TextEncoder& enc, const Volume& raw,
                            const EhrRecord& ehr);

// Late fusion over per-modality risks: arithmetic mean.
double fuse_risks(const std::vector<double>& risks);

struct PrognosisEvaluation {
    std::vector<std::string> case_ids;                 // split order
    std::vector<SurvivalLabel> labels;                 // aligned with case_ids
    std::map<std::string, std::vector<double>> risks;  // modality name -> per-case risks
    std::map<std::string, double> ci_per_modality;
    double ci_fused = 0.0;
};

// Concordance of each model and of the mean-fused risk on one split.
PrognosisEvaluation evaluate_prognosis(const std::vector<PrognosisModel>& models,
                                       const TextEncoder& enc, const data::Manifest& man,
                                       const std::string& split);

// Adapter serialization: the checkpoint carries only the adapter factors and
// the risk head, plus the checksum of the base weights it was trained on.
// Reassembly verifies that checksum before merging onto the base.
model::Checkpoint to_adapter_checkpoint(const PrognosisModel& m);
PrognosisModel from_adapter_checkpoint(const model::Checkpoint& adapter,
                                       const model::Checkpoint& base);

}  // namespace dualprompt::adapt
