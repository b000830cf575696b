#pragma once

#include <ostream>
#include <string>
#include <vector>

#include "dualprompt/data/manifest.hpp"
#include "dualprompt/model/checkpoint.hpp"
#include "dualprompt/model/config.hpp"
#include "dualprompt/text/encoder.hpp"

namespace dualprompt::train {

struct EpochStat {
    int epoch = 0;       // 1-based
    double loss = 0.0;   // mean training loss over the epoch's steps
    double val_dsc = 0.0;
    double lr = 0.0;     // learning rate at the epoch's last step
};

struct TrainResult {
    model::Checkpoint best;          // weights at the best validation epoch
    std::vector<EpochStat> history;  // one row per epoch
    int best_epoch = 0;
    double best_val_dsc = -1.0;
};

// Full segmentation training run: AdamW with cosine-decayed learning rate,
// per-epoch validation via sliding-window inference, best-checkpoint
// selection. The text encoder stays frozen; prompt embeddings are cached by
// string. `history_path`, when non-empty, receives one JSON object per line
// per epoch. A non-finite loss aborts with step, learning rate and loss in
// the message. Deterministic for a fixed (manifest, config, seed).
TrainResult train_segmentation(const data::Manifest& man, const model::BackboneConfig& bcfg,
                               const model::TrainConfig& tcfg, const TextEncoder& enc,
                               const std::string& history_path = "",
                               std::ostream* log = nullptr);

}  // namespace dualprompt::train
