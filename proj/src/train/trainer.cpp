#include "dualprompt/train/trainer.hpp"

#include <cmath>
#include <fstream>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

#include "json.hpp"

#include "dualprompt/infer/infer.hpp"
#include "dualprompt/model/forward.hpp"
#include "dualprompt/nn/loss.hpp"
#include "dualprompt/nn/tape.hpp"
#include "dualprompt/train/optimizer.hpp"
#include "dualprompt/train/sampler.hpp"

namespace dualprompt::train {

TrainResult train_segmentation(const data::Manifest& man, const model::BackboneConfig& bcfg,
                               const model::TrainConfig& tcfg, const TextEncoder& enc,
                               const std::string& history_path, std::ostream* log) {
    bcfg.validate();
    if (enc.dim() != bcfg.text_dim)
        throw std::invalid_argument("train_segmentation: encoder dim != config text_dim");

    model::ParamStore ps = model::build_backbone_params(bcfg);
    Sampler sampler(man, "train", bcfg, tcfg);
    Rng rng(tcfg.seed);
    AdamW opt(tcfg.beta1, tcfg.beta2, tcfg.adam_eps, tcfg.weight_decay);
    const int64_t total_steps = static_cast<int64_t>(tcfg.epochs) * tcfg.steps_per_epoch;

    // The encoder is frozen: embeddings are pure functions of the prompt
    // string, so they are computed once and reused.
    std::unordered_map<std::string, std::vector<float>> emb_cache;
    const auto embed = [&](const std::string& s) -> const std::vector<float>& {
        auto it = emb_cache.find(s);
        if (it == emb_cache.end()) it = emb_cache.emplace(s, enc.encode(s).vector).first;
        return it->second;
    };
    const uint64_t encoder_fingerprint = enc.table_checksum();

    std::ofstream hist;
    if (!history_path.empty()) {
        hist.open(history_path);
        if (!hist) throw std::runtime_error("cannot open history file: " + history_path);
    }

    TrainResult res;
    int64_t step = 0;
    for (int epoch = 1; epoch <= tcfg.epochs; ++epoch) {
        double loss_sum = 0.0;
        double last_lr = 0.0;
        for (int s = 0; s < tcfg.steps_per_epoch; ++s, ++step) {
            const double lr = model::lr_at(tcfg.lr_max, step, total_steps);
            last_lr = lr;

            nn::Tape<float> t;
            model::TapeParams<float> tp(t, ps, true);
            std::vector<nn::Tape<float>::Id> sample_losses;
            for (int b = 0; b < tcfg.batch_size; ++b) {
                TrainSample smp = sampler.draw(rng);
                const auto fv = model::film_forward(tp, bcfg, embed(smp.t1_text));
                const auto feats = model::backbone_forward(tp, bcfg, smp.patch, smp.modality, &fv);
                const auto prob = model::head_forward(tp, bcfg, feats, embed(smp.t2_text));
                auto target = std::make_shared<const std::vector<float>>(std::move(smp.target));
                sample_losses.push_back(nn::seg_loss(t, prob, target));
            }
            const auto loss = t.mean_scalars(sample_losses);
            const double lv = t.val(loss)[0];
            if (!std::isfinite(lv)) {
                std::ostringstream msg;
                msg << "training aborted: non-finite loss at step " << step << " (lr " << lr
                    << ", loss " << lv << ")";
                throw std::runtime_error(msg.str());
            }
            t.backward(loss);
            std::unordered_map<std::string, std::vector<float>> grads;
            tp.export_grads(grads);
            opt.step(ps, grads, lr);
            loss_sum += lv;
        }

        const auto ev = infer::evaluate_split(ps, bcfg, enc, man, "val");
        EpochStat st;
        st.epoch = epoch;
        st.loss = loss_sum / tcfg.steps_per_epoch;
        st.val_dsc = ev.mean_dsc;
        st.lr = last_lr;
        res.history.push_back(st);

        if (hist) {
            nlohmann::json row{
                {"epoch", st.epoch}, {"loss", st.loss}, {"val_dsc", st.val_dsc}, {"lr", st.lr}};
            hist << row.dump() << "\n";
            hist.flush();
        }
        if (log)
            (*log) << "epoch " << st.epoch << "/" << tcfg.epochs << "  loss " << st.loss
                   << "  val_dsc " << st.val_dsc << "  lr " << st.lr << "\n";

        if (st.val_dsc > res.best_val_dsc) {
            res.best_val_dsc = st.val_dsc;
            res.best_epoch = epoch;
            res.best.params = ps;
        }
    }

    if (enc.table_checksum() != encoder_fingerprint)
        throw std::logic_error("text encoder changed during training; it must stay frozen");

    res.best.kind = "segmentation";
    res.best.config = bcfg;
    res.best.text_vocab = enc.vocab();
    res.best.text_dim = enc.dim();
    res.best.text_seed = enc.seed();
    res.best.extra = nlohmann::json{
        {"best_epoch", res.best_epoch},
        {"best_val_dsc", res.best_val_dsc},
        {"train",
         {{"epochs", tcfg.epochs},
          {"steps_per_epoch", tcfg.steps_per_epoch},
          {"batch_size", tcfg.batch_size},
          {"lr_max", tcfg.lr_max},
          {"weight_decay", tcfg.weight_decay},
          {"seed", tcfg.seed}}}};
    return res;
}

}  // namespace dualprompt::train
