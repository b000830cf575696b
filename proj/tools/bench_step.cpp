// Times one optimizer-step worth of graph work (two forward+backward passes
// at the training patch size) so training defaults can be sized to the host.
#include <chrono>
#include <cstdio>
#include <memory>

#include "dualprompt/core/rng.hpp"
#include "dualprompt/model/forward.hpp"
#include "dualprompt/nn/loss.hpp"
#include "dualprompt/text/encoder.hpp"
#include "dualprompt/text/prompt.hpp"

using namespace dualprompt;

int main() {
    model::BackboneConfig cfg;
    model::ParamStore ps = model::build_backbone_params(cfg);
    TextEncoder enc;
    const auto t1 = enc.encode(make_prompt(Modality::CT, "abdomen", PromptKind::Context));
    const auto t2 = enc.encode(make_prompt(Modality::CT, "liver", PromptKind::Target));

    Rng rng(1);
    const size_t n = size_t(cfg.patch) * cfg.patch * cfg.patch;
    std::vector<float> vox(n);
    for (auto& v : vox) v = float(rng.normal(0.0, 1.0));
    auto tgt = std::make_shared<std::vector<float>>(n, 0.0f);
    for (size_t i = 0; i < n / 8; ++i) (*tgt)[i] = 1.0f;
    std::shared_ptr<const std::vector<float>> target = tgt;

    const int reps = 6;
    double best = 1e30;
    for (int r = 0; r < reps; ++r) {
        const auto start = std::chrono::steady_clock::now();
        nn::Tape<float> tape;
        model::TapeParams<float> tp(tape, ps, true);
        std::vector<nn::Tape<float>::Id> losses;
        for (int s = 0; s < 2; ++s) {  // batch of two on one tape
            auto film = model::film_forward(tp, cfg, t1.vector);
            auto feats = model::backbone_forward(tp, cfg, vox, Modality::CT, &film);
            auto prob = model::head_forward(tp, cfg, feats, t2.vector);
            losses.push_back(nn::seg_loss(tape, prob, target));
        }
        const double loss = tape.val(losses[0])[0];
        tape.backward(tape.mean_scalars(losses));
        const auto end = std::chrono::steady_clock::now();
        const double ms = std::chrono::duration<double, std::milli>(end - start).count();
        best = std::min(best, ms);
        std::printf("rep %d: %.1f ms (loss %.4f)\n", r, ms, loss);
    }
    std::printf("best step time: %.1f ms -> %.1f steps/min\n", best, 60000.0 / best);
    return 0;
}
