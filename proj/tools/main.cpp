// Command-line entry point: dataset generation, training, inference,
// prompt-sensitivity studies, feature export and survival fine-tuning.
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"

#include "dualprompt/adapt/prognosis.hpp"
#include "dualprompt/data/manifest.hpp"
#include "dualprompt/infer/ablation.hpp"
#include "dualprompt/infer/features.hpp"
#include "dualprompt/infer/infer.hpp"
#include "dualprompt/model/checkpoint.hpp"
#include "dualprompt/phantom/phantom.hpp"
#include "dualprompt/text/prompt.hpp"
#include "dualprompt/train/trainer.hpp"
#include "dualprompt/volume/io.hpp"
#include "dualprompt/volume/preprocess.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace dualprompt;

namespace {

void write_json_report(const std::string& path, const json& j) {
    if (path.empty()) return;
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open report file: " + path);
    out << j.dump(2) << "\n";
}

void print_table(const std::vector<std::string>& header,
                 const std::vector<std::vector<std::string>>& rows) {
    std::vector<size_t> width(header.size());
    for (size_t c = 0; c < header.size(); ++c) width[c] = header[c].size();
    for (const auto& r : rows)
        for (size_t c = 0; c < r.size() && c < width.size(); ++c)
            width[c] = std::max(width[c], r[c].size());
    auto line = [&](const std::vector<std::string>& cells) {
        std::ostringstream os;
        for (size_t c = 0; c < cells.size(); ++c)
            os << (c ? "  " : "") << std::left << std::setw(static_cast<int>(width[c])) << cells[c];
        std::cout << os.str() << "\n";
    };
    line(header);
    std::vector<std::string> rule(header.size());
    for (size_t c = 0; c < header.size(); ++c) rule[c] = std::string(width[c], '-');
    line(rule);
    for (const auto& r : rows) line(r);
}

std::string fmt(double v, int prec = 4) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(prec) << v;
    return os.str();
}

// Optional JSON config file with "backbone" and "train" sections; either may
// be omitted.
void load_config_file(const std::string& path, model::BackboneConfig& bcfg,
                      model::TrainConfig& tcfg) {
    if (path.empty()) return;
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config file: " + path);
    json j;
    in >> j;
    if (j.contains("backbone")) bcfg = j.at("backbone").get<model::BackboneConfig>();
    if (j.contains("train")) tcfg = j.at("train").get<model::TrainConfig>();
}

TextEncoder encoder_for(const model::Checkpoint& c) {
    return TextEncoder(c.text_vocab, c.text_dim, c.text_seed);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"prompt-conditioned multi-organ segmentation and survival scoring"};
    app.require_subcommand(1);

    // ---- gen ----------------------------------------------------------
    auto* gen = app.add_subcommand("gen", "synthesise a multi-modality study cohort");
    struct {
        std::string out;
        int cases = 24;
        uint64_t seed = 42;
    } g;
    gen->add_option("--out", g.out, "output directory")->required();
    gen->add_option("--cases", g.cases, "number of studies");
    gen->add_option("--seed", g.seed, "generation seed");
    gen->callback([&] {
        phantom::PhantomConfig pc;
        pc.cases = g.cases;
        pc.seed = g.seed;
        fs::create_directories(g.out);
        const auto man = phantom::generate_dataset(pc, g.out);
        json report{{"manifest", (fs::path(g.out) / "manifest.json").string()},
                    {"cases", man.cases.size()},
                    {"train", man.split("train").size()},
                    {"val", man.split("val").size()},
                    {"test", man.split("test").size()}};
        std::cout << report.dump(2) << "\n";
    });

    // ---- train --------------------------------------------------------
    auto* train_cmd = app.add_subcommand("train", "train the segmentation model");
    struct {
        std::string manifest, out, config;
        int epochs = -1, steps = -1, batch = -1;
        double lr = -1.0;
        int64_t seed = -1;
    } tr;
    train_cmd->add_option("--manifest", tr.manifest, "dataset manifest")->required();
    train_cmd->add_option("--out", tr.out, "output directory")->required();
    train_cmd->add_option("--config", tr.config, "JSON config file");
    train_cmd->add_option("--epochs", tr.epochs, "override epoch count");
    train_cmd->add_option("--steps-per-epoch", tr.steps, "override steps per epoch");
    train_cmd->add_option("--batch-size", tr.batch, "override batch size");
    train_cmd->add_option("--lr-max", tr.lr, "override peak learning rate");
    train_cmd->add_option("--seed", tr.seed, "override training seed");
    train_cmd->callback([&] {
        model::BackboneConfig bcfg;
        model::TrainConfig tcfg;
        load_config_file(tr.config, bcfg, tcfg);
        if (tr.epochs > 0) tcfg.epochs = tr.epochs;
        if (tr.steps > 0) tcfg.steps_per_epoch = tr.steps;
        if (tr.batch > 0) tcfg.batch_size = tr.batch;
        if (tr.lr > 0) tcfg.lr_max = static_cast<float>(tr.lr);
        if (tr.seed >= 0) tcfg.seed = static_cast<uint64_t>(tr.seed);

        const auto man = data::load_manifest(tr.manifest);
        const TextEncoder enc(TextEncoder::kDefaultVocab, bcfg.text_dim, 1);
        fs::create_directories(tr.out);
        const auto res = train::train_segmentation(
            man, bcfg, tcfg, enc, (fs::path(tr.out) / "history.jsonl").string(), &std::cout);
        const std::string ckpt = (fs::path(tr.out) / "model.ckpt").string();
        model::save_checkpoint(ckpt, res.best);

        json hist = json::array();
        for (const auto& h : res.history)
            hist.push_back({{"epoch", h.epoch}, {"loss", h.loss}, {"val_dsc", h.val_dsc}, {"lr", h.lr}});
        json report{{"checkpoint", ckpt},
                    {"best_epoch", res.best_epoch},
                    {"best_val_dsc", res.best_val_dsc},
                    {"history", hist}};
        write_json_report((fs::path(tr.out) / "report.json").string(), report);
        std::cout << json{{"checkpoint", ckpt},
                          {"best_epoch", res.best_epoch},
                          {"best_val_dsc", res.best_val_dsc}}
                         .dump(2)
                  << "\n";
    });

    // ---- infer --------------------------------------------------------
    auto* infer_cmd = app.add_subcommand("infer", "segment one case or score a whole split");
    struct {
        std::string checkpoint, manifest, split, case_id, modality = "ct", organ, t1, t2, out;
    } in;
    infer_cmd->add_option("--checkpoint", in.checkpoint, "model checkpoint")->required();
    infer_cmd->add_option("--manifest", in.manifest, "dataset manifest")->required();
    infer_cmd->add_option("--split", in.split, "evaluate this split (train|val|test)");
    infer_cmd->add_option("--case", in.case_id, "case id for single-study inference");
    infer_cmd->add_option("--modality", in.modality, "modality for single-study inference");
    infer_cmd->add_option("--organ", in.organ, "target structure for single-study inference");
    infer_cmd->add_option("--t1", in.t1, "override the context prompt");
    infer_cmd->add_option("--t2", in.t2, "override the target prompt");
    infer_cmd->add_option("--out", in.out, "report JSON (split) or mask base path (case)");
    infer_cmd->callback([&] {
        const auto ck = model::load_checkpoint(in.checkpoint);
        const auto man = data::load_manifest(in.manifest);
        const TextEncoder enc = encoder_for(ck);

        if (!in.split.empty()) {
            const auto ev = infer::evaluate_split(ck.params, ck.config, enc, man, in.split);
            std::vector<std::vector<std::string>> rows;
            for (const auto& [organ, dsc] : ev.per_organ_mean) rows.push_back({organ, fmt(dsc)});
            rows.push_back({"mean", fmt(ev.mean_dsc)});
            print_table({"organ", "dsc"}, rows);
            json detail = json::array();
            for (const auto& r : ev.rows)
                detail.push_back({{"case", r.case_id},
                                  {"organ", r.organ},
                                  {"modality", to_string(r.modality)},
                                  {"dsc", r.dsc}});
            write_json_report(in.out, json{{"split", in.split},
                                           {"mean_dsc", ev.mean_dsc},
                                           {"per_organ", ev.per_organ_mean},
                                           {"rows", detail}});
            return;
        }

        if (in.case_id.empty())
            throw CLI::ValidationError("infer", "need --split or --case");
        if (in.organ.empty() && in.t2.empty())
            throw CLI::ValidationError("infer", "need --organ or an explicit --t2");
        const auto& ce = man.case_by_id(in.case_id);
        const Modality mod = modality_from_string(in.modality);
        const Volume raw = load_volume(man.resolve(ce.volume_paths.at(in.modality)));
        const Volume prepped = preprocess(raw, man.spacing);
        const std::string t1 =
            in.t1.empty() ? make_prompt(mod, ce.region, PromptKind::Context) : in.t1;
        const std::string name = in.organ.empty() ? "target" : in.organ;
        const std::string t2 =
            in.t2.empty() ? make_prompt(mod, in.organ, PromptKind::Target) : in.t2;
        const auto probs =
            infer::predict_probabilities(ck.params, ck.config, enc, prepped, t1, {{name, t2}});
        const Mask pred = infer::threshold_mask(probs.at(name), name);

        json report{{"case", in.case_id},
                    {"modality", in.modality},
                    {"t1", t1},
                    {"t2", t2},
                    {"foreground_voxels", pred.foreground_count()}};
        if (!in.organ.empty() && ce.mask_paths.count(in.organ)) {
            Mask gt = resample_mask(load_mask(man.resolve(ce.mask_paths.at(in.organ))),
                                    raw.spacing, man.spacing);
            report["dsc"] = dice_score(pred, gt);
        }
        if (!in.out.empty()) {
            save_mask(pred, in.out);
            report["mask"] = in.out;
        }
        std::cout << report.dump(2) << "\n";
    });

    // ---- ablate -------------------------------------------------------
    auto* ablate_cmd = app.add_subcommand("ablate", "prompt-sensitivity study");
    struct {
        std::string checkpoint, manifest, split = "test", out;
    } ab;
    ablate_cmd->add_option("--checkpoint", ab.checkpoint, "model checkpoint")->required();
    ablate_cmd->add_option("--manifest", ab.manifest, "dataset manifest")->required();
    ablate_cmd->add_option("--split", ab.split, "split to evaluate");
    ablate_cmd->add_option("--out", ab.out, "report JSON path");
    ablate_cmd->callback([&] {
        const auto ck = model::load_checkpoint(ab.checkpoint);
        const auto man = data::load_manifest(ab.manifest);
        const TextEncoder enc = encoder_for(ck);
        const auto rows = infer::run_ablation(ck.params, ck.config, enc, man, ab.split);

        double baseline = 0.0;
        for (const auto& r : rows)
            if (r.condition == "baseline") baseline = r.mean_dsc;
        std::vector<std::vector<std::string>> table;
        json jrows = json::array();
        for (const auto& r : rows) {
            const double delta = r.mean_dsc - baseline;
            if (r.condition == "organ_control")
                table.push_back({r.condition, fmt(r.prompted_dsc), "-",
                                 "overlap " + fmt(r.unprompted_overlap)});
            else
                table.push_back({r.condition, fmt(r.mean_dsc), fmt(delta), ""});
            jrows.push_back({{"condition", r.condition},
                             {"mean_dsc", r.mean_dsc},
                             {"delta_vs_baseline", delta},
                             {"prompted_dsc", r.prompted_dsc},
                             {"unprompted_overlap", r.unprompted_overlap}});
        }
        print_table({"condition", "dsc", "delta", "notes"}, table);
        write_json_report(ab.out, json{{"split", ab.split}, {"rows", jrows}});
    });

    // ---- features -----------------------------------------------------
    auto* feat_cmd = app.add_subcommand("features", "export pooled deep features");
    struct {
        std::string checkpoint, manifest, split = "test", out, report;
    } fe;
    feat_cmd->add_option("--checkpoint", fe.checkpoint, "model checkpoint")->required();
    feat_cmd->add_option("--manifest", fe.manifest, "dataset manifest")->required();
    feat_cmd->add_option("--split", fe.split, "split to export");
    feat_cmd->add_option("--out", fe.out, "feature CSV path")->required();
    feat_cmd->add_option("--report", fe.report, "statistics JSON path");
    feat_cmd->callback([&] {
        const auto ck = model::load_checkpoint(fe.checkpoint);
        const auto man = data::load_manifest(fe.manifest);
        const TextEncoder enc = encoder_for(ck);
        const auto rep = infer::export_features(ck.params, ck.config, enc, man, fe.split);
        infer::write_features_csv(fe.out, rep);
        json stats{{"rows", rep.rows.size()},
                   {"within_t1_cosine", rep.within_t1},
                   {"between_t1_cosine", rep.between_t1},
                   {"csv", fe.out}};
        if (std::isfinite(rep.separation_ratio))
            stats["separation_ratio"] = rep.separation_ratio;
        else
            stats["separation_ratio"] = "undefined (no within-context pairs)";
        write_json_report(fe.report, stats);
        std::cout << stats.dump(2) << "\n";
    });

    // ---- prognosis ----------------------------------------------------
    auto* prog_cmd = app.add_subcommand("prognosis", "survival fine-tune and evaluation");
    struct {
        std::string checkpoint, manifest, out;
        std::vector<std::string> modalities{"ct", "pet"};
        int steps = 60, bins = 8;
        uint64_t seed = 11;
    } pg;
    prog_cmd->add_option("--checkpoint", pg.checkpoint, "segmentation checkpoint")->required();
    prog_cmd->add_option("--manifest", pg.manifest, "dataset manifest")->required();
    prog_cmd->add_option("--out", pg.out, "output directory")->required();
    prog_cmd->add_option("--modalities", pg.modalities, "modalities to fine-tune");
    prog_cmd->add_option("--steps", pg.steps, "optimisation steps per modality");
    prog_cmd->add_option("--bins", pg.bins, "discrete-time bins");
    prog_cmd->add_option("--seed", pg.seed, "fine-tune seed");
    prog_cmd->callback([&] {
        const auto base = model::load_checkpoint(pg.checkpoint);
        const auto man = data::load_manifest(pg.manifest);
        const TextEncoder enc = encoder_for(base);
        fs::create_directories(pg.out);

        adapt::PrognosisConfig pc;
        pc.steps = pg.steps;
        pc.bins = pg.bins;
        pc.seed = pg.seed;

        std::vector<adapt::PrognosisModel> models;
        json jmodels = json::array();
        for (const auto& mod_name : pg.modalities) {
            const Modality mod = modality_from_string(mod_name);
            auto m = adapt::finetune_prognosis(base, man, mod, enc, pc, &std::cout);
            const std::string path =
                (fs::path(pg.out) / ("prognosis_" + mod_name + ".ckpt")).string();
            model::save_checkpoint(path, adapt::to_adapter_checkpoint(m));
            jmodels.push_back({{"modality", mod_name}, {"checkpoint", path}, {"train_ci", m.train_ci}});
            models.push_back(std::move(m));
        }

        const auto ev = adapt::evaluate_prognosis(models, enc, man, "test");
        std::vector<std::vector<std::string>> table;
        for (const auto& [mod_name, ci] : ev.ci_per_modality) table.push_back({mod_name, fmt(ci)});
        table.push_back({"fused", fmt(ev.ci_fused)});
        print_table({"risk model", "concordance"}, table);

        json report{{"models", jmodels},
                    {"test_ci", ev.ci_per_modality},
                    {"test_ci_fused", ev.ci_fused}};
        write_json_report((fs::path(pg.out) / "report.json").string(), report);
        std::cout << json{{"test_ci", ev.ci_per_modality}, {"test_ci_fused", ev.ci_fused}}.dump(2)
                  << "\n";
    });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
