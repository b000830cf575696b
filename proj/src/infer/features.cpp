#include "dualprompt/infer/features.hpp"

#include <cmath>
#include <fstream>
#include <map>
#include <stdexcept>

#include "dualprompt/model/forward.hpp"
#include "dualprompt/nn/tape.hpp"
#include "dualprompt/text/prompt.hpp"
#include "dualprompt/volume/io.hpp"
#include "dualprompt/volume/preprocess.hpp"

namespace dualprompt::infer {

namespace {

std::vector<float> pooled_feature(const model::ParamStore& ps, const model::BackboneConfig& cfg,
                                  const std::vector<float>& voxels, Modality mod,
                                  const std::vector<float>& t1_embedding) {
    nn::Tape<float> t;
    model::TapeParams<float> tp(t, ps, false);
    const auto fv = model::film_forward(tp, cfg, t1_embedding);
    const auto feats = model::backbone_forward(tp, cfg, voxels, mod, &fv, /*encoder_only=*/true);
    const auto pooled = nn::global_avg_pool(t, feats.dense);
    const auto v = t.val(pooled);
    return {v.begin(), v.end()};
}

double cosine_distance(const std::vector<float>& a, const std::vector<float>& b) {
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        dot += static_cast<double>(a[i]) * b[i];
        na += static_cast<double>(a[i]) * a[i];
        nb += static_cast<double>(b[i]) * b[i];
    }
    const double denom = std::sqrt(na) * std::sqrt(nb);
    if (denom < 1e-30) return 1.0;  // treat degenerate vectors as maximally distant
    return 1.0 - dot / denom;
}

// Leading eigenvector of a symmetric matrix by power iteration with a
// deterministic start; deflation yields the second axis.
std::vector<double> power_iteration(const std::vector<double>& cov, int d, uint64_t seed,
                                    double* eigenvalue) {
    std::vector<double> v(d);
    Rng rng(seed);
    for (double& x : v) x = rng.uniform(-1.0, 1.0);
    double lambda = 0.0;
    for (int it = 0; it < 500; ++it) {
        std::vector<double> w(d, 0.0);
        for (int i = 0; i < d; ++i)
            for (int j = 0; j < d; ++j) w[i] += cov[static_cast<size_t>(i) * d + j] * v[j];
        double norm = 0.0;
        for (double x : w) norm += x * x;
        norm = std::sqrt(norm);
        if (norm < 1e-30) break;  // matrix is (numerically) zero
        for (int i = 0; i < d; ++i) v[i] = w[i] / norm;
        lambda = norm;
    }
    if (eigenvalue) *eigenvalue = lambda;
    return v;
}

}  // namespace

FeatureReport export_features(const model::ParamStore& ps, const model::BackboneConfig& cfg,
                              const TextEncoder& enc, const data::Manifest& man,
                              const std::string& split) {
    FeatureReport rep;

    // One arbitrary but fixed target prompt for the varied-context set: the
    // first organ of the first region under the first modality.
    const auto first_region = man.regions.begin();
    if (first_region == man.regions.end() || first_region->second.empty())
        throw std::invalid_argument("export_features: manifest has no organs");
    const std::string fixed_t2 =
        make_prompt(Modality::CT, first_region->second.front(), PromptKind::Target);

    for (const data::CaseEntry* ce : man.split(split)) {
        for (const auto& [mod_name, rel] : ce->volume_paths) {
            const Modality mod = modality_from_string(mod_name);
            const Volume prepped = preprocess(load_volume(man.resolve(rel)), man.spacing);
            const std::vector<float> voxels =
                resample_to_dims(prepped, {cfg.patch, cfg.patch, cfg.patch}).grid.data;

            const std::string t1 = make_prompt(mod, ce->region, PromptKind::Context);
            const std::vector<float> e1 = enc.encode(t1).vector;

            FeatureRow a;
            a.set = "A";
            a.case_id = ce->id;
            a.modality = mod_name;
            a.region = ce->region;
            a.t1 = t1;
            a.t2 = fixed_t2;
            a.pooled = pooled_feature(ps, cfg, voxels, mod, e1);
            rep.rows.push_back(std::move(a));

            // Varied-target rows rerun the full forward per organ; equality
            // of the pooled vectors is a property, not an artefact of reuse.
            for (const auto& organ : man.regions.at(ce->region)) {
                FeatureRow b;
                b.set = "B";
                b.case_id = ce->id;
                b.modality = mod_name;
                b.region = ce->region;
                b.t1 = t1;
                b.t2 = make_prompt(mod, organ, PromptKind::Target);
                b.pooled = pooled_feature(ps, cfg, voxels, mod, e1);
                rep.rows.push_back(std::move(b));
            }
        }
    }

    // Separation statistics over set A, grouped by context prompt.
    std::vector<const FeatureRow*> set_a;
    for (const auto& r : rep.rows)
        if (r.set == "A") set_a.push_back(&r);
    double within_sum = 0.0, between_sum = 0.0;
    int within_n = 0, between_n = 0;
    for (size_t i = 0; i < set_a.size(); ++i)
        for (size_t j = i + 1; j < set_a.size(); ++j) {
            const double d = cosine_distance(set_a[i]->pooled, set_a[j]->pooled);
            if (set_a[i]->t1 == set_a[j]->t1) {
                within_sum += d;
                ++within_n;
            } else {
                between_sum += d;
                ++between_n;
            }
        }
    if (within_n > 0) rep.within_t1 = within_sum / within_n;
    if (between_n > 0) rep.between_t1 = between_sum / between_n;
    rep.separation_ratio = rep.within_t1 > 0.0 ? rep.between_t1 / rep.within_t1
                                               : std::numeric_limits<double>::infinity();

    // Principal plane fitted on set A; all rows projected onto it.
    if (!set_a.empty()) {
        const int d = static_cast<int>(set_a.front()->pooled.size());
        std::vector<double> mean(d, 0.0);
        for (const auto* r : set_a)
            for (int i = 0; i < d; ++i) mean[i] += r->pooled[i];
        for (double& m : mean) m /= static_cast<double>(set_a.size());

        std::vector<double> cov(static_cast<size_t>(d) * d, 0.0);
        for (const auto* r : set_a)
            for (int i = 0; i < d; ++i)
                for (int j = 0; j < d; ++j)
                    cov[static_cast<size_t>(i) * d + j] +=
                        (r->pooled[i] - mean[i]) * (r->pooled[j] - mean[j]);
        for (double& c : cov) c /= static_cast<double>(set_a.size());

        double lambda1 = 0.0;
        const auto v1 = power_iteration(cov, d, 101, &lambda1);
        std::vector<double> deflated = cov;
        for (int i = 0; i < d; ++i)
            for (int j = 0; j < d; ++j)
                deflated[static_cast<size_t>(i) * d + j] -= lambda1 * v1[i] * v1[j];
        const auto v2 = power_iteration(deflated, d, 202, nullptr);

        for (auto& r : rep.rows) {
            double p0 = 0.0, p1 = 0.0;
            for (int i = 0; i < d; ++i) {
                const double c = r.pooled[i] - mean[i];
                p0 += c * v1[i];
                p1 += c * v2[i];
            }
            r.projection = {p0, p1};
        }
    }
    return rep;
}

void write_features_csv(const std::string& path, const FeatureReport& report) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open feature CSV for writing: " + path);
    const int d = report.rows.empty() ? 0 : static_cast<int>(report.rows.front().pooled.size());
    out << "set,case_id,modality,region,t1,t2,proj0,proj1";
    for (int i = 0; i < d; ++i) out << ",f" << i;
    out << "\n";
    for (const auto& r : report.rows) {
        out << r.set << ',' << r.case_id << ',' << r.modality << ',' << r.region << ",\"" << r.t1
            << "\",\"" << r.t2 << "\"," << r.projection[0] << ',' << r.projection[1];
        for (float f : r.pooled) out << ',' << f;
        out << "\n";
    }
    if (!out) throw std::runtime_error("failed writing feature CSV: " + path);
}

}  // namespace dualprompt::infer
