#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "dualprompt/model/config.hpp"

namespace dualprompt::model {

// Named, ordered parameter tensors. Order is fixed at construction and is
// the serialization order of checkpoints. Values are stored as float32; the
// autodiff tape widens them on load when running in double.
class ParamStore {
public:
    struct Entry {
        std::string name;
        std::vector<int> shape;
        std::vector<float> data;
        bool trainable = true;
    };

    Entry& add(const std::string& name, std::vector<int> shape, bool trainable = true);
    bool contains(const std::string& name) const { return index_.count(name) != 0; }
    Entry& at(const std::string& name);
    const Entry& at(const std::string& name) const;
    std::vector<Entry>& entries() { return entries_; }
    const std::vector<Entry>& entries() const { return entries_; }

    int64_t total_count() const;
    int64_t trainable_count() const;

private:
    std::vector<Entry> entries_;
    std::unordered_map<std::string, size_t> index_;
};

// Build every backbone tensor (stems, encoder/decoder blocks, modulation
// trunk and per-block heads, prediction-head generator) and initialize it.
// Each tensor draws from its own stream seeded by (init_seed, name), so
// initialization does not depend on construction order.
ParamStore build_backbone_params(const BackboneConfig& cfg);

// Append the prognosis head (pooled dense feature -> interval logits).
void add_prognosis_params(ParamStore& ps, const BackboneConfig& cfg, int bins,
                          uint64_t seed);

// FiLM application sites in forward order: one per encoder block (the
// deepest doubles as the bottleneck) followed by decoder blocks from deep
// to shallow. Names like "down0", "up1" key the modulation heads.
std::vector<std::string> film_sites(const BackboneConfig& cfg);
int film_site_channels(const BackboneConfig& cfg, const std::string& site);

}  // namespace dualprompt::model
