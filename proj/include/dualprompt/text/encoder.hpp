#pragma once

#include <string>
#include <vector>

#include "dualprompt/core/rng.hpp"

namespace dualprompt {

struct PromptEmbedding {
    std::vector<float> vector;  // unit Euclidean norm
    std::string source_text;
};

// Frozen hash-bag-of-tokens text embedder. Stands in for a pretrained
// biomedical encoder behind the same contract: distinct, stable, frozen
// embeddings per prompt. A real encoder can be injected by swapping this
// type; everything downstream consumes PromptEmbedding only.
//
// Scheme (normative, so ports agree bit-for-bit):
//   - lowercase, split on any non-alphanumeric byte
//   - row index = fnv1a64(token) mod V
//   - table[r][c] = splitmix64(seed*0x9e3779b97f4a7c15 ^ (r*D + c)) mapped
//     to a uniform float in [-1, 1)
//   - embedding = L2-normalized mean of the hashed rows
class TextEncoder {
public:
    static constexpr int kDefaultVocab = 4096;
    static constexpr int kDefaultDim = 64;

    explicit TextEncoder(int vocab = kDefaultVocab, int dim = kDefaultDim, uint64_t seed = 1);

    PromptEmbedding encode(const std::string& text) const;

    int dim() const { return dim_; }
    int vocab() const { return vocab_; }
    uint64_t seed() const { return seed_; }

    // Byte-level view of the table; the freeze invariant is checked by
    // hashing this before and after training.
    uint64_t table_checksum() const;
    size_t parameter_count() const { return table_.size(); }

    static std::vector<std::string> tokenize(const std::string& text);

private:
    int vocab_;
    int dim_;
    uint64_t seed_;
    std::vector<float> table_;  // vocab x dim, row-major
};

}  // namespace dualprompt
