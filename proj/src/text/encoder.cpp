#include "dualprompt/text/encoder.hpp"

#include <cctype>
#include <cmath>
#include <cstring>
#include <stdexcept>

namespace dualprompt {

TextEncoder::TextEncoder(int vocab, int dim, uint64_t seed)
    : vocab_(vocab), dim_(dim), seed_(seed), table_(static_cast<size_t>(vocab) * dim) {
    if (vocab < 1 || dim < 1) throw std::invalid_argument("text encoder vocab/dim must be >= 1");
    const uint64_t base = seed * 0x9e3779b97f4a7c15ULL;
    for (size_t i = 0; i < table_.size(); ++i) {
        const uint64_t bits = splitmix64(base ^ static_cast<uint64_t>(i));
        // top 53 bits -> [0,1) -> [-1,1)
        const double u = static_cast<double>(bits >> 11) * 0x1.0p-53;
        table_[i] = static_cast<float>(u * 2.0 - 1.0);
    }
}

std::vector<std::string> TextEncoder::tokenize(const std::string& text) {
    std::vector<std::string> tokens;
    std::string cur;
    for (unsigned char c : text) {
        if (std::isalnum(c)) {
            cur.push_back(static_cast<char>(std::tolower(c)));
        } else if (!cur.empty()) {
            tokens.push_back(std::move(cur));
            cur.clear();
        }
    }
    if (!cur.empty()) tokens.push_back(std::move(cur));
    return tokens;
}

PromptEmbedding TextEncoder::encode(const std::string& text) const {
    const auto tokens = tokenize(text);
    if (tokens.empty()) throw std::invalid_argument("cannot encode empty text");

    std::vector<double> acc(dim_, 0.0);
    for (const auto& tok : tokens) {
        const uint64_t row = fnv1a64(tok) % static_cast<uint64_t>(vocab_);
        const float* r = table_.data() + row * static_cast<size_t>(dim_);
        for (int c = 0; c < dim_; ++c) acc[c] += r[c];
    }
    const double inv_n = 1.0 / static_cast<double>(tokens.size());
    double norm2 = 0.0;
    for (int c = 0; c < dim_; ++c) {
        acc[c] *= inv_n;
        norm2 += acc[c] * acc[c];
    }
    const double inv_norm = norm2 > 0.0 ? 1.0 / std::sqrt(norm2) : 0.0;

    PromptEmbedding e;
    e.source_text = text;
    e.vector.resize(dim_);
    for (int c = 0; c < dim_; ++c) e.vector[c] = static_cast<float>(acc[c] * inv_norm);
    return e;
}

uint64_t TextEncoder::table_checksum() const {
    std::string bytes(table_.size() * 4, '\0');
    std::memcpy(bytes.data(), table_.data(), bytes.size());
    return fnv1a64(bytes);
}

}  // namespace dualprompt
