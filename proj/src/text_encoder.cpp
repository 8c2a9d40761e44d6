// SPDX-License-Identifier: Apache-2.0
#include "docmsu/text_encoder.hpp"

#include <cctype>
#include <random>

#include "docmsu/bert.hpp"
#include "docmsu/data_model.hpp"
#include "docmsu/errors.hpp"
#include "docmsu/nn/archive.hpp"
#include "docmsu/nn/ops.hpp"

namespace docmsu {
namespace {

std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= static_cast<unsigned char>(std::tolower(c));
        h *= 1099511628211ULL;
    }
    return h;
}

}  // namespace

HashEmbeddingBackend::HashEmbeddingBackend(int width) : width_(width) {
    if (width < 1) throw ValidationError("hash backend width must be >= 1");
}

TokenEmbeddings HashEmbeddingBackend::embed(const std::vector<std::string>& tokens) const {
    TokenEmbeddings e;
    e.n = static_cast<int>(tokens.size());
    e.width = width_;
    e.values.reserve(tokens.size() * static_cast<std::size_t>(width_));
    for (std::size_t t = 0; t < tokens.size(); ++t) {
        std::mt19937_64 gen(fnv1a(tokens[t]));
        std::uniform_real_distribution<double> u(-1.0, 1.0);
        for (int c = 0; c < width_; ++c) e.values.push_back(u(gen));
        e.token_map.push_back(static_cast<int>(t));
    }
    return e;
}

ContextualBackend::ContextualBackend(const std::filesystem::path& weights, const std::filesystem::path& vocab) {
    const auto ar = nn::read_archive(weights);
    tokenizer_ = std::make_unique<WordPieceTokenizer>(vocab);
    encoder_ = std::make_unique<BertEncoder>(BertConfig::from_json(ar.meta.at("config")), ar);
    if (static_cast<int>(tokenizer_->size()) != encoder_->config().vocab_size) {
        throw ValidationError("vocab size does not match encoder weights");
    }
}

ContextualBackend::~ContextualBackend() = default;

int ContextualBackend::width() const { return encoder_->config().hidden; }

TokenEmbeddings ContextualBackend::embed(const std::vector<std::string>& tokens) const {
    std::vector<int> ids{tokenizer_->cls_id()};
    std::vector<int> first;  // sequence position of each word's first subpiece
    TokenEmbeddings e;
    const int limit = encoder_->config().max_positions - 1;
    for (std::size_t t = 0; t < tokens.size(); ++t) {
        auto pieces = tokenizer_->encode_word(tokens[t]);
        // Words made only of stripped characters still need a slot.
        if (pieces.empty()) pieces.push_back(tokenizer_->unk_id());
        if (static_cast<int>(ids.size() + pieces.size()) > limit) {
            throw ValidationError("document exceeds the encoder's maximum sequence length");
        }
        first.push_back(static_cast<int>(ids.size()));
        for (int p : pieces) {
            ids.push_back(p);
            e.token_map.push_back(static_cast<int>(t));
        }
    }
    ids.push_back(tokenizer_->sep_id());

    nn::NoGradGuard guard;
    const auto hidden = encoder_->forward(ids);
    const int h = width();
    e.n = static_cast<int>(tokens.size());
    e.width = h;
    e.values.reserve(first.size() * static_cast<std::size_t>(h));
    const auto hv = hidden.data();
    for (int pos : first) {
        const auto row = hv.subspan(static_cast<std::size_t>(pos) * h, h);
        e.values.insert(e.values.end(), row.begin(), row.end());
    }
    return e;
}

TokenEmbeddings encode_tokens(std::string_view text, const TextBackend& backend, int max_tokens) {
    auto tokens = tokenize(text);
    if (tokens.empty()) throw ValidationError("encode_tokens: empty text");
    if (max_tokens > 0 && static_cast<int>(tokens.size()) > max_tokens) tokens.resize(max_tokens);
    return backend.embed(tokens);
}

TokenProjector::TokenProjector(int d_lm_, int d_, nn::Rng& rng) : fc(d_lm_, d_, rng), d_lm(d_lm_), d(d_) {}

nn::Tensor project_tokens(const nn::Tensor& embeddings, const TokenProjector& projector) {
    if (embeddings.rank() != 2 || embeddings.dim(1) != projector.d_lm) {
        throw ShapeError("project_tokens: expected [n, " + std::to_string(projector.d_lm) + "], got " +
                         nn::shape_str(embeddings.shape()));
    }
    return projector.fc(embeddings);
}

DocumentMatrix square_reshape(const nn::Tensor& projected, int L) {
    if (projected.rank() != 2) throw ShapeError("square_reshape: expected [n, d]");
    if (L < 1) throw ValidationError("square_reshape: L must be >= 1");
    const int n = projected.dim(0);
    const int d = projected.dim(1);
    if (n > L * L) throw ValidationError("document exceeds L² tokens");

    std::vector<int> idx(static_cast<std::size_t>(L) * L * d, -1);
    for (int t = 0; t < n; ++t) {
        for (int c = 0; c < d; ++c) idx[static_cast<std::size_t>(t) * d + c] = t * d + c;
    }
    DocumentMatrix doc;
    doc.values = nn::gather(projected, nn::make_index(std::move(idx)), {L, L, d});
    doc.mask.assign(static_cast<std::size_t>(L) * L, false);
    std::fill(doc.mask.begin(), doc.mask.begin() + n, true);
    doc.L = L;
    doc.d = d;
    doc.n = n;
    return doc;
}

nn::Tensor unreshape(const DocumentMatrix& doc) {
    std::vector<int> idx(static_cast<std::size_t>(doc.n) * doc.d);
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);
    return nn::gather(doc.values, nn::make_index(std::move(idx)), {doc.n, doc.d});
}

}  // namespace docmsu
