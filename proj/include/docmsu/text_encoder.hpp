// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "docmsu/nn/layers.hpp"

namespace docmsu {

/// One d_lm-vector per whitespace token, row-major [n, width].
struct TokenEmbeddings {
    std::vector<double> values;
    int n = 0;
    int width = 0;
    /// token_map[p] = whitespace token of subpiece p (sequence without specials).
    std::vector<int> token_map;

    nn::Tensor tensor() const { return nn::Tensor::from({n, width}, values); }
};

class TextBackend {
public:
    virtual ~TextBackend() = default;
    virtual std::string name() const = 0;
    virtual int width() const = 0;
    /// Embeds the given whitespace tokens (already truncated by the caller).
    virtual TokenEmbeddings embed(const std::vector<std::string>& tokens) const = 0;
};

/// Deterministic per-token vectors in [-1, 1] seeded by a hash of the
/// lower-cased token. No weights, no context.
class HashEmbeddingBackend final : public TextBackend {
public:
    explicit HashEmbeddingBackend(int width);
    std::string name() const override { return "hash-embedding"; }
    int width() const override { return width_; }
    TokenEmbeddings embed(const std::vector<std::string>& tokens) const override;

private:
    int width_;
};

class WordPieceTokenizer;
class BertEncoder;

/// Frozen BERT-style encoder. Word vectors are the hidden state of each
/// word's first subpiece.
class ContextualBackend final : public TextBackend {
public:
    ContextualBackend(const std::filesystem::path& weights, const std::filesystem::path& vocab);
    ~ContextualBackend() override;
    std::string name() const override { return "pretrained-contextual"; }
    int width() const override;
    TokenEmbeddings embed(const std::vector<std::string>& tokens) const override;

private:
    std::unique_ptr<WordPieceTokenizer> tokenizer_;
    std::unique_ptr<BertEncoder> encoder_;
};

/// Tokenizes on whitespace, keeps at most `max_tokens` (<= 0: no limit) and embeds.
TokenEmbeddings encode_tokens(std::string_view text, const TextBackend& backend, int max_tokens = 0);

/// Per-token affine map d_lm -> d.
struct TokenProjector {
    nn::Linear fc;
    int d_lm = 0;
    int d = 0;

    TokenProjector() = default;
    TokenProjector(int d_lm, int d, nn::Rng& rng);
    void collect(const std::string& prefix, nn::NamedParams& out) const { fc.collect(prefix, out); }
};

/// [n, d_lm] -> [n, d]. Throws ShapeError on a width mismatch.
nn::Tensor project_tokens(const nn::Tensor& embeddings, const TokenProjector& projector);

struct DocumentMatrix {
    nn::Tensor values;       // [L, L, d]
    std::vector<bool> mask;  // L*L, raster order
    int L = 0;
    int d = 0;
    int n = 0;
};

/// Places token t (0-based) at raster cell t; the remaining cells are zero.
/// Throws ValidationError if n > L*L.
DocumentMatrix square_reshape(const nn::Tensor& projected, int L);

/// Inverse of square_reshape: the first n cells as [n, d].
nn::Tensor unreshape(const DocumentMatrix& doc);

}  // namespace docmsu
