// SPDX-License-Identifier: Apache-2.0
//
// Uncased WordPiece tokenizer and a BERT encoder forward pass over weights
// exported from a Hugging Face checkpoint (see tools/export_bert.py).
#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "docmsu/nn/archive.hpp"
#include "docmsu/nn/layers.hpp"

namespace docmsu {

class WordPieceTokenizer {
public:
    explicit WordPieceTokenizer(const std::filesystem::path& vocab_file);
    explicit WordPieceTokenizer(std::vector<std::string> vocab);

    /// Lower-cases, splits punctuation, then greedy longest-match WordPiece.
    std::vector<int> encode_word(std::string_view word) const;

    int id(const std::string& token) const;
    int cls_id() const { return cls_; }
    int sep_id() const { return sep_; }
    int unk_id() const { return unk_; }
    std::size_t size() const { return vocab_.size(); }

private:
    void index();

    std::vector<std::string> vocab_;
    std::unordered_map<std::string, int> ids_;
    int cls_ = 0;
    int sep_ = 0;
    int unk_ = 0;
};

struct BertConfig {
    int vocab_size = 0;
    int hidden = 768;
    int layers = 12;
    int heads = 12;
    int intermediate = 3072;
    int max_positions = 512;
    double layer_norm_eps = 1e-12;

    static BertConfig from_json(const nlohmann::json& j);
};

class BertEncoder {
public:
    BertEncoder(const BertConfig& config, const nn::TensorArchive& weights);

    /// Last hidden states [ids.size(), hidden] for one unpadded sequence.
    nn::Tensor forward(const std::vector<int>& ids) const;
    const BertConfig& config() const { return config_; }

private:
    struct Layer {
        nn::Linear qkv;
        nn::Linear attn_out;
        nn::LayerNorm attn_norm;
        nn::Linear intermediate;
        nn::Linear output;
        nn::LayerNorm out_norm;
    };

    BertConfig config_;
    nn::Tensor word_emb_;
    nn::Tensor pos_emb_;
    nn::Tensor type_emb_;
    nn::LayerNorm emb_norm_;
    std::vector<Layer> layers_;
};

}  // namespace docmsu
