// SPDX-License-Identifier: Apache-2.0
#include "docmsu/bert.hpp"

#include <cctype>
#include <fstream>

#include "docmsu/errors.hpp"
#include "docmsu/nn/ops.hpp"

namespace docmsu {
namespace {

bool is_punct(unsigned char c) {
    return (c >= 33 && c <= 47) || (c >= 58 && c <= 64) || (c >= 91 && c <= 96) || (c >= 123 && c <= 126);
}

/// Basic tokenization of one whitespace word: ASCII lower-casing and
/// punctuation split. Non-ASCII bytes pass through unchanged.
std::vector<std::string> basic_split(std::string_view word) {
    std::vector<std::string> out;
    std::string cur;
    for (unsigned char c : word) {
        if (c < 128 && std::iscntrl(c)) continue;
        if (c < 128 && is_punct(c)) {
            if (!cur.empty()) out.push_back(std::move(cur));
            cur.clear();
            out.emplace_back(1, static_cast<char>(c));
        } else {
            cur.push_back(c < 128 ? static_cast<char>(std::tolower(c)) : static_cast<char>(c));
        }
    }
    if (!cur.empty()) out.push_back(std::move(cur));
    return out;
}

nn::Tensor param(const nn::ArchivedTensor& t) { return nn::Tensor::from(t.shape, t.values, false); }

/// Hugging Face linear weights are [out, in]; ours are [in, out].
nn::Tensor transposed(const nn::ArchivedTensor& t) {
    const int out = t.shape.at(0);
    const int in = t.shape.at(1);
    std::vector<double> v(t.values.size());
    for (int o = 0; o < out; ++o) {
        for (int i = 0; i < in; ++i) v[static_cast<std::size_t>(i) * out + o] = t.values[static_cast<std::size_t>(o) * in + i];
    }
    return nn::Tensor::from({in, out}, std::move(v), false);
}

nn::Linear load_linear(const nn::TensorArchive& ar, const std::string& prefix) {
    nn::Linear l;
    l.w = transposed(ar.at(prefix + ".weight"));
    l.b = param(ar.at(prefix + ".bias"));
    return l;
}

nn::LayerNorm load_norm(const nn::TensorArchive& ar, const std::string& prefix, double eps) {
    nn::LayerNorm n;
    n.gamma = param(ar.at(prefix + ".weight"));
    n.beta = param(ar.at(prefix + ".bias"));
    n.eps = eps;
    return n;
}

}  // namespace

WordPieceTokenizer::WordPieceTokenizer(const std::filesystem::path& vocab_file) {
    if (!std::filesystem::exists(vocab_file)) throw MissingArtifactError("vocab not found: " + vocab_file.string());
    std::ifstream in(vocab_file);
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        vocab_.push_back(line);
    }
    index();
}

WordPieceTokenizer::WordPieceTokenizer(std::vector<std::string> vocab) : vocab_(std::move(vocab)) { index(); }

void WordPieceTokenizer::index() {
    for (std::size_t i = 0; i < vocab_.size(); ++i) ids_.emplace(vocab_[i], static_cast<int>(i));
    for (const char* special : {"[CLS]", "[SEP]", "[UNK]"}) {
        if (!ids_.count(special)) throw ValidationError(std::string("vocab lacks ") + special);
    }
    cls_ = ids_.at("[CLS]");
    sep_ = ids_.at("[SEP]");
    unk_ = ids_.at("[UNK]");
}

int WordPieceTokenizer::id(const std::string& token) const {
    auto it = ids_.find(token);
    return it == ids_.end() ? unk_ : it->second;
}

std::vector<int> WordPieceTokenizer::encode_word(std::string_view word) const {
    constexpr std::size_t kMaxChars = 100;
    std::vector<int> out;
    for (const auto& piece : basic_split(word)) {
        if (piece.size() > kMaxChars) {
            out.push_back(unk_);
            continue;
        }
        std::vector<int> sub;
        std::size_t start = 0;
        bool bad = false;
        while (start < piece.size()) {
            std::size_t end = piece.size();
            int found = -1;
            while (start < end) {
                std::string cand = piece.substr(start, end - start);
                if (start > 0) cand = "##" + cand;
                auto it = ids_.find(cand);
                if (it != ids_.end()) {
                    found = it->second;
                    break;
                }
                --end;
            }
            if (found < 0) {
                bad = true;
                break;
            }
            sub.push_back(found);
            start = end;
        }
        if (bad) {
            out.push_back(unk_);
        } else {
            out.insert(out.end(), sub.begin(), sub.end());
        }
    }
    return out;
}

BertConfig BertConfig::from_json(const nlohmann::json& j) {
    BertConfig c;
    c.vocab_size = j.at("vocab_size").get<int>();
    c.hidden = j.at("hidden_size").get<int>();
    c.layers = j.at("num_hidden_layers").get<int>();
    c.heads = j.at("num_attention_heads").get<int>();
    c.intermediate = j.at("intermediate_size").get<int>();
    c.max_positions = j.at("max_position_embeddings").get<int>();
    c.layer_norm_eps = j.value("layer_norm_eps", 1e-12);
    return c;
}

BertEncoder::BertEncoder(const BertConfig& config, const nn::TensorArchive& ar) : config_(config) {
    word_emb_ = param(ar.at("embeddings.word_embeddings.weight"));
    pos_emb_ = param(ar.at("embeddings.position_embeddings.weight"));
    type_emb_ = param(ar.at("embeddings.token_type_embeddings.weight"));
    emb_norm_ = load_norm(ar, "embeddings.LayerNorm", config.layer_norm_eps);
    if (word_emb_.dim(1) != config.hidden) throw ValidationError("bert: embedding width != hidden_size");

    for (int i = 0; i < config.layers; ++i) {
        const std::string p = "encoder.layer." + std::to_string(i);
        const auto q = load_linear(ar, p + ".attention.self.query");
        const auto k = load_linear(ar, p + ".attention.self.key");
        const auto v = load_linear(ar, p + ".attention.self.value");
        Layer layer;
        // Fuse [q | k | v] column-wise so attention can read one packed row.
        const int h = config.hidden;
        std::vector<double> w(static_cast<std::size_t>(h) * 3 * h);
        std::vector<double> b(static_cast<std::size_t>(3 * h));
        for (int r = 0; r < h; ++r) {
            for (int c = 0; c < h; ++c) {
                w[static_cast<std::size_t>(r) * 3 * h + c] = q.w.data()[static_cast<std::size_t>(r) * h + c];
                w[static_cast<std::size_t>(r) * 3 * h + h + c] = k.w.data()[static_cast<std::size_t>(r) * h + c];
                w[static_cast<std::size_t>(r) * 3 * h + 2 * h + c] = v.w.data()[static_cast<std::size_t>(r) * h + c];
            }
        }
        for (int c = 0; c < h; ++c) {
            b[c] = q.b.data()[c];
            b[h + c] = k.b.data()[c];
            b[2 * h + c] = v.b.data()[c];
        }
        layer.qkv.w = nn::Tensor::from({h, 3 * h}, std::move(w));
        layer.qkv.b = nn::Tensor::from({3 * h}, std::move(b));
        layer.attn_out = load_linear(ar, p + ".attention.output.dense");
        layer.attn_norm = load_norm(ar, p + ".attention.output.LayerNorm", config.layer_norm_eps);
        layer.intermediate = load_linear(ar, p + ".intermediate.dense");
        layer.output = load_linear(ar, p + ".output.dense");
        layer.out_norm = load_norm(ar, p + ".output.LayerNorm", config.layer_norm_eps);
        layers_.push_back(std::move(layer));
    }
}

nn::Tensor BertEncoder::forward(const std::vector<int>& ids) const {
    const int n = static_cast<int>(ids.size());
    const int h = config_.hidden;
    if (n < 1 || n > config_.max_positions) throw ValidationError("bert: sequence length out of range");

    std::vector<int> word_idx;
    std::vector<int> pos_idx;
    std::vector<int> type_idx;
    for (int t = 0; t < n; ++t) {
        if (ids[t] < 0 || ids[t] >= word_emb_.dim(0)) throw ValidationError("bert: token id out of range");
        for (int c = 0; c < h; ++c) {
            word_idx.push_back(ids[t] * h + c);
            pos_idx.push_back(t * h + c);
            type_idx.push_back(c);
        }
    }
    nn::Tensor x = nn::add(nn::gather(word_emb_, nn::make_index(std::move(word_idx)), {n, h}),
                           nn::gather(pos_emb_, nn::make_index(std::move(pos_idx)), {n, h}));
    x = nn::add(x, nn::gather(type_emb_, nn::make_index(std::move(type_idx)), {n, h}));
    x = emb_norm_(x);

    for (const auto& layer : layers_) {
        const auto ctx = nn::window_attention(layer.qkv(x), {}, nullptr, 0, 1, n, config_.heads);
        x = layer.attn_norm(nn::add(x, layer.attn_out(ctx)));
        const auto ff = layer.output(nn::gelu(layer.intermediate(x)));
        x = layer.out_norm(nn::add(x, ff));
    }
    return x;
}

}  // namespace docmsu
