// SPDX-License-Identifier: Apache-2.0
//
// Four-stage shifted-window attention backbone over an [H, W, C] grid.
// Stage 0 runs at the input resolution; stages 1-3 each start with a 2x2
// patch merge (half the side, twice the channels).
#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "docmsu/nn/layers.hpp"

namespace docmsu {

struct SwinBlock {
    int dim = 0;
    int heads = 1;
    int window = 1;  // requested window side; clamped to the resolution at run time
    bool shifted = false;

    nn::LayerNorm norm1;
    nn::Linear qkv;
    nn::Linear proj;
    nn::Tensor bias_table;  // [(2*window-1)^2, heads]
    nn::LayerNorm norm2;
    nn::Linear fc1;
    nn::Linear fc2;

    SwinBlock() = default;
    SwinBlock(int dim, int heads, int window, bool shifted, int mlp_ratio, nn::Rng& rng);
    nn::Tensor operator()(const nn::Tensor& x) const;
    void collect(const std::string& prefix, nn::NamedParams& out) const;
};

struct PatchMerging {
    nn::LayerNorm norm;  // over 4C
    nn::Linear reduce;   // 4C -> 2C, no bias

    PatchMerging() = default;
    PatchMerging(int dim, nn::Rng& rng);
    /// [H, W, C] -> [ceil(H/2), ceil(W/2), 2C]; odd sides are zero-padded.
    nn::Tensor operator()(const nn::Tensor& x) const;
    void collect(const std::string& prefix, nn::NamedParams& out) const;
};

struct SwinStage {
    std::optional<PatchMerging> merge;  // absent for stage 0
    std::vector<SwinBlock> blocks;
    nn::LayerNorm out_norm;
};

struct SwinConfig {
    int dim = 96;
    std::array<int, 4> depths{2, 2, 6, 2};
    int window = 8;
    int head_dim = 32;
    int mlp_ratio = 4;
};

class SwinBackbone {
public:
    SwinBackbone() = default;
    SwinBackbone(const SwinConfig& config, nn::Rng& rng);

    /// Layer-normalised output of every stage.
    std::array<nn::Tensor, 4> forward(const nn::Tensor& grid) const;
    void collect(const std::string& prefix, nn::NamedParams& out) const;
    int channels(int stage) const { return config_.dim << stage; }
    int block_count() const;
    const SwinConfig& config() const { return config_; }

private:
    SwinConfig config_;
    std::vector<SwinStage> stages_;
};

/// Heads used at a given width: max(1, dim / head_dim), reduced until it divides dim.
int heads_for(int dim, int head_dim);

}  // namespace docmsu
