// SPDX-License-Identifier: Apache-2.0
#include "docmsu/swin.hpp"

#include <algorithm>

#include "docmsu/errors.hpp"
#include "docmsu/nn/ops.hpp"

namespace docmsu {
namespace {

/// Region id along one axis of a shifted, padded image.
int region(int p, int size, int ws, int shift) {
    if (p < size - ws) return 0;
    if (p < size - shift) return 1;
    return 2;
}

}  // namespace

int heads_for(int dim, int head_dim) {
    int h = std::max(1, dim / std::max(1, head_dim));
    while (dim % h != 0) --h;
    return h;
}

SwinBlock::SwinBlock(int dim_, int heads_, int window_, bool shifted_, int mlp_ratio, nn::Rng& rng)
    : dim(dim_),
      heads(heads_),
      window(window_),
      shifted(shifted_),
      norm1(dim_),
      qkv(dim_, 3 * dim_, rng),
      proj(dim_, dim_, rng),
      bias_table(nn::trunc_normal({(2 * window_ - 1) * (2 * window_ - 1), heads_}, 0.02, rng)),
      norm2(dim_),
      fc1(dim_, mlp_ratio * dim_, rng),
      fc2(mlp_ratio * dim_, dim_, rng) {}

void SwinBlock::collect(const std::string& prefix, nn::NamedParams& out) const {
    norm1.collect(prefix + ".norm1", out);
    qkv.collect(prefix + ".attn.qkv", out);
    proj.collect(prefix + ".attn.proj", out);
    out.emplace_back(prefix + ".attn.relative_position_bias_table", bias_table);
    norm2.collect(prefix + ".norm2", out);
    fc1.collect(prefix + ".mlp.fc1", out);
    fc2.collect(prefix + ".mlp.fc2", out);
}

nn::Tensor SwinBlock::operator()(const nn::Tensor& x) const {
    if (x.rank() != 3 || x.dim(2) != dim) throw ShapeError("swin block: expected [H, W, " + std::to_string(dim) + "]");
    const int H = x.dim(0);
    const int W = x.dim(1);
    const int C = dim;
    const int ws = std::min({window, H, W});
    const int shift = (shifted && ws < std::min(H, W)) ? ws / 2 : 0;
    const int Hp = (H + ws - 1) / ws * ws;
    const int Wp = (W + ws - 1) / ws * ws;
    const int nwh = Hp / ws;
    const int nww = Wp / ws;
    const int nW = nwh * nww;
    const int N = ws * ws;

    // Pad, cyclically shift by -shift and partition in one gather.
    std::vector<int> fwd(static_cast<std::size_t>(nW) * N * C);
    std::vector<int> back(static_cast<std::size_t>(H) * W * C);
    for (int w = 0; w < nW; ++w) {
        for (int t = 0; t < N; ++t) {
            const int sy = (w / nww) * ws + t / ws;
            const int sx = (w % nww) * ws + t % ws;
            const int py = (sy + shift) % Hp;
            const int px = (sx + shift) % Wp;
            const std::size_t row = static_cast<std::size_t>(w) * N + t;
            const bool inside = py < H && px < W;
            for (int c = 0; c < C; ++c) {
                fwd[row * C + c] = inside ? (py * W + px) * C + c : -1;
                if (inside) back[(static_cast<std::size_t>(py) * W + px) * C + c] = static_cast<int>(row * C + c);
            }
        }
    }

    // Relative position bias, indexed inside the (possibly clamped) window.
    std::vector<int> bias_idx(static_cast<std::size_t>(heads) * N * N);
    const int span = 2 * window - 1;
    for (int h = 0; h < heads; ++h) {
        for (int i = 0; i < N; ++i) {
            for (int j = 0; j < N; ++j) {
                const int dy = i / ws - j / ws + window - 1;
                const int dx = i % ws - j % ws + window - 1;
                bias_idx[(static_cast<std::size_t>(h) * N + i) * N + j] = (dy * span + dx) * heads + h;
            }
        }
    }
    const auto bias = nn::gather(bias_table, nn::make_index(std::move(bias_idx)), {heads, N, N});

    std::shared_ptr<const std::vector<double>> mask;
    if (shift > 0) {
        auto m = std::make_shared<std::vector<double>>(static_cast<std::size_t>(nW) * N * N, 0.0);
        for (int w = 0; w < nW; ++w) {
            std::vector<int> ids(N);
            for (int t = 0; t < N; ++t) {
                const int sy = (w / nww) * ws + t / ws;
                const int sx = (w % nww) * ws + t % ws;
                ids[t] = region(sy, Hp, ws, shift) * 3 + region(sx, Wp, ws, shift);
            }
            for (int i = 0; i < N; ++i) {
                for (int j = 0; j < N; ++j) {
                    if (ids[i] != ids[j]) (*m)[(static_cast<std::size_t>(w) * N + i) * N + j] = -100.0;
                }
            }
        }
        mask = std::move(m);
    }

    const auto rows = nn::gather(norm1(x), nn::make_index(std::move(fwd)), {nW * N, C});
    const auto attn = proj(nn::window_attention(qkv(rows), bias, mask, mask ? nW : 0, nW, N, heads));
    nn::Tensor y = nn::add(x, nn::gather(attn, nn::make_index(std::move(back)), {H, W, C}));
    return nn::add(y, fc2(nn::gelu(fc1(norm2(y)))));
}

PatchMerging::PatchMerging(int dim, nn::Rng& rng) : norm(4 * dim), reduce(4 * dim, 2 * dim, rng, false) {}

void PatchMerging::collect(const std::string& prefix, nn::NamedParams& out) const {
    norm.collect(prefix + ".norm", out);
    reduce.collect(prefix + ".reduction", out);
}

nn::Tensor PatchMerging::operator()(const nn::Tensor& x) const {
    const int H = x.dim(0);
    const int W = x.dim(1);
    const int C = x.dim(2);
    const int h2 = (H + 1) / 2;
    const int w2 = (W + 1) / 2;
    static constexpr int kOffsets[4][2] = {{0, 0}, {1, 0}, {0, 1}, {1, 1}};
    std::vector<int> idx(static_cast<std::size_t>(h2) * w2 * 4 * C);
    std::size_t o = 0;
    for (int i = 0; i < h2; ++i) {
        for (int j = 0; j < w2; ++j) {
            for (const auto& off : kOffsets) {
                const int y = 2 * i + off[0];
                const int xx = 2 * j + off[1];
                const bool inside = y < H && xx < W;
                for (int c = 0; c < C; ++c) idx[o++] = inside ? (y * W + xx) * C + c : -1;
            }
        }
    }
    return reduce(norm(nn::gather(x, nn::make_index(std::move(idx)), {h2, w2, 4 * C})));
}

SwinBackbone::SwinBackbone(const SwinConfig& config, nn::Rng& rng) : config_(config) {
    if (config.dim < 1 || config.window < 1) throw ValidationError("swin: dim and window must be >= 1");
    for (int s = 0; s < 4; ++s) {
        if (config.depths[s] < 1) throw ValidationError("swin: every stage needs at least one block");
        SwinStage stage;
        const int dim = channels(s);
        if (s > 0) stage.merge.emplace(channels(s - 1), rng);
        const int heads = heads_for(dim, config.head_dim);
        for (int b = 0; b < config.depths[s]; ++b) {
            stage.blocks.emplace_back(dim, heads, config.window, b % 2 == 1, config.mlp_ratio, rng);
        }
        stage.out_norm = nn::LayerNorm(dim);
        stages_.push_back(std::move(stage));
    }
}

std::array<nn::Tensor, 4> SwinBackbone::forward(const nn::Tensor& grid) const {
    if (grid.rank() != 3 || grid.dim(2) != config_.dim) {
        throw ShapeError("backbone: expected [H, W, " + std::to_string(config_.dim) + "], got " +
                         nn::shape_str(grid.shape()));
    }
    std::array<nn::Tensor, 4> outs;
    nn::Tensor x = grid;
    for (int s = 0; s < 4; ++s) {
        const auto& stage = stages_[s];
        if (stage.merge) x = (*stage.merge)(x);
        for (const auto& block : stage.blocks) x = block(x);
        outs[s] = stage.out_norm(x);
    }
    return outs;
}

void SwinBackbone::collect(const std::string& prefix, nn::NamedParams& out) const {
    for (int s = 0; s < 4; ++s) {
        const std::string p = prefix + ".stages." + std::to_string(s);
        if (stages_[s].merge) stages_[s].merge->collect(p + ".downsample", out);
        for (std::size_t b = 0; b < stages_[s].blocks.size(); ++b) {
            stages_[s].blocks[b].collect(p + ".blocks." + std::to_string(b), out);
        }
        stages_[s].out_norm.collect(p + ".norm", out);
    }
}

int SwinBackbone::block_count() const {
    int n = 0;
    for (const auto& s : stages_) n += static_cast<int>(s.blocks.size());
    return n;
}

}  // namespace docmsu
