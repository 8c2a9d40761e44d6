// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "docmsu/image_io.hpp"
#include "docmsu/nn/layers.hpp"

namespace docmsu {

/// [H, W, 3] tensor of an RGB image in [0, 1].
nn::Tensor image_tensor(const RgbImage& image);

/// Stack of 3x3 / stride 1 / pad 1 convolutions, each followed by ReLU.
/// The first layer maps 3 -> channels, the rest channels -> channels.
struct ConvStack {
    std::vector<nn::Conv2d> layers;

    ConvStack() = default;
    ConvStack(int depth, int channels, nn::Rng& rng);
    int out_channels() const { return layers.empty() ? 3 : layers.back().w.dim(3); }
    void collect(const std::string& prefix, nn::NamedParams& out) const;
};

/// [H, W, 3] -> [H, W, c]. Depth 0 passes the image through.
nn::Tensor conv_stack(const nn::Tensor& image, const ConvStack& stack);

/// 4x4 / stride 4 convolution followed by LayerNorm.
struct PatchProjector {
    nn::Conv2d conv;
    nn::LayerNorm norm;

    PatchProjector() = default;
    PatchProjector(int in_channels, int d, nn::Rng& rng);
    void collect(const std::string& prefix, nn::NamedParams& out) const;
};

inline constexpr int kPatchSize = 4;

/// [H, W, c] -> [H/4, W/4, d]. Throws ShapeError unless H and W are multiples of 4.
nn::Tensor patch_project(const nn::Tensor& features, const PatchProjector& projector);

/// Non-overlapping L x L tiles of a zero-padded patch grid.
struct WindowStack {
    nn::Tensor windows;  // [m, L, L, d]
    /// Raster tile index (row * cols + col) of each stored window.
    std::vector<int> positions;
    int rows = 0;
    int cols = 0;
    int L = 0;
    int d = 0;
    int grid_h = 0;  // unpadded patch grid
    int grid_w = 0;

    int m() const { return static_cast<int>(positions.size()); }
    int pad_h() const { return rows * L - grid_h; }
    int pad_w() const { return cols * L - grid_w; }
};

WindowStack window_partition(const nn::Tensor& grid, int L);

/// Places every window at its recorded position: [rows*L, cols*L, d].
nn::Tensor window_reassemble(const nn::Tensor& windows, const std::vector<int>& positions, int rows, int cols);

/// Top-left [h, w] corner of a [H, W, c] tensor.
nn::Tensor crop(const nn::Tensor& x, int h, int w);

}  // namespace docmsu
