// SPDX-License-Identifier: Apache-2.0
#include "docmsu/image_encoder.hpp"

#include "docmsu/errors.hpp"
#include "docmsu/nn/ops.hpp"

namespace docmsu {

nn::Tensor image_tensor(const RgbImage& image) {
    return nn::Tensor::from({image.height, image.width, 3}, image.pixels);
}

ConvStack::ConvStack(int depth, int channels, nn::Rng& rng) {
    if (depth < 0) throw ValidationError("conv depth must be >= 0");
    for (int i = 0; i < depth; ++i) layers.emplace_back(i == 0 ? 3 : channels, channels, 3, 1, 1, rng);
}

void ConvStack::collect(const std::string& prefix, nn::NamedParams& out) const {
    for (std::size_t i = 0; i < layers.size(); ++i) layers[i].collect(prefix + "." + std::to_string(i), out);
}

nn::Tensor conv_stack(const nn::Tensor& image, const ConvStack& stack) {
    if (image.rank() != 3 || image.dim(2) != 3) {
        throw ShapeError("conv_stack: expected an RGB [H, W, 3] image, got " + nn::shape_str(image.shape()));
    }
    if (image.dim(0) < kPatchSize || image.dim(1) < kPatchSize) throw ShapeError("conv_stack: image smaller than 4x4");
    nn::Tensor x = image;
    for (const auto& conv : stack.layers) x = nn::relu(conv(x));
    return x;
}

PatchProjector::PatchProjector(int in_channels, int d, nn::Rng& rng)
    : conv(in_channels, d, kPatchSize, kPatchSize, 0, rng), norm(d) {}

void PatchProjector::collect(const std::string& prefix, nn::NamedParams& out) const {
    conv.collect(prefix + ".conv", out);
    norm.collect(prefix + ".norm", out);
}

nn::Tensor patch_project(const nn::Tensor& features, const PatchProjector& projector) {
    if (features.rank() != 3 || features.dim(0) % kPatchSize != 0 || features.dim(1) % kPatchSize != 0) {
        throw ShapeError("patch_project: spatial dims must be multiples of 4, got " +
                         nn::shape_str(features.shape()));
    }
    if (features.dim(2) != projector.conv.w.dim(2)) throw ShapeError("patch_project: channel mismatch");
    return projector.norm(projector.conv(features));
}

WindowStack window_partition(const nn::Tensor& grid, int L) {
    if (L < 1) throw ValidationError("window side must be >= 1");
    if (grid.rank() != 3) throw ShapeError("window_partition: expected [H, W, d]");
    const int h = grid.dim(0);
    const int w = grid.dim(1);
    const int d = grid.dim(2);
    WindowStack ws;
    ws.rows = (h + L - 1) / L;
    ws.cols = (w + L - 1) / L;
    ws.L = L;
    ws.d = d;
    ws.grid_h = h;
    ws.grid_w = w;
    const int m = ws.rows * ws.cols;

    std::vector<int> idx(static_cast<std::size_t>(m) * L * L * d);
    std::size_t o = 0;
    for (int k = 0; k < m; ++k) {
        ws.positions.push_back(k);
        const int r0 = (k / ws.cols) * L;
        const int c0 = (k % ws.cols) * L;
        for (int i = 0; i < L; ++i) {
            for (int j = 0; j < L; ++j) {
                const int y = r0 + i;
                const int x = c0 + j;
                const bool inside = y < h && x < w;
                for (int c = 0; c < d; ++c) idx[o++] = inside ? (y * w + x) * d + c : -1;
            }
        }
    }
    ws.windows = nn::gather(grid, nn::make_index(std::move(idx)), {m, L, L, d});
    return ws;
}

nn::Tensor window_reassemble(const nn::Tensor& windows, const std::vector<int>& positions, int rows, int cols) {
    if (windows.rank() != 4 || windows.dim(1) != windows.dim(2)) throw ShapeError("window_reassemble: expected [m, L, L, d]");
    const int m = windows.dim(0);
    const int L = windows.dim(1);
    const int d = windows.dim(3);
    if (static_cast<int>(positions.size()) != m || m != rows * cols) {
        throw ShapeError("window_reassemble: window count does not match the tile grid");
    }
    std::vector<int> slot(static_cast<std::size_t>(m), -1);
    for (int k = 0; k < m; ++k) {
        const int p = positions[k];
        if (p < 0 || p >= m || slot[p] >= 0) throw ValidationError("window_reassemble: invalid window positions");
        slot[p] = k;
    }
    const int H = rows * L;
    const int W = cols * L;
    std::vector<int> idx(static_cast<std::size_t>(H) * W * d);
    std::size_t o = 0;
    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
            const int k = slot[(y / L) * cols + x / L];
            const int base = ((k * L + y % L) * L + x % L) * d;
            for (int c = 0; c < d; ++c) idx[o++] = base + c;
        }
    }
    return nn::gather(windows, nn::make_index(std::move(idx)), {H, W, d});
}

nn::Tensor crop(const nn::Tensor& x, int h, int w) {
    if (x.rank() != 3 || h > x.dim(0) || w > x.dim(1)) throw ShapeError("crop: out of range");
    if (h == x.dim(0) && w == x.dim(1)) return x;
    const int W = x.dim(1);
    const int d = x.dim(2);
    std::vector<int> idx(static_cast<std::size_t>(h) * w * d);
    std::size_t o = 0;
    for (int y = 0; y < h; ++y) {
        for (int xx = 0; xx < w; ++xx) {
            for (int c = 0; c < d; ++c) idx[o++] = (y * W + xx) * d + c;
        }
    }
    return nn::gather(x, nn::make_index(std::move(idx)), {h, w, d});
}

}  // namespace docmsu
