// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <utility>
#include <vector>

namespace docmsu {

/// Interleaved RGB image, row-major H x W x 3, values in [0, 1].
struct RgbImage {
    int height = 0;
    int width = 0;
    std::vector<double> pixels;

    double& at(int y, int x, int c) { return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
    double at(int y, int x, int c) const {
        return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c];
    }
};

RgbImage make_image(int height, int width, double fill = 0.0);

/// PNG/JPEG through OpenCV. Throws MissingArtifactError / ValidationError.
RgbImage load_image(const std::filesystem::path& path);

/// (width, height) of an image file.
std::pair<int, int> image_size(const std::filesystem::path& path);

void save_png(const std::filesystem::path& path, const RgbImage& image);

RgbImage resize_bilinear(const RgbImage& image, int height, int width);

/// Blends a jet-colormapped heat map (any resolution, row-major) over `base`.
RgbImage overlay_heatmap(const RgbImage& base, const std::vector<double>& heat, int heat_h, int heat_w,
                         double alpha = 0.5);

}  // namespace docmsu
