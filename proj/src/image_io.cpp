// SPDX-License-Identifier: Apache-2.0
#include "docmsu/image_io.hpp"

#include <algorithm>
#include <cmath>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "docmsu/errors.hpp"

namespace docmsu {
namespace {

cv::Mat to_mat_u8(const RgbImage& img) {
    cv::Mat m(img.height, img.width, CV_8UC3);
    for (int y = 0; y < img.height; ++y) {
        auto* row = m.ptr<cv::Vec3b>(y);
        for (int x = 0; x < img.width; ++x) {
            for (int c = 0; c < 3; ++c) {
                const double v = std::clamp(img.at(y, x, c), 0.0, 1.0);
                // OpenCV stores BGR.
                row[x][2 - c] = static_cast<unsigned char>(std::lround(v * 255.0));
            }
        }
    }
    return m;
}

RgbImage from_mat_u8(const cv::Mat& m) {
    RgbImage img = make_image(m.rows, m.cols);
    for (int y = 0; y < m.rows; ++y) {
        const auto* row = m.ptr<cv::Vec3b>(y);
        for (int x = 0; x < m.cols; ++x) {
            for (int c = 0; c < 3; ++c) img.at(y, x, c) = row[x][2 - c] / 255.0;
        }
    }
    return img;
}

}  // namespace

RgbImage make_image(int height, int width, double fill) {
    RgbImage img;
    img.height = height;
    img.width = width;
    img.pixels.assign(static_cast<std::size_t>(height) * width * 3, fill);
    return img;
}

RgbImage load_image(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) throw MissingArtifactError("image not found: " + path.string());
    cv::Mat m = cv::imread(path.string(), cv::IMREAD_COLOR);
    if (m.empty()) throw ValidationError("cannot decode image: " + path.string());
    return from_mat_u8(m);
}

std::pair<int, int> image_size(const std::filesystem::path& path) {
    const auto img = load_image(path);
    return {img.width, img.height};
}

void save_png(const std::filesystem::path& path, const RgbImage& image) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    if (!cv::imwrite(path.string(), to_mat_u8(image))) {
        throw std::runtime_error("failed to write " + path.string());
    }
}

RgbImage resize_bilinear(const RgbImage& image, int height, int width) {
    if (image.height == height && image.width == width) return image;
    cv::Mat src(image.height, image.width, CV_64FC3, const_cast<double*>(image.pixels.data()));
    cv::Mat dst;
    cv::resize(src, dst, cv::Size(width, height), 0, 0, cv::INTER_LINEAR);
    RgbImage out = make_image(height, width);
    std::copy(dst.ptr<double>(0), dst.ptr<double>(0) + out.pixels.size(), out.pixels.begin());
    return out;
}

RgbImage overlay_heatmap(const RgbImage& base, const std::vector<double>& heat, int heat_h, int heat_w,
                         double alpha) {
    cv::Mat h(heat_h, heat_w, CV_64FC1, const_cast<double*>(heat.data()));
    double lo = 0.0;
    double hi = 0.0;
    cv::minMaxLoc(h, &lo, &hi);
    cv::Mat norm;
    h.convertTo(norm, CV_8UC1, hi > lo ? 255.0 / (hi - lo) : 0.0, hi > lo ? -lo * 255.0 / (hi - lo) : 0.0);
    cv::Mat up;
    cv::resize(norm, up, cv::Size(base.width, base.height), 0, 0, cv::INTER_LINEAR);
    cv::Mat colored;
    cv::applyColorMap(up, colored, cv::COLORMAP_JET);
    cv::Mat blended;
    cv::addWeighted(to_mat_u8(base), 1.0 - alpha, colored, alpha, 0.0, blended);
    return from_mat_u8(blended);
}

}  // namespace docmsu
