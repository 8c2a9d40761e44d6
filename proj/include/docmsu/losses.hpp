// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <vector>

#include "docmsu/data_model.hpp"
#include "docmsu/nn/tensor.hpp"

namespace docmsu {

/// Box as (x1, y1, x2, y2) corners.
struct Corners {
    double x1 = 0.0;
    double y1 = 0.0;
    double x2 = 0.0;
    double y2 = 0.0;

    static Corners from_box(const BoundingBox& b) { return {b.x, b.y, b.x2(), b.y2()}; }
    BoundingBox to_box() const { return {x1, y1, x2 - x1, y2 - y1}; }
};

struct CiouResult {
    double loss = 0.0;
    double iou = 0.0;
    /// d loss / d (x1, y1, x2, y2) of the predicted box.
    std::array<double, 4> grad{};
};

/// Complete-IoU loss 1 - IoU + rho^2 / c^2 + alpha * v with
/// v = 4/pi^2 (atan(wg/hg) - atan(wp/hp))^2 and alpha = v / (1 - IoU + v).
/// The gradient differentiates through alpha as well, so it is the exact
/// derivative of the returned loss.
CiouResult ciou(const Corners& pred, const Corners& gold);

/// Binary cross-entropy on a probability, clamped to [1e-12, 1 - 1e-12].
double bce(double prob, double target);

/// Mean CIoU loss of predicted corners [K, 4] against constant gold boxes.
nn::Tensor ciou_loss(const nn::Tensor& pred, const std::vector<Corners>& gold);

}  // namespace docmsu
