// SPDX-License-Identifier: Apache-2.0
#include "docmsu/losses.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "docmsu/errors.hpp"

namespace docmsu {

CiouResult ciou(const Corners& p, const Corners& g) {
    const double wp = p.x2 - p.x1;
    const double hp = p.y2 - p.y1;
    const double wg = g.x2 - g.x1;
    const double hg = g.y2 - g.y1;
    if (!(wp > 0.0 && hp > 0.0 && wg > 0.0 && hg > 0.0)) throw ValidationError("ciou: degenerate box");

    // Indices into the gradient arrays.
    enum { X1, Y1, X2, Y2 };
    using Grad = std::array<double, 4>;

    // Intersection.
    const double ix1 = std::max(p.x1, g.x1);
    const double ix2 = std::min(p.x2, g.x2);
    const double iy1 = std::max(p.y1, g.y1);
    const double iy2 = std::min(p.y2, g.y2);
    const double iw = std::max(0.0, ix2 - ix1);
    const double ih = std::max(0.0, iy2 - iy1);
    const double inter = iw * ih;
    Grad d_iw{};
    Grad d_ih{};
    if (iw > 0.0) {
        if (p.x1 > g.x1) d_iw[X1] = -1.0;
        if (p.x2 < g.x2) d_iw[X2] = 1.0;
    }
    if (ih > 0.0) {
        if (p.y1 > g.y1) d_ih[Y1] = -1.0;
        if (p.y2 < g.y2) d_ih[Y2] = 1.0;
    }
    Grad d_inter{};
    for (int k = 0; k < 4; ++k) d_inter[k] = d_iw[k] * ih + iw * d_ih[k];

    // Union and IoU.
    const Grad d_area{-hp, -wp, hp, wp};
    const double uni = wp * hp + wg * hg - inter;
    const double iou = inter / uni;
    Grad d_iou{};
    for (int k = 0; k < 4; ++k) {
        const double d_uni = d_area[k] - d_inter[k];
        d_iou[k] = (d_inter[k] * uni - inter * d_uni) / (uni * uni);
    }

    // Centre distance over enclosing-box diagonal.
    const double dx = 0.5 * (p.x1 + p.x2) - 0.5 * (g.x1 + g.x2);
    const double dy = 0.5 * (p.y1 + p.y2) - 0.5 * (g.y1 + g.y2);
    const double rho2 = dx * dx + dy * dy;
    const Grad d_rho2{dx, dy, dx, dy};
    const double ew = std::max(p.x2, g.x2) - std::min(p.x1, g.x1);
    const double eh = std::max(p.y2, g.y2) - std::min(p.y1, g.y1);
    const double c2 = ew * ew + eh * eh;
    Grad d_c2{};
    if (p.x1 < g.x1) d_c2[X1] = -2.0 * ew;
    if (p.x2 > g.x2) d_c2[X2] = 2.0 * ew;
    if (p.y1 < g.y1) d_c2[Y1] = -2.0 * eh;
    if (p.y2 > g.y2) d_c2[Y2] = 2.0 * eh;
    const double dist = rho2 / c2;

    // Aspect-ratio consistency.
    const double k4 = 4.0 / (std::numbers::pi * std::numbers::pi);
    const double a = std::atan(wg / hg) - std::atan(wp / hp);
    const double v = k4 * a * a;
    const double s = wp * wp + hp * hp;
    const Grad d_atan{-hp / s, wp / s, hp / s, -wp / s};
    Grad d_v{};
    for (int k = 0; k < 4; ++k) d_v[k] = -2.0 * k4 * a * d_atan[k];

    // alpha * v = v^2 / (1 - IoU + v), zero (with zero slope) when both vanish.
    const double denom = 1.0 - iou + v;
    double av = 0.0;
    Grad d_av{};
    if (denom > 0.0) {
        av = v * v / denom;
        for (int k = 0; k < 4; ++k) {
            const double d_denom = -d_iou[k] + d_v[k];
            d_av[k] = (2.0 * v * d_v[k] * denom - v * v * d_denom) / (denom * denom);
        }
    }

    CiouResult r;
    r.iou = iou;
    r.loss = 1.0 - iou + dist + av;
    for (int k = 0; k < 4; ++k) {
        const double d_dist = (d_rho2[k] * c2 - rho2 * d_c2[k]) / (c2 * c2);
        r.grad[k] = -d_iou[k] + d_dist + d_av[k];
    }
    return r;
}

double bce(double prob, double target) {
    constexpr double kEps = 1e-12;
    const double p = std::clamp(prob, kEps, 1.0 - kEps);
    return -(target * std::log(p) + (1.0 - target) * std::log(1.0 - p));
}

nn::Tensor ciou_loss(const nn::Tensor& pred, const std::vector<Corners>& gold) {
    if (pred.rank() != 2 || pred.dim(1) != 4 || static_cast<std::size_t>(pred.dim(0)) != gold.size() ||
        gold.empty()) {
        throw ShapeError("ciou_loss: prediction shape " + nn::shape_str(pred.shape()));
    }
    const auto pv = pred.data();
    const auto k = gold.size();
    double total = 0.0;
    std::vector<double> grads(4 * k);
    for (std::size_t i = 0; i < k; ++i) {
        const Corners p{pv[4 * i], pv[4 * i + 1], pv[4 * i + 2], pv[4 * i + 3]};
        const auto r = ciou(p, gold[i]);
        total += r.loss;
        std::copy(r.grad.begin(), r.grad.end(), grads.begin() + static_cast<long>(4 * i));
    }
    const double count = static_cast<double>(k);
    nn::Node* pn = pred.node();
    return nn::detail::make_result({}, {total / count}, {pred}, [pn, grads, count](nn::Node& self) {
        auto g = pn->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[0] * grads[i] / count;
    });
}

}  // namespace docmsu
