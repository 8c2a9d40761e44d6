// SPDX-License-Identifier: Apache-2.0
//
// Shared helpers for the unit and acceptance tests.
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "docmsu/nn/tensor.hpp"

namespace docmsu::testing {

/// Central difference of a scalar-valued f with respect to one element.
inline double numeric_grad(const std::function<double()>& f, nn::Tensor x, std::size_t i, double h = 1e-6) {
    auto v = x.mutable_data();
    const double keep = v[i];
    v[i] = keep + h;
    const double up = f();
    v[i] = keep - h;
    const double down = f();
    v[i] = keep;
    return (up - down) / (2.0 * h);
}

/// Elementwise results can differ in the last bit with buffer alignment, so
/// tensors computed along different paths are compared with this.
inline double max_abs_diff(const nn::Tensor& a, const nn::Tensor& b) {
    if (a.shape() != b.shape()) return INFINITY;
    double worst = 0.0;
    for (std::size_t i = 0; i < a.data().size(); ++i) worst = std::max(worst, std::abs(a.data()[i] - b.data()[i]));
    return worst;
}

inline double rel_error(double a, double b) {
    const double m = std::max(std::abs(a), std::abs(b));
    return m == 0.0 ? 0.0 : std::abs(a - b) / m;
}

/// Largest mismatch between backprop and central differences over every
/// element of each input, measured as |a - n| / (atol + max(|a|, |n|)).
inline double max_grad_mismatch(const std::function<nn::Tensor()>& f, const std::vector<nn::Tensor>& inputs,
                                double h = 1e-5, double atol = 1e-7) {
    for (auto t : inputs) t.zero_grad();
    f().backward();
    auto value = [&] {
        nn::NoGradGuard g;
        return f().item();
    };
    double worst = 0.0;
    for (const auto& t : inputs) {
        const std::vector<double> analytic(t.grad().begin(), t.grad().end());
        for (std::size_t i = 0; i < analytic.size(); ++i) {
            const double n = numeric_grad(value, t, i, h);
            const double a = analytic[i];
            worst = std::max(worst, std::abs(a - n) / (atol + std::max(std::abs(a), std::abs(n))));
        }
    }
    return worst;
}

inline nn::Tensor random_leaf(nn::Shape shape, std::mt19937_64& rng, double scale = 1.0) {
    std::normal_distribution<double> n(0.0, scale);
    std::vector<double> v(static_cast<std::size_t>(nn::numel(shape)));
    for (auto& x : v) x = n(rng);
    return nn::Tensor::from(std::move(shape), std::move(v), true);
}

/// Fixed random weights so a scalar loss exercises every output element.
inline std::vector<double> random_weights(std::size_t n, std::mt19937_64& rng) {
    std::normal_distribution<double> d(0.0, 1.0);
    std::vector<double> v(n);
    for (auto& x : v) x = d(rng);
    return v;
}

}  // namespace docmsu::testing
