// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <random>
#include <string>
#include <utility>
#include <vector>

#include "docmsu/nn/tensor.hpp"

namespace docmsu::nn {

using Rng = std::mt19937_64;
using NamedParams = std::vector<std::pair<std::string, Tensor>>;

/// Truncated normal (+-2 std) initialised leaf.
Tensor trunc_normal(Shape shape, double std, Rng& rng);

struct Linear {
    Tensor w;  // [in, out]
    Tensor b;  // [out] or undefined

    Linear() = default;
    Linear(int in, int out, Rng& rng, bool bias = true, double std = 0.02);
    Tensor operator()(const Tensor& x) const;
    void collect(const std::string& prefix, NamedParams& out) const;
};

struct LayerNorm {
    Tensor gamma;
    Tensor beta;
    double eps = 1e-5;

    LayerNorm() = default;
    explicit LayerNorm(int dim, double eps = 1e-5);
    Tensor operator()(const Tensor& x) const;
    void collect(const std::string& prefix, NamedParams& out) const;
};

struct Conv2d {
    Tensor w;  // [k, k, cin, cout]
    Tensor b;  // [cout]
    int stride = 1;
    int pad = 0;

    Conv2d() = default;
    Conv2d(int cin, int cout, int kernel, int stride, int pad, Rng& rng);
    Tensor operator()(const Tensor& x) const;
    void collect(const std::string& prefix, NamedParams& out) const;
};

}  // namespace docmsu::nn
