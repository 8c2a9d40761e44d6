// SPDX-License-Identifier: Apache-2.0
#include "docmsu/nn/layers.hpp"

#include <cmath>

#include "docmsu/nn/ops.hpp"

namespace docmsu::nn {

Tensor trunc_normal(Shape shape, double std, Rng& rng) {
    std::normal_distribution<double> dist(0.0, std);
    std::vector<double> v(static_cast<std::size_t>(numel(shape)));
    for (auto& x : v) {
        do {
            x = dist(rng);
        } while (std::abs(x) > 2.0 * std);
    }
    return Tensor::from(std::move(shape), std::move(v), true);
}

Linear::Linear(int in, int out, Rng& rng, bool bias, double std)
    : w(trunc_normal({in, out}, std, rng)) {
    if (bias) b = Tensor::zeros({out}, true);
}

Tensor Linear::operator()(const Tensor& x) const { return linear(x, w, b); }

void Linear::collect(const std::string& prefix, NamedParams& out) const {
    out.emplace_back(prefix + ".weight", w);
    if (b.defined()) out.emplace_back(prefix + ".bias", b);
}

LayerNorm::LayerNorm(int dim, double eps_)
    : gamma(Tensor::full({dim}, 1.0, true)), beta(Tensor::zeros({dim}, true)), eps(eps_) {}

Tensor LayerNorm::operator()(const Tensor& x) const { return layer_norm(x, gamma, beta, eps); }

void LayerNorm::collect(const std::string& prefix, NamedParams& out) const {
    out.emplace_back(prefix + ".weight", gamma);
    out.emplace_back(prefix + ".bias", beta);
}

Conv2d::Conv2d(int cin, int cout, int kernel, int stride_, int pad_, Rng& rng)
    : w(trunc_normal({kernel, kernel, cin, cout}, std::sqrt(2.0 / (kernel * kernel * cin)), rng)),
      b(Tensor::zeros({cout}, true)),
      stride(stride_),
      pad(pad_) {}

Tensor Conv2d::operator()(const Tensor& x) const { return conv2d(x, w, b, stride, pad); }

void Conv2d::collect(const std::string& prefix, NamedParams& out) const {
    out.emplace_back(prefix + ".weight", w);
    out.emplace_back(prefix + ".bias", b);
}

}  // namespace docmsu::nn
