// SPDX-License-Identifier: Apache-2.0
#include "docmsu/nn/optim.hpp"

#include <cmath>

namespace docmsu::nn {
namespace {

bool ends_with(const std::string& s, const std::string& suffix) {
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

}  // namespace

AdamW::AdamW(NamedParams params, AdamWOptions options) : params_(std::move(params)), options_(options) {
    for (const auto& [name, t] : params_) {
        const bool no_decay = ends_with(name, ".bias") || name.find("norm") != std::string::npos ||
                              name.find("bias_table") != std::string::npos;
        decay_.push_back(!no_decay);
        m_.emplace_back(static_cast<std::size_t>(t.numel()), 0.0);
        v_.emplace_back(static_cast<std::size_t>(t.numel()), 0.0);
    }
}

void AdamW::step(double grad_scale) {
    ++t_;
    const double bc1 = 1.0 - std::pow(options_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(options_.beta2, static_cast<double>(t_));
    for (std::size_t p = 0; p < params_.size(); ++p) {
        Tensor& t = params_[p].second;
        const auto g = t.grad();
        if (g.empty()) continue;
        auto w = t.mutable_data();
        auto& m = m_[p];
        auto& v = v_[p];
        for (std::size_t i = 0; i < w.size(); ++i) {
            const double gi = g[i] * grad_scale;
            m[i] = options_.beta1 * m[i] + (1.0 - options_.beta1) * gi;
            v[i] = options_.beta2 * v[i] + (1.0 - options_.beta2) * gi * gi;
            if (decay_[p]) w[i] -= options_.lr * options_.weight_decay * w[i];
            w[i] -= options_.lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + options_.eps);
        }
    }
}

void AdamW::zero_grad() {
    for (auto& [_, t] : params_) t.zero_grad();
}

}  // namespace docmsu::nn
