// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "docmsu/nn/layers.hpp"

namespace docmsu::nn {

struct AdamWOptions {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
};

/// Adam with decoupled weight decay. Parameters named "*.bias" or belonging to
/// a normalisation layer are not decayed.
class AdamW {
public:
    AdamW(NamedParams params, AdamWOptions options);

    /// Applies one update from the accumulated gradients, scaled by `grad_scale`.
    void step(double grad_scale = 1.0);
    void zero_grad();

    const AdamWOptions& options() const { return options_; }
    long steps() const { return t_; }

private:
    NamedParams params_;
    std::vector<bool> decay_;
    std::vector<std::vector<double>> m_;
    std::vector<std::vector<double>> v_;
    AdamWOptions options_;
    long t_ = 0;
};

}  // namespace docmsu::nn
