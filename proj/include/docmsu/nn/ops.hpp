// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <memory>
#include <vector>

#include "docmsu/nn/tensor.hpp"

namespace docmsu::nn {

using IndexList = std::shared_ptr<const std::vector<int>>;

IndexList make_index(std::vector<int> idx);

/// Elementwise sum. `b` may have a shape equal to a trailing suffix of `a`'s
/// shape, in which case it is broadcast over the leading axes.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);

/// [M,K] x [K,N].
Tensor matmul(const Tensor& a, const Tensor& b);

/// x[..., in] * w[in, out] + b[out]. `b` may be undefined.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

Tensor relu(const Tensor& x);
/// Exact (erf) GELU.
Tensor gelu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
/// exp(clamp(x, -limit, limit)); the gradient is zero where clamped.
Tensor exp_clamped(const Tensor& x, double limit);

/// Normalizes over the last axis.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

Tensor reshape(const Tensor& x, Shape shape);

/// out.flat[i] = x.flat[idx[i]], or 0 where idx[i] < 0. Backward scatter-adds.
Tensor gather(const Tensor& x, const IndexList& idx, Shape shape);

/// [m, rest...] -> [rest...], mean over the leading axis.
Tensor mean_axis0(const Tensor& x);
/// [..., C] -> [C], mean over every axis but the last.
Tensor mean_rows(const Tensor& x);
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

/// Concatenates along axis 0; trailing dims must agree.
Tensor concat(const std::vector<Tensor>& parts);

/// x[H, W, Cin], w[k, k, Cin, Cout], b[Cout] (optional) -> [Ho, Wo, Cout].
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad);

/// Multi-head self-attention inside `windows` independent groups of `tokens` rows.
///
/// qkv is [windows * tokens, 3C] laid out as [q | k | v]. `bias` (optional) is
/// [heads, tokens, tokens] and is added to every window's logits. `mask`
/// (optional, constant) holds `mask_windows` blocks of [tokens, tokens];
/// window w uses block w % mask_windows. Returns [windows * tokens, C].
Tensor window_attention(const Tensor& qkv, const Tensor& bias, const std::shared_ptr<const std::vector<double>>& mask,
                        int mask_windows, int windows, int tokens, int heads);

/// Mean binary cross-entropy on logits against constant targets.
Tensor bce_with_logits(const Tensor& logits, const std::vector<double>& targets);

}  // namespace docmsu::nn
