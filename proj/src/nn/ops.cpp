// SPDX-License-Identifier: Apache-2.0
#include "docmsu/nn/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <Eigen/Core>

#include "docmsu/errors.hpp"

namespace docmsu::nn {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;
using StridedMap = Eigen::Map<RowMat, 0, Eigen::OuterStride<>>;
using CStridedMap = Eigen::Map<const RowMat, 0, Eigen::OuterStride<>>;

/// Grad buffer of a parent, or an empty span when it does not need one.
std::span<double> grad_of(Node* n) {
    if (!n || !n->requires_grad) return {};
    return n->grad_buffer();
}

void require(bool ok, const std::string& what) {
    if (!ok) throw ShapeError(what);
}

bool is_suffix(const Shape& small, const Shape& big) {
    if (small.size() > big.size()) return false;
    return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

template <typename F, typename G>
Tensor unary(const Tensor& x, F f, G df) {
    const auto xv = x.data();
    std::vector<double> out(xv.size());
    for (std::size_t i = 0; i < xv.size(); ++i) out[i] = f(xv[i]);
    Node* xn = x.node();
    return detail::make_result(x.shape(), std::move(out), {x}, [xn, df](Node& self) {
        auto gx = grad_of(xn);
        if (gx.empty()) return;
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i] * df(xn->value[i], self.value[i]);
    });
}

}  // namespace

IndexList make_index(std::vector<int> idx) { return std::make_shared<const std::vector<int>>(std::move(idx)); }

Tensor add(const Tensor& a, const Tensor& b) {
    require(is_suffix(b.shape(), a.shape()),
            "add: cannot broadcast " + shape_str(b.shape()) + " onto " + shape_str(a.shape()));
    const auto av = a.data();
    const auto bv = b.data();
    const std::size_t inner = bv.size();
    std::vector<double> out(av.begin(), av.end());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i % inner];
    Node* an = a.node();
    Node* bn = b.node();
    return detail::make_result(a.shape(), std::move(out), {a, b}, [an, bn, inner](Node& self) {
        if (auto ga = grad_of(an); !ga.empty()) {
            for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += self.grad[i];
        }
        if (auto gb = grad_of(bn); !gb.empty()) {
            for (std::size_t i = 0; i < self.grad.size(); ++i) gb[i % inner] += self.grad[i];
        }
    });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require(a.shape() == b.shape(), "sub: shape mismatch");
    const auto av = a.data();
    const auto bv = b.data();
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
    Node* an = a.node();
    Node* bn = b.node();
    return detail::make_result(a.shape(), std::move(out), {a, b}, [an, bn](Node& self) {
        if (auto ga = grad_of(an); !ga.empty()) {
            for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += self.grad[i];
        }
        if (auto gb = grad_of(bn); !gb.empty()) {
            for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= self.grad[i];
        }
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require(a.shape() == b.shape(), "mul: shape mismatch");
    const auto av = a.data();
    const auto bv = b.data();
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
    Node* an = a.node();
    Node* bn = b.node();
    return detail::make_result(a.shape(), std::move(out), {a, b}, [an, bn](Node& self) {
        if (auto ga = grad_of(an); !ga.empty()) {
            for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += self.grad[i] * bn->value[i];
        }
        if (auto gb = grad_of(bn); !gb.empty()) {
            for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += self.grad[i] * an->value[i];
        }
    });
}

Tensor scale(const Tensor& a, double s) {
    return unary(a, [s](double v) { return v * s; }, [s](double, double) { return s; });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    require(a.rank() == 2 && b.rank() == 2 && a.dim(1) == b.dim(0),
            "matmul: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    const int m = a.dim(0);
    const int k = a.dim(1);
    const int n = b.dim(1);
    std::vector<double> out(static_cast<std::size_t>(m) * n);
    MapMat(out.data(), m, n).noalias() = CMapMat(a.data().data(), m, k) * CMapMat(b.data().data(), k, n);
    Node* an = a.node();
    Node* bn = b.node();
    return detail::make_result({m, n}, std::move(out), {a, b}, [an, bn, m, k, n](Node& self) {
        CMapMat g(self.grad.data(), m, n);
        if (auto ga = grad_of(an); !ga.empty()) {
            MapMat(ga.data(), m, k).noalias() += g * CMapMat(bn->value.data(), k, n).transpose();
        }
        if (auto gb = grad_of(bn); !gb.empty()) {
            MapMat(gb.data(), k, n).noalias() += CMapMat(an->value.data(), m, k).transpose() * g;
        }
    });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
    require(w.rank() == 2 && x.rank() >= 1 && x.dim(-1) == w.dim(0),
            "linear: input " + shape_str(x.shape()) + " vs weight " + shape_str(w.shape()));
    const int in = w.dim(0);
    const int out_dim = w.dim(1);
    require(!b.defined() || (b.rank() == 1 && b.dim(0) == out_dim), "linear: bias shape");
    const int rows = static_cast<int>(x.numel() / in);
    Shape shape = x.shape();
    shape.back() = out_dim;
    std::vector<double> out(static_cast<std::size_t>(rows) * out_dim);
    MapMat o(out.data(), rows, out_dim);
    o.noalias() = CMapMat(x.data().data(), rows, in) * CMapMat(w.data().data(), in, out_dim);
    if (b.defined()) {
        o.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(b.data().data(), out_dim);
    }
    Node* xn = x.node();
    Node* wn = w.node();
    Node* bn = b.defined() ? b.node() : nullptr;
    std::vector<Tensor> parents{x, w};
    if (b.defined()) parents.push_back(b);
    return detail::make_result(std::move(shape), std::move(out), std::move(parents),
                               [xn, wn, bn, rows, in, out_dim](Node& self) {
                                   CMapMat g(self.grad.data(), rows, out_dim);
                                   if (auto gx = grad_of(xn); !gx.empty()) {
                                       MapMat(gx.data(), rows, in).noalias() +=
                                           g * CMapMat(wn->value.data(), in, out_dim).transpose();
                                   }
                                   if (auto gw = grad_of(wn); !gw.empty()) {
                                       MapMat(gw.data(), in, out_dim).noalias() +=
                                           CMapMat(xn->value.data(), rows, in).transpose() * g;
                                   }
                                   if (auto gb = grad_of(bn); !gb.empty()) {
                                       Eigen::Map<Eigen::RowVectorXd>(gb.data(), out_dim) += g.colwise().sum();
                                   }
                               });
}

Tensor relu(const Tensor& x) {
    return unary(x, [](double v) { return v > 0.0 ? v : 0.0; },
                 [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor gelu(const Tensor& x) {
    constexpr double kInvSqrt2 = 0.70710678118654752440;
    const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
    return unary(
        x, [](double v) { return 0.5 * v * (1.0 + std::erf(v * kInvSqrt2)); },
        [inv_sqrt_2pi](double v, double) {
            return 0.5 * (1.0 + std::erf(v * kInvSqrt2)) + v * inv_sqrt_2pi * std::exp(-0.5 * v * v);
        });
}

Tensor sigmoid(const Tensor& x) {
    return unary(
        x,
        [](double v) {
            if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
            const double e = std::exp(v);
            return e / (1.0 + e);
        },
        [](double, double y) { return y * (1.0 - y); });
}

Tensor exp_clamped(const Tensor& x, double limit) {
    return unary(
        x, [limit](double v) { return std::exp(std::clamp(v, -limit, limit)); },
        [limit](double v, double y) { return (v > -limit && v < limit) ? y : 0.0; });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
    const int c = x.dim(-1);
    require(gamma.numel() == c && beta.numel() == c, "layer_norm: affine shape");
    const auto rows = static_cast<std::size_t>(x.numel() / c);
    const auto xv = x.data();
    const auto gv = gamma.data();
    const auto bv = beta.data();
    auto xhat = std::make_shared<std::vector<double>>(xv.size());
    auto inv_std = std::make_shared<std::vector<double>>(rows);
    std::vector<double> out(xv.size());
    for (std::size_t r = 0; r < rows; ++r) {
        const double* xr = xv.data() + r * c;
        double mean = 0.0;
        for (int j = 0; j < c; ++j) mean += xr[j];
        mean /= c;
        double var = 0.0;
        for (int j = 0; j < c; ++j) var += (xr[j] - mean) * (xr[j] - mean);
        var /= c;
        const double is = 1.0 / std::sqrt(var + eps);
        (*inv_std)[r] = is;
        for (int j = 0; j < c; ++j) {
            const double h = (xr[j] - mean) * is;
            (*xhat)[r * c + j] = h;
            out[r * c + j] = h * gv[j] + bv[j];
        }
    }
    Node* xn = x.node();
    Node* gn = gamma.node();
    Node* bn = beta.node();
    return detail::make_result(x.shape(), std::move(out), {x, gamma, beta},
                               [xn, gn, bn, xhat, inv_std, rows, c](Node& self) {
                                   auto gx = grad_of(xn);
                                   auto gg = grad_of(gn);
                                   auto gb = grad_of(bn);
                                   std::vector<double> dxhat(static_cast<std::size_t>(c));
                                   for (std::size_t r = 0; r < rows; ++r) {
                                       const double* dy = self.grad.data() + r * c;
                                       const double* h = xhat->data() + r * c;
                                       double m1 = 0.0;
                                       double m2 = 0.0;
                                       for (int j = 0; j < c; ++j) {
                                           if (!gg.empty()) gg[j] += dy[j] * h[j];
                                           if (!gb.empty()) gb[j] += dy[j];
                                           dxhat[j] = dy[j] * gn->value[j];
                                           m1 += dxhat[j];
                                           m2 += dxhat[j] * h[j];
                                       }
                                       if (gx.empty()) continue;
                                       m1 /= c;
                                       m2 /= c;
                                       for (int j = 0; j < c; ++j) {
                                           gx[r * c + j] += (*inv_std)[r] * (dxhat[j] - m1 - h[j] * m2);
                                       }
                                   }
                               });
}

Tensor reshape(const Tensor& x, Shape shape) {
    require(numel(shape) == x.numel(), "reshape: " + shape_str(x.shape()) + " -> " + shape_str(shape));
    Node* xn = x.node();
    return detail::make_result(std::move(shape), x.to_vector(), {x}, [xn](Node& self) {
        auto gx = grad_of(xn);
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i];
    });
}

Tensor gather(const Tensor& x, const IndexList& idx, Shape shape) {
    require(numel(shape) == static_cast<std::int64_t>(idx->size()), "gather: index count vs shape");
    const auto xv = x.data();
    std::vector<double> out(idx->size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const int k = (*idx)[i];
        out[i] = k >= 0 ? xv[static_cast<std::size_t>(k)] : 0.0;
    }
    Node* xn = x.node();
    return detail::make_result(std::move(shape), std::move(out), {x}, [xn, idx](Node& self) {
        auto gx = grad_of(xn);
        if (gx.empty()) return;
        for (std::size_t i = 0; i < idx->size(); ++i) {
            const int k = (*idx)[i];
            if (k >= 0) gx[static_cast<std::size_t>(k)] += self.grad[i];
        }
    });
}

Tensor mean_axis0(const Tensor& x) {
    require(x.rank() >= 1, "mean_axis0 on a scalar");
    const int m = x.dim(0);
    Shape shape(x.shape().begin() + 1, x.shape().end());
    const auto inner = static_cast<std::size_t>(numel(shape));
    const auto xv = x.data();
    std::vector<double> out(inner, 0.0);
    for (int k = 0; k < m; ++k) {
        for (std::size_t i = 0; i < inner; ++i) out[i] += xv[k * inner + i];
    }
    for (auto& v : out) v /= m;
    Node* xn = x.node();
    return detail::make_result(std::move(shape), std::move(out), {x}, [xn, m, inner](Node& self) {
        auto gx = grad_of(xn);
        if (gx.empty()) return;
        for (int k = 0; k < m; ++k) {
            for (std::size_t i = 0; i < inner; ++i) gx[k * inner + i] += self.grad[i] / m;
        }
    });
}

Tensor mean_rows(const Tensor& x) {
    const int c = x.dim(-1);
    return mean_axis0(reshape(x, {static_cast<int>(x.numel() / c), c}));
}

Tensor sum(const Tensor& x) {
    double s = 0.0;
    for (double v : x.data()) s += v;
    Node* xn = x.node();
    return detail::make_result({}, {s}, {x}, [xn](Node& self) {
        auto gx = grad_of(xn);
        for (auto& g : gx) g += self.grad[0];
    });
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

Tensor concat(const std::vector<Tensor>& parts) {
    require(!parts.empty(), "concat of nothing");
    Shape tail(parts[0].shape().begin() + 1, parts[0].shape().end());
    int rows = 0;
    std::vector<double> out;
    std::vector<Node*> nodes;
    for (const auto& p : parts) {
        require(Shape(p.shape().begin() + 1, p.shape().end()) == tail, "concat: trailing dims differ");
        rows += p.dim(0);
        out.insert(out.end(), p.data().begin(), p.data().end());
        nodes.push_back(p.node());
    }
    Shape shape{rows};
    shape.insert(shape.end(), tail.begin(), tail.end());
    return detail::make_result(std::move(shape), std::move(out), parts, [nodes](Node& self) {
        std::size_t off = 0;
        for (Node* n : nodes) {
            if (auto g = grad_of(n); !g.empty()) {
                for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[off + i];
            }
            off += n->value.size();
        }
    });
}

namespace {

/// Fills the im2col rows for output rows [r0, r1).
void im2col_rows(const double* x, int h, int w, int cin, int k, int stride, int pad, int wo, int r0, int r1,
                 double* col) {
    const int kk = k * k * cin;
    for (int r = r0; r < r1; ++r) {
        for (int c = 0; c < wo; ++c) {
            double* dst = col + (static_cast<std::size_t>(r - r0) * wo + c) * kk;
            for (int ky = 0; ky < k; ++ky) {
                const int y = r * stride + ky - pad;
                for (int kx = 0; kx < k; ++kx) {
                    const int xx = c * stride + kx - pad;
                    double* d = dst + (ky * k + kx) * cin;
                    if (y < 0 || y >= h || xx < 0 || xx >= w) {
                        std::fill(d, d + cin, 0.0);
                    } else {
                        std::copy_n(x + (static_cast<std::size_t>(y) * w + xx) * cin, cin, d);
                    }
                }
            }
        }
    }
}

void col2im_rows(const double* col, int h, int w, int cin, int k, int stride, int pad, int wo, int r0, int r1,
                 double* gx) {
    const int kk = k * k * cin;
    for (int r = r0; r < r1; ++r) {
        for (int c = 0; c < wo; ++c) {
            const double* src = col + (static_cast<std::size_t>(r - r0) * wo + c) * kk;
            for (int ky = 0; ky < k; ++ky) {
                const int y = r * stride + ky - pad;
                if (y < 0 || y >= h) continue;
                for (int kx = 0; kx < k; ++kx) {
                    const int xx = c * stride + kx - pad;
                    if (xx < 0 || xx >= w) continue;
                    const double* s = src + (ky * k + kx) * cin;
                    double* d = gx + (static_cast<std::size_t>(y) * w + xx) * cin;
                    for (int ci = 0; ci < cin; ++ci) d[ci] += s[ci];
                }
            }
        }
    }
}

constexpr std::size_t kIm2colBudget = 1u << 22;  // doubles per chunk

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad) {
    require(x.rank() == 3 && w.rank() == 4 && w.dim(0) == w.dim(1) && w.dim(2) == x.dim(2),
            "conv2d: input " + shape_str(x.shape()) + " weight " + shape_str(w.shape()));
    const int h = x.dim(0);
    const int wd = x.dim(1);
    const int cin = x.dim(2);
    const int k = w.dim(0);
    const int cout = w.dim(3);
    require(!b.defined() || b.numel() == cout, "conv2d: bias shape");
    const int ho = (h + 2 * pad - k) / stride + 1;
    const int wo = (wd + 2 * pad - k) / stride + 1;
    require(ho > 0 && wo > 0, "conv2d: empty output");
    const int kk = k * k * cin;
    const int chunk = std::max(1, static_cast<int>(kIm2colBudget / (static_cast<std::size_t>(wo) * kk)));

    std::vector<double> out(static_cast<std::size_t>(ho) * wo * cout);
    std::vector<double> col;
    CMapMat wm(w.data().data(), kk, cout);
    for (int r0 = 0; r0 < ho; r0 += chunk) {
        const int r1 = std::min(ho, r0 + chunk);
        const int rows = (r1 - r0) * wo;
        col.resize(static_cast<std::size_t>(rows) * kk);
        im2col_rows(x.data().data(), h, wd, cin, k, stride, pad, wo, r0, r1, col.data());
        MapMat o(out.data() + static_cast<std::size_t>(r0) * wo * cout, rows, cout);
        o.noalias() = CMapMat(col.data(), rows, kk) * wm;
        if (b.defined()) o.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(b.data().data(), cout);
    }

    Node* xn = x.node();
    Node* wn = w.node();
    Node* bn = b.defined() ? b.node() : nullptr;
    std::vector<Tensor> parents{x, w};
    if (b.defined()) parents.push_back(b);
    return detail::make_result(
        {ho, wo, cout}, std::move(out), std::move(parents),
        [xn, wn, bn, h, wd, cin, k, cout, stride, pad, ho, wo, kk, chunk](Node& self) {
            auto gx = grad_of(xn);
            auto gw = grad_of(wn);
            auto gb = grad_of(bn);
            std::vector<double> col;
            std::vector<double> dcol;
            CMapMat wm(wn->value.data(), kk, cout);
            for (int r0 = 0; r0 < ho; r0 += chunk) {
                const int r1 = std::min(ho, r0 + chunk);
                const int rows = (r1 - r0) * wo;
                CMapMat g(self.grad.data() + static_cast<std::size_t>(r0) * wo * cout, rows, cout);
                if (!gb.empty()) Eigen::Map<Eigen::RowVectorXd>(gb.data(), cout) += g.colwise().sum();
                if (!gw.empty()) {
                    col.resize(static_cast<std::size_t>(rows) * kk);
                    im2col_rows(xn->value.data(), h, wd, cin, k, stride, pad, wo, r0, r1, col.data());
                    MapMat(gw.data(), kk, cout).noalias() += CMapMat(col.data(), rows, kk).transpose() * g;
                }
                if (!gx.empty()) {
                    dcol.resize(static_cast<std::size_t>(rows) * kk);
                    MapMat(dcol.data(), rows, kk).noalias() = g * wm.transpose();
                    col2im_rows(dcol.data(), h, wd, cin, k, stride, pad, wo, r0, r1, gx.data());
                }
            }
        });
}

Tensor window_attention(const Tensor& qkv, const Tensor& bias, const std::shared_ptr<const std::vector<double>>& mask,
                        int mask_windows, int windows, int tokens, int heads) {
    require(qkv.rank() == 2 && qkv.dim(0) == windows * tokens && qkv.dim(1) % 3 == 0,
            "window_attention: qkv shape " + shape_str(qkv.shape()));
    const int c3 = qkv.dim(1);
    const int c = c3 / 3;
    require(c % heads == 0, "window_attention: channels not divisible by heads");
    const int hd = c / heads;
    const int n = tokens;
    const auto nn2 = static_cast<std::size_t>(n) * n;
    require(!bias.defined() || (bias.numel() == static_cast<std::int64_t>(heads * nn2)),
            "window_attention: bias shape " + (bias.defined() ? shape_str(bias.shape()) : std::string()));
    require(!mask || (mask_windows > 0 && mask->size() == mask_windows * nn2), "window_attention: mask size");
    const double sc = 1.0 / std::sqrt(static_cast<double>(hd));

    auto probs = std::make_shared<std::vector<double>>(static_cast<std::size_t>(windows) * heads * nn2);
    std::vector<double> out(static_cast<std::size_t>(windows) * n * c);
    const double* base = qkv.data().data();
    for (int b = 0; b < windows; ++b) {
        for (int h = 0; h < heads; ++h) {
            const double* q = base + static_cast<std::size_t>(b) * n * c3 + h * hd;
            CStridedMap Q(q, n, hd, Eigen::OuterStride<>(c3));
            CStridedMap K(q + c, n, hd, Eigen::OuterStride<>(c3));
            CStridedMap V(q + 2 * c, n, hd, Eigen::OuterStride<>(c3));
            MapMat P(probs->data() + (static_cast<std::size_t>(b) * heads + h) * nn2, n, n);
            P.noalias() = (Q * K.transpose()) * sc;
            if (bias.defined()) P += CMapMat(bias.data().data() + h * nn2, n, n);
            if (mask) P += CMapMat(mask->data() + (b % mask_windows) * nn2, n, n);
            for (int i = 0; i < n; ++i) {
                const double mx = P.row(i).maxCoeff();
                P.row(i) = (P.row(i).array() - mx).exp();
                P.row(i) /= P.row(i).sum();
            }
            StridedMap O(out.data() + static_cast<std::size_t>(b) * n * c + h * hd, n, hd, Eigen::OuterStride<>(c));
            O.noalias() = P * V;
        }
    }

    Node* qn = qkv.node();
    Node* bn = bias.defined() ? bias.node() : nullptr;
    std::vector<Tensor> parents{qkv};
    if (bias.defined()) parents.push_back(bias);
    return detail::make_result(
        {windows * n, c}, std::move(out), std::move(parents),
        [qn, bn, probs, windows, heads, n, c, c3, hd, nn2, sc](Node& self) {
            auto gq = grad_of(qn);
            auto gb = grad_of(bn);
            RowMat dP(n, n);
            RowMat dS(n, n);
            const double* base = qn->value.data();
            for (int b = 0; b < windows; ++b) {
                for (int h = 0; h < heads; ++h) {
                    const std::size_t off = static_cast<std::size_t>(b) * n * c3 + h * hd;
                    CStridedMap Q(base + off, n, hd, Eigen::OuterStride<>(c3));
                    CStridedMap K(base + off + c, n, hd, Eigen::OuterStride<>(c3));
                    CStridedMap V(base + off + 2 * c, n, hd, Eigen::OuterStride<>(c3));
                    CMapMat P(probs->data() + (static_cast<std::size_t>(b) * heads + h) * nn2, n, n);
                    CStridedMap dO(self.grad.data() + static_cast<std::size_t>(b) * n * c + h * hd, n, hd,
                                   Eigen::OuterStride<>(c));
                    dP.noalias() = dO * V.transpose();
                    for (int i = 0; i < n; ++i) {
                        const double dot = (dP.row(i).array() * P.row(i).array()).sum();
                        dS.row(i) = P.row(i).array() * (dP.row(i).array() - dot);
                    }
                    if (!gb.empty()) MapMat(gb.data() + h * nn2, n, n) += dS;
                    if (!gq.empty()) {
                        StridedMap dQ(gq.data() + off, n, hd, Eigen::OuterStride<>(c3));
                        StridedMap dK(gq.data() + off + c, n, hd, Eigen::OuterStride<>(c3));
                        StridedMap dV(gq.data() + off + 2 * c, n, hd, Eigen::OuterStride<>(c3));
                        dV.noalias() += P.transpose() * dO;
                        dQ.noalias() += (dS * K) * sc;
                        dK.noalias() += (dS.transpose() * Q) * sc;
                    }
                }
            }
        });
}

Tensor bce_with_logits(const Tensor& logits, const std::vector<double>& targets) {
    require(static_cast<std::size_t>(logits.numel()) == targets.size() && !targets.empty(),
            "bce_with_logits: target count");
    const auto z = logits.data();
    double total = 0.0;
    for (std::size_t i = 0; i < targets.size(); ++i) {
        total += std::max(z[i], 0.0) - z[i] * targets[i] + std::log1p(std::exp(-std::abs(z[i])));
    }
    const double count = static_cast<double>(targets.size());
    Node* ln = logits.node();
    return detail::make_result({}, {total / count}, {logits}, [ln, targets, count](Node& self) {
        auto g = grad_of(ln);
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double zi = ln->value[i];
            const double s = zi >= 0.0 ? 1.0 / (1.0 + std::exp(-zi)) : std::exp(zi) / (1.0 + std::exp(zi));
            g[i] += self.grad[0] * (s - targets[i]) / count;
        }
    });
}

}  // namespace docmsu::nn
