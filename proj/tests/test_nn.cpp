// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <cstdio>
#include <filesystem>

#include "doctest.h"
#include "docmsu/errors.hpp"
#include "docmsu/nn/archive.hpp"
#include "docmsu/nn/ops.hpp"
#include "docmsu/nn/optim.hpp"
#include "support.hpp"

using namespace docmsu;
using namespace docmsu::testing;

namespace {

/// sum(y * W) for a fixed random W shaped like y.
nn::Tensor weighted_sum(const nn::Tensor& y, std::uint64_t seed = 7) {
    std::mt19937_64 rng(seed);
    return nn::sum(nn::mul(y, nn::Tensor::from(y.shape(), random_weights(static_cast<std::size_t>(y.numel()), rng))));
}

constexpr double kTol = 1e-6;

}  // namespace

TEST_CASE("elementwise ops match finite differences") {
    std::mt19937_64 rng(1);
    auto a = random_leaf({3, 4}, rng);
    auto b = random_leaf({3, 4}, rng);
    auto row = random_leaf({4}, rng);
    CHECK(max_grad_mismatch([&] { return weighted_sum(nn::add(a, row)); }, {a, row}) < kTol);
    CHECK(max_grad_mismatch([&] { return weighted_sum(nn::sub(a, b)); }, {a, b}) < kTol);
    CHECK(max_grad_mismatch([&] { return weighted_sum(nn::mul(a, b)); }, {a, b}) < kTol);
    CHECK(max_grad_mismatch([&] { return weighted_sum(nn::scale(a, -2.5)); }, {a}) < kTol);
    CHECK(max_grad_mismatch([&] { return weighted_sum(nn::gelu(a)); }, {a}) < kTol);
    CHECK(max_grad_mismatch([&] { return weighted_sum(nn::sigmoid(a)); }, {a}) < kTol);
    CHECK(max_grad_mismatch([&] { return weighted_sum(nn::exp_clamped(a, 0.7)); }, {a}) < kTol);
    CHECK(max_grad_mismatch([&] { return weighted_sum(nn::relu(a)); }, {a}) < kTol);
}

TEST_CASE("relu and clamped exp pass no gradient where flat") {
    auto x = nn::Tensor::from({3}, {-1.0, 2.0, 5.0}, true);
    nn::sum(nn::exp_clamped(x, 3.0)).backward();
    CHECK(x.grad()[2] == 0.0);
    CHECK(x.grad()[1] == doctest::Approx(std::exp(2.0)));
    x.zero_grad();
    nn::sum(nn::relu(x)).backward();
    CHECK(x.grad()[0] == 0.0);
    CHECK(x.grad()[1] == 1.0);
}

TEST_CASE("gelu is the erf form") {
    const auto y = nn::gelu(nn::Tensor::from({2}, {1.0, -0.5}));
    CHECK(y.data()[0] == doctest::Approx(0.5 * (1.0 + std::erf(1.0 / std::sqrt(2.0)))).epsilon(1e-14));
    CHECK(y.data()[1] == doctest::Approx(-0.25 * (1.0 + std::erf(-0.5 / std::sqrt(2.0)))).epsilon(1e-14));
}

TEST_CASE("matmul, linear and layer norm match finite differences") {
    std::mt19937_64 rng(2);
    auto a = random_leaf({3, 5}, rng);
    auto w = random_leaf({5, 2}, rng);
    auto b = random_leaf({2}, rng);
    auto x = random_leaf({2, 3, 5}, rng);
    CHECK(max_grad_mismatch([&] { return weighted_sum(nn::matmul(a, w)); }, {a, w}) < kTol);
    CHECK(max_grad_mismatch([&] { return weighted_sum(nn::linear(x, w, b)); }, {x, w, b}) < kTol);
    CHECK(max_grad_mismatch([&] { return weighted_sum(nn::linear(x, w, {})); }, {x, w}) < kTol);

    auto g = random_leaf({5}, rng);
    auto be = random_leaf({5}, rng);
    CHECK(max_grad_mismatch([&] { return weighted_sum(nn::layer_norm(x, g, be)); }, {x, g, be}) < kTol);
}

TEST_CASE("layer norm output has zero mean and unit variance per row") {
    std::mt19937_64 rng(3);
    auto x = random_leaf({4, 6}, rng, 3.0);
    const auto y = nn::layer_norm(x, nn::Tensor::full({6}, 1.0), nn::Tensor::zeros({6}), 0.0);
    for (int r = 0; r < 4; ++r) {
        double m = 0.0;
        double v = 0.0;
        for (int c = 0; c < 6; ++c) m += y.data()[r * 6 + c];
        m /= 6;
        for (int c = 0; c < 6; ++c) v += std::pow(y.data()[r * 6 + c] - m, 2);
        CHECK(m == doctest::Approx(0.0).epsilon(1e-12));
        CHECK(v / 6 == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("structural ops match finite differences") {
    std::mt19937_64 rng(4);
    auto x = random_leaf({4, 3}, rng);
    auto y = random_leaf({2, 3}, rng);
    CHECK(max_grad_mismatch([&] { return weighted_sum(nn::reshape(x, {3, 4})); }, {x}) < kTol);
    CHECK(max_grad_mismatch([&] { return weighted_sum(nn::gather(x, nn::make_index({0, 5, -1, 5, 11}), {5})); }, {x}) < kTol);
    CHECK(max_grad_mismatch([&] { return weighted_sum(nn::mean_axis0(x)); }, {x}) < kTol);
    CHECK(max_grad_mismatch([&] { return weighted_sum(nn::mean_rows(x)); }, {x}) < kTol);
    CHECK(max_grad_mismatch([&] { return nn::mean(nn::mul(x, x)); }, {x}) < kTol);
    CHECK(max_grad_mismatch([&] { return weighted_sum(nn::concat({x, y})); }, {x, y}) < kTol);
}

TEST_CASE("gather pads with zeros and scatter-adds repeated indices") {
    auto x = nn::Tensor::from({3}, {1.0, 2.0, 3.0}, true);
    const auto y = nn::gather(x, nn::make_index({2, -1, 2}), {3});
    CHECK(y.to_vector() == std::vector<double>{3.0, 0.0, 3.0});
    nn::sum(y).backward();
    CHECK(x.grad()[2] == 2.0);
    CHECK(x.grad()[0] == 0.0);
}

TEST_CASE("conv2d matches a direct loop and finite differences") {
    std::mt19937_64 rng(5);
    auto x = random_leaf({5, 6, 2}, rng);
    auto w = random_leaf({3, 3, 2, 3}, rng);
    auto b = random_leaf({3}, rng);
    const auto y = nn::conv2d(x, w, b, 1, 1);
    REQUIRE(y.shape() == nn::Shape{5, 6, 3});
    // Direct evaluation at a border and an interior position.
    for (auto [oy, ox] : {std::pair{0, 0}, std::pair{2, 3}}) {
        for (int co = 0; co < 3; ++co) {
            double s = b.data()[co];
            for (int ky = 0; ky < 3; ++ky) {
                for (int kx = 0; kx < 3; ++kx) {
                    const int iy = oy + ky - 1;
                    const int ix = ox + kx - 1;
                    if (iy < 0 || ix < 0 || iy >= 5 || ix >= 6) continue;
                    for (int ci = 0; ci < 2; ++ci) {
                        s += x.data()[(iy * 6 + ix) * 2 + ci] * w.data()[((ky * 3 + kx) * 2 + ci) * 3 + co];
                    }
                }
            }
            CHECK(y.data()[(oy * 6 + ox) * 3 + co] == doctest::Approx(s).epsilon(1e-12));
        }
    }
    CHECK(max_grad_mismatch([&] { return weighted_sum(nn::conv2d(x, w, b, 1, 1)); }, {x, w, b}) < kTol);
    auto x8 = random_leaf({8, 8, 2}, rng);
    auto w4 = random_leaf({4, 4, 2, 3}, rng);
    CHECK(nn::conv2d(x8, w4, {}, 4, 0).shape() == nn::Shape{2, 2, 3});
    CHECK(max_grad_mismatch([&] { return weighted_sum(nn::conv2d(x8, w4, b, 4, 0)); }, {x8, w4, b}) < kTol);
}

TEST_CASE("window attention matches a per-window reference and finite differences") {
    std::mt19937_64 rng(6);
    const int windows = 2;
    const int tokens = 3;
    const int heads = 2;
    const int C = 4;
    auto qkv = random_leaf({windows * tokens, 3 * C}, rng);
    auto bias = random_leaf({heads, tokens, tokens}, rng);
    auto mask = std::make_shared<std::vector<double>>(tokens * tokens, 0.0);
    (*mask)[1] = -100.0;  // token 0 may not attend to token 1

    const auto out = nn::window_attention(qkv, bias, mask, 1, windows, tokens, heads);
    REQUIRE(out.shape() == nn::Shape{windows * tokens, C});
    const int hd = C / heads;
    const double sc = 1.0 / std::sqrt(static_cast<double>(hd));
    const auto q = qkv.data();
    for (int w = 0; w < windows; ++w) {
        for (int h = 0; h < heads; ++h) {
            for (int i = 0; i < tokens; ++i) {
                std::vector<double> logit(tokens);
                double mx = -1e300;
                for (int j = 0; j < tokens; ++j) {
                    double s = 0.0;
                    for (int k = 0; k < hd; ++k) {
                        s += q[(w * tokens + i) * 3 * C + h * hd + k] * q[(w * tokens + j) * 3 * C + C + h * hd + k];
                    }
                    logit[j] = s * sc + bias.data()[(h * tokens + i) * tokens + j] + (*mask)[i * tokens + j];
                    mx = std::max(mx, logit[j]);
                }
                double z = 0.0;
                for (auto& l : logit) z += (l = std::exp(l - mx));
                for (int k = 0; k < hd; ++k) {
                    double v = 0.0;
                    for (int j = 0; j < tokens; ++j) v += logit[j] / z * q[(w * tokens + j) * 3 * C + 2 * C + h * hd + k];
                    CHECK(out.data()[(w * tokens + i) * C + h * hd + k] == doctest::Approx(v).epsilon(1e-12));
                }
            }
        }
    }
    CHECK(max_grad_mismatch([&] { return weighted_sum(nn::window_attention(qkv, bias, mask, 1, windows, tokens, heads)); },
                            {qkv, bias}) < kTol);
    CHECK(max_grad_mismatch([&] { return weighted_sum(nn::window_attention(qkv, {}, nullptr, 0, windows, tokens, heads)); },
                            {qkv}) < kTol);
}

TEST_CASE("bce with logits is stable and differentiable") {
    auto z = nn::Tensor::from({3}, {0.0, 40.0, -40.0}, true);
    const auto l = nn::bce_with_logits(z, {1.0, 1.0, 0.0});
    CHECK(l.item() == doctest::Approx(std::log(2.0) / 3.0).epsilon(1e-12));
    std::mt19937_64 rng(8);
    auto x = random_leaf({5}, rng);
    CHECK(max_grad_mismatch([&] { return nn::bce_with_logits(x, {1, 0, 1, 0, 0.5}); }, {x}) < kTol);
}

TEST_CASE("no-grad scope records no history") {
    auto x = nn::Tensor::from({2}, {1.0, 2.0}, true);
    nn::Tensor y;
    {
        nn::NoGradGuard g;
        y = nn::mul(x, x);
    }
    CHECK_FALSE(y.requires_grad());
    CHECK(nn::mul(x, x).requires_grad());
}

TEST_CASE("shape errors are reported") {
    auto a = nn::Tensor::zeros({2, 3});
    CHECK_THROWS(nn::matmul(a, a));
    CHECK_THROWS(nn::add(a, nn::Tensor::zeros({2})));
    CHECK_THROWS(nn::concat({a, nn::Tensor::zeros({2, 4})}));
}

TEST_CASE("AdamW follows the decoupled update rule") {
    auto w = nn::Tensor::from({2}, {1.0, -2.0}, true);
    auto b = nn::Tensor::from({1}, {0.5}, true);
    nn::AdamWOptions o;
    o.lr = 0.1;
    o.weight_decay = 0.01;
    nn::AdamW opt({{"layer.w", w}, {"layer.bias", b}}, o);
    w.mutable_grad()[0] = 0.3;
    w.mutable_grad()[1] = -0.4;
    b.mutable_grad()[0] = 1.0;
    opt.step();
    // First step: m_hat = g, v_hat = g^2, so the Adam term is lr * g / (|g| + eps).
    CHECK(w.data()[0] == doctest::Approx(1.0 * (1.0 - 0.1 * 0.01) - 0.1 * 0.3 / (0.3 + 1e-8)).epsilon(1e-12));
    CHECK(w.data()[1] == doctest::Approx(-2.0 * (1.0 - 0.1 * 0.01) + 0.1 * 0.4 / (0.4 + 1e-8)).epsilon(1e-12));
    CHECK(b.data()[0] == doctest::Approx(0.5 - 0.1 * 1.0 / (1.0 + 1e-8)).epsilon(1e-12));  // no decay on biases
    opt.zero_grad();
    CHECK(w.grad()[0] == 0.0);
}

TEST_CASE("archive round-trips tensors") {
    const auto path = std::filesystem::temp_directory_path() / "docmsu_test_archive.bin";
    auto a = nn::Tensor::from({2, 2}, {1.0, 2.0, 3.0, 4.5});
    auto b = nn::Tensor::from({3}, {-1.0, 0.25, 1e-300});
    nn::write_archive(path, {{"note", "x"}}, {{"a", a}, {"b", b}});
    const auto ar = nn::read_archive(path);
    CHECK(ar.meta.at("note") == "x");
    CHECK(ar.at("a").values == a.to_vector());
    CHECK(ar.at("b").values == b.to_vector());

    auto a2 = nn::Tensor::zeros({2, 2});
    nn::load_into(ar, {{"a", a2}});
    CHECK(a2.to_vector() == a.to_vector());
    CHECK_THROWS_AS(nn::load_into(ar, {{"b", nn::Tensor::zeros({2})}}), ValidationError);
    CHECK_THROWS_AS(nn::read_archive(path.string() + ".missing"), MissingArtifactError);
    std::filesystem::remove(path);
}
