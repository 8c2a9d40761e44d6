// SPDX-License-Identifier: Apache-2.0
//
// Minimal reverse-mode autodiff over dense row-major double tensors.
//
// Every op returns a new Tensor whose node keeps its parents alive and a
// closure that scatters the output gradient into them. Tensor::backward()
// runs the closures in reverse topological order. Gradients accumulate into
// leaves until zero_grad() is called, which is what mini-batch training
// relies on.
#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace docmsu::nn {

using Shape = std::vector<int>;

std::int64_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

struct Node {
    std::vector<double> value;
    std::vector<double> grad;  // empty until first accumulation
    Shape shape;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward;

    /// Grad buffer of this node, allocated (zeroed) on first use.
    std::span<double> grad_buffer();
};

class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);

    bool defined() const { return static_cast<bool>(node_); }
    const Shape& shape() const { return node_->shape; }
    int dim(int axis) const;
    int rank() const { return static_cast<int>(node_->shape.size()); }
    std::int64_t numel() const { return static_cast<std::int64_t>(node_->value.size()); }

    std::span<const double> data() const { return node_->value; }
    std::span<double> mutable_data() { return node_->value; }
    std::vector<double> to_vector() const { return node_->value; }
    double item() const;

    bool requires_grad() const { return node_->requires_grad; }
    std::span<const double> grad() const { return node_->grad; }
    std::span<double> mutable_grad() { return node_->grad_buffer(); }
    void zero_grad();

    /// Seeds d(self)/d(self) = 1; self must hold a single element.
    void backward() const;

    /// Same values, no history.
    Tensor detach() const;

    Node* node() const { return node_.get(); }
    const std::shared_ptr<Node>& node_ptr() const { return node_; }

private:
    std::shared_ptr<Node> node_;
};

/// False inside a NoGradGuard scope: ops then record no history.
bool grad_enabled();

class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

namespace detail {

/// Builds an op result. `backward` is attached only if some parent needs grad.
Tensor make_result(Shape shape, std::vector<double> values, std::vector<Tensor> parents,
                   std::function<void(Node&)> backward);

}  // namespace detail

}  // namespace docmsu::nn
