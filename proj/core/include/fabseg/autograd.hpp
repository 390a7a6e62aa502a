#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "fabseg/tensor.hpp"

// Tape-free reverse-mode differentiation over Tensor values. Each op records
// its parents and a backward closure only when some parent requires a
// gradient, so frozen sub-networks run without any bookkeeping.
namespace fabseg::ag {

struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward;

    /// Gradient buffer, zero-allocated on first use.
    Tensor& grad_buffer();
};

class Var {
public:
    Var() = default;
    explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

    const Tensor& value() const { return node_->value; }
    const Shape& shape() const { return node_->value.shape(); }
    std::int64_t dim(int axis) const { return node_->value.dim(axis); }
    std::int64_t numel() const { return node_->value.numel(); }
    bool requires_grad() const { return node_ && node_->requires_grad; }
    /// Accumulated gradient; empty when nothing flowed into this node.
    const Tensor& grad() const { return node_->grad; }
    Node* node() const { return node_.get(); }
    const std::shared_ptr<Node>& shared() const { return node_; }
    explicit operator bool() const { return static_cast<bool>(node_); }

private:
    std::shared_ptr<Node> node_;
};

Var constant(Tensor value);
Var leaf(Tensor value, bool requires_grad = true);

/// Builds an op result. `backward` reads `self.grad` and accumulates into
/// `self.parents[i]->grad_buffer()` for parents that require gradients.
Var make_op(Tensor value, std::vector<Var> parents, std::function<void(Node&)> backward);

/// Runs reverse accumulation from a scalar root (seed 1) or with an explicit seed.
void backward(const Var& root);
void backward(const Var& root, const Tensor& seed);

// Elementwise.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var relu(const Var& x);
Var gelu(const Var& x);
Var sigmoid(const Var& x);

// Reductions.
Var sum(const Var& x);
Var mean(const Var& x);

// Shape manipulation.
Var reshape(const Var& x, Shape shape);
Var concat(const std::vector<Var>& parts, int axis);
Var slice(const Var& x, int axis, std::int64_t start, std::int64_t length);
Var transpose(const Var& x);

// Broadcasts.
Var add_row_vector(const Var& x, const Var& v);       // x[n,d] + v[d]
Var expand_channels(const Var& v, std::int64_t height, std::int64_t width);  // v[C] -> [1,C,h,w]
Var grid_to_tokens(const Var& x);                     // [1,C,h,w] -> [h*w,C]
Var tokens_to_grid(const Var& x, std::int64_t height, std::int64_t width);  // [h*w,C] -> [1,C,h,w]

// Dense layers.
Var matmul(const Var& a, const Var& b);                         // [m,k] x [k,n]
Var linear(const Var& x, const Var& weight, const Var& bias);   // x[n,i] W[o,i]^T + b[o]; bias optional
Var softmax_rows(const Var& x);
Var layer_norm_rows(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-6);
Var layer_norm_channels(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-6);

// Convolutional layers, NCHW.
struct Conv2dOptions {
    int stride = 1;
    int padding = 0;
    int dilation = 1;
    int groups = 1;
};
Var conv2d(const Var& x, const Var& weight, const Var& bias, const Conv2dOptions& opts = {});
/// Transposed convolution whose kernel equals its stride (non-overlapping
/// upsampling). weight is [Cin, Cout, k, k].
Var conv_transpose2d(const Var& x, const Var& weight, const Var& bias);

struct BatchNormState {
    Tensor* running_mean = nullptr;
    Tensor* running_var = nullptr;
    double momentum = 0.1;
    double eps = 1e-5;
};
/// Training mode normalizes with batch statistics and updates the running
/// buffers; inference mode uses the running buffers.
Var batch_norm(const Var& x, const Var& gamma, const Var& beta, BatchNormState state, bool training);

/// Bilinear resize with half-pixel centers (align_corners = false).
Var resize_bilinear(const Var& x, std::int64_t out_h, std::int64_t out_w);
Var global_avg_pool(const Var& x);

}  // namespace fabseg::ag
