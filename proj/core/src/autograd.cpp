#include "fabseg/autograd.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numbers>
#include <unordered_set>

#include "fabseg/errors.hpp"

namespace fabseg::ag {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

ConstMatMap cmap(const double* p, std::int64_t rows, std::int64_t cols) { return ConstMatMap(p, rows, cols); }
MatMap mmap(double* p, std::int64_t rows, std::int64_t cols) { return MatMap(p, rows, cols); }

bool wants(const Node& self, std::size_t i) {
    return i < self.parents.size() && self.parents[i] && self.parents[i]->requires_grad;
}

Tensor& pgrad(Node& self, std::size_t i) { return self.parents[i]->grad_buffer(); }
const Tensor& pval(const Node& self, std::size_t i) { return self.parents[i]->value; }

void check_same_shape(const Var& a, const Var& b, const char* op) {
    require(a.shape() == b.shape(), ErrorKind::ShapeError,
            std::string(op) + ": " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

void check_rank(const Var& x, int rank, const char* op) {
    require(x.value().rank() == rank, ErrorKind::ShapeError,
            std::string(op) + ": expected rank " + std::to_string(rank) + ", got " + shape_str(x.shape()));
}

}  // namespace

Tensor& Node::grad_buffer() {
    if (grad.numel() != value.numel() || grad.shape() != value.shape()) grad = Tensor::zeros_like(value);
    return grad;
}

Var constant(Tensor value) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    return Var(std::move(n));
}

Var leaf(Tensor value, bool requires_grad) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->requires_grad = requires_grad;
    return Var(std::move(n));
}

Var make_op(Tensor value, std::vector<Var> parents, std::function<void(Node&)> backward_fn) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    bool any = false;
    for (const auto& p : parents) any = any || p.requires_grad();
    if (any) {
        n->requires_grad = true;
        n->parents.reserve(parents.size());
        for (const auto& p : parents) n->parents.push_back(p.shared());
        n->backward = std::move(backward_fn);
    }
    return Var(std::move(n));
}

void backward(const Var& root) {
    require(root.numel() == 1, ErrorKind::ShapeError, "backward without a seed needs a scalar root");
    backward(root, Tensor(root.shape(), 1.0));
}

void backward(const Var& root, const Tensor& seed) {
    if (!root.requires_grad()) return;
    require(seed.numel() == root.numel(), ErrorKind::ShapeError, "backward seed shape mismatch");

    // Iterative post-order DFS for a topological order.
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, std::size_t>> stack{{root.node(), 0}};
    visited.insert(root.node());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node* p = node->parents[next++].get();
            if (p && p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    root.node()->grad_buffer().add_(seed);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward && n->grad.numel() == n->value.numel() && n->value.numel() > 0) n->backward(*n);
    }
}

// ---------------------------------------------------------------------------
// Elementwise

Var add(const Var& a, const Var& b) {
    check_same_shape(a, b, "add");
    Tensor out = a.value();
    out.add_(b.value());
    return make_op(std::move(out), {a, b}, [](Node& self) {
        if (wants(self, 0)) pgrad(self, 0).add_(self.grad);
        if (wants(self, 1)) pgrad(self, 1).add_(self.grad);
    });
}

Var sub(const Var& a, const Var& b) {
    check_same_shape(a, b, "sub");
    Tensor out = a.value();
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] -= b.value()[i];
    return make_op(std::move(out), {a, b}, [](Node& self) {
        if (wants(self, 0)) pgrad(self, 0).add_(self.grad);
        if (wants(self, 1)) {
            auto& g = pgrad(self, 1);
            for (std::int64_t i = 0; i < g.numel(); ++i) g[i] -= self.grad[i];
        }
    });
}

Var mul(const Var& a, const Var& b) {
    check_same_shape(a, b, "mul");
    Tensor out = a.value();
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] *= b.value()[i];
    return make_op(std::move(out), {a, b}, [](Node& self) {
        const auto& av = pval(self, 0);
        const auto& bv = pval(self, 1);
        if (wants(self, 0)) {
            auto& g = pgrad(self, 0);
            for (std::int64_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i] * bv[i];
        }
        if (wants(self, 1)) {
            auto& g = pgrad(self, 1);
            for (std::int64_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i] * av[i];
        }
    });
}

Var scale(const Var& a, double s) {
    Tensor out = a.value();
    out.scale_(s);
    return make_op(std::move(out), {a}, [s](Node& self) {
        auto& g = pgrad(self, 0);
        for (std::int64_t i = 0; i < g.numel(); ++i) g[i] += s * self.grad[i];
    });
}

Var relu(const Var& x) {
    Tensor out = x.value();
    for (auto& v : out.values()) v = v > 0.0 ? v : 0.0;
    return make_op(std::move(out), {x}, [](Node& self) {
        const auto& xv = pval(self, 0);
        auto& g = pgrad(self, 0);
        for (std::int64_t i = 0; i < g.numel(); ++i)
            if (xv[i] > 0.0) g[i] += self.grad[i];
    });
}

Var gelu(const Var& x) {
    Tensor out = x.value();
    for (auto& v : out.values()) v = 0.5 * v * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0));
    return make_op(std::move(out), {x}, [](Node& self) {
        const auto& xv = pval(self, 0);
        auto& g = pgrad(self, 0);
        const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
        for (std::int64_t i = 0; i < g.numel(); ++i) {
            const double v = xv[i];
            const double cdf = 0.5 * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0));
            const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
            g[i] += self.grad[i] * (cdf + v * pdf);
        }
    });
}

Var sigmoid(const Var& x) {
    Tensor out = x.value();
    for (auto& v : out.values()) v = 1.0 / (1.0 + std::exp(-v));
    return make_op(std::move(out), {x}, [](Node& self) {
        auto& g = pgrad(self, 0);
        for (std::int64_t i = 0; i < g.numel(); ++i) {
            const double y = self.value[i];
            g[i] += self.grad[i] * y * (1.0 - y);
        }
    });
}

// ---------------------------------------------------------------------------
// Reductions

Var sum(const Var& x) {
    return make_op(Tensor({1}, x.value().sum()), {x}, [](Node& self) {
        auto& g = pgrad(self, 0);
        const double s = self.grad[0];
        for (auto& v : g.values()) v += s;
    });
}

Var mean(const Var& x) {
    require(x.numel() > 0, ErrorKind::EmptyInput, "mean of empty tensor");
    return scale(sum(x), 1.0 / static_cast<double>(x.numel()));
}

// ---------------------------------------------------------------------------
// Shape manipulation

Var reshape(const Var& x, Shape shape) {
    Tensor out = x.value().reshaped(std::move(shape));
    return make_op(std::move(out), {x}, [](Node& self) {
        auto& g = pgrad(self, 0);
        for (std::int64_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i];
    });
}

namespace {

struct AxisSplit {
    std::int64_t outer = 1;
    std::int64_t inner = 1;
};

AxisSplit split_at(const Shape& shape, int axis) {
    AxisSplit s;
    for (int i = 0; i < axis; ++i) s.outer *= shape[static_cast<std::size_t>(i)];
    for (std::size_t i = static_cast<std::size_t>(axis) + 1; i < shape.size(); ++i) s.inner *= shape[i];
    return s;
}

}  // namespace

Var concat(const std::vector<Var>& parts, int axis) {
    require(!parts.empty(), ErrorKind::EmptyInput, "concat of zero tensors");
    const Shape& ref = parts.front().shape();
    if (axis < 0) axis += static_cast<int>(ref.size());
    require(axis >= 0 && axis < static_cast<int>(ref.size()), ErrorKind::ShapeError, "concat axis out of range");

    Shape out_shape = ref;
    out_shape[static_cast<std::size_t>(axis)] = 0;
    std::vector<std::int64_t> sizes;
    for (const auto& p : parts) {
        const Shape& s = p.shape();
        require(s.size() == ref.size(), ErrorKind::ShapeError, "concat rank mismatch");
        for (std::size_t d = 0; d < s.size(); ++d)
            if (static_cast<int>(d) != axis)
                require(s[d] == ref[d], ErrorKind::ShapeError,
                        "concat shape mismatch " + shape_str(s) + " vs " + shape_str(ref));
        sizes.push_back(s[static_cast<std::size_t>(axis)]);
        out_shape[static_cast<std::size_t>(axis)] += s[static_cast<std::size_t>(axis)];
    }

    const AxisSplit sp = split_at(ref, axis);
    const std::int64_t total = out_shape[static_cast<std::size_t>(axis)];
    Tensor out(out_shape);
    std::int64_t offset = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
        const auto& pv = parts[k].value();
        const std::int64_t chunk = sizes[k] * sp.inner;
        for (std::int64_t o = 0; o < sp.outer; ++o)
            std::copy_n(pv.data() + o * chunk, chunk, out.data() + (o * total + offset) * sp.inner);
        offset += sizes[k];
    }

    return make_op(std::move(out), parts, [sizes, sp, total](Node& self) {
        std::int64_t off = 0;
        for (std::size_t k = 0; k < sizes.size(); ++k) {
            const std::int64_t chunk = sizes[k] * sp.inner;
            if (wants(self, k)) {
                auto& g = pgrad(self, k);
                for (std::int64_t o = 0; o < sp.outer; ++o) {
                    const double* src = self.grad.data() + (o * total + off) * sp.inner;
                    double* dst = g.data() + o * chunk;
                    for (std::int64_t i = 0; i < chunk; ++i) dst[i] += src[i];
                }
            }
            off += sizes[k];
        }
    });
}

Var slice(const Var& x, int axis, std::int64_t start, std::int64_t length) {
    const Shape& shape = x.shape();
    if (axis < 0) axis += static_cast<int>(shape.size());
    require(axis >= 0 && axis < static_cast<int>(shape.size()), ErrorKind::ShapeError, "slice axis out of range");
    const std::int64_t extent = shape[static_cast<std::size_t>(axis)];
    require(start >= 0 && length >= 0 && start + length <= extent, ErrorKind::ShapeError, "slice out of range");

    const AxisSplit sp = split_at(shape, axis);
    Shape out_shape = shape;
    out_shape[static_cast<std::size_t>(axis)] = length;
    Tensor out(out_shape);
    const std::int64_t chunk = length * sp.inner;
    for (std::int64_t o = 0; o < sp.outer; ++o)
        std::copy_n(x.value().data() + (o * extent + start) * sp.inner, chunk, out.data() + o * chunk);

    return make_op(std::move(out), {x}, [sp, extent, start, chunk](Node& self) {
        auto& g = pgrad(self, 0);
        for (std::int64_t o = 0; o < sp.outer; ++o) {
            double* dst = g.data() + (o * extent + start) * sp.inner;
            const double* src = self.grad.data() + o * chunk;
            for (std::int64_t i = 0; i < chunk; ++i) dst[i] += src[i];
        }
    });
}

Var transpose(const Var& x) {
    check_rank(x, 2, "transpose");
    const auto m = x.dim(0), n = x.dim(1);
    Tensor out({n, m});
    mmap(out.data(), n, m) = cmap(x.value().data(), m, n).transpose();
    return make_op(std::move(out), {x}, [m, n](Node& self) {
        mmap(pgrad(self, 0).data(), m, n) += cmap(self.grad.data(), n, m).transpose();
    });
}

// ---------------------------------------------------------------------------
// Broadcasts

Var add_row_vector(const Var& x, const Var& v) {
    check_rank(x, 2, "add_row_vector");
    const auto n = x.dim(0), d = x.dim(1);
    require(v.numel() == d, ErrorKind::ShapeError, "add_row_vector: vector length mismatch");
    Tensor out = x.value();
    for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t j = 0; j < d; ++j) out[i * d + j] += v.value()[j];
    return make_op(std::move(out), {x, v}, [n, d](Node& self) {
        if (wants(self, 0)) pgrad(self, 0).add_(self.grad);
        if (wants(self, 1)) {
            auto& g = pgrad(self, 1);
            for (std::int64_t i = 0; i < n; ++i)
                for (std::int64_t j = 0; j < d; ++j) g[j] += self.grad[i * d + j];
        }
    });
}

Var expand_channels(const Var& v, std::int64_t height, std::int64_t width) {
    const auto c = v.numel();
    const auto hw = height * width;
    Tensor out({1, c, height, width});
    for (std::int64_t k = 0; k < c; ++k) std::fill_n(out.data() + k * hw, hw, v.value()[k]);
    return make_op(std::move(out), {v}, [c, hw](Node& self) {
        auto& g = pgrad(self, 0);
        for (std::int64_t k = 0; k < c; ++k) {
            double s = 0.0;
            for (std::int64_t i = 0; i < hw; ++i) s += self.grad[k * hw + i];
            g[k] += s;
        }
    });
}

Var grid_to_tokens(const Var& x) {
    check_rank(x, 4, "grid_to_tokens");
    require(x.dim(0) == 1, ErrorKind::ShapeError, "grid_to_tokens expects batch size 1");
    return transpose(reshape(x, {x.dim(1), x.dim(2) * x.dim(3)}));
}

Var tokens_to_grid(const Var& x, std::int64_t height, std::int64_t width) {
    check_rank(x, 2, "tokens_to_grid");
    require(x.dim(0) == height * width, ErrorKind::ShapeError, "tokens_to_grid: token count mismatch");
    return reshape(transpose(x), {1, x.dim(1), height, width});
}

// ---------------------------------------------------------------------------
// Dense layers

Var matmul(const Var& a, const Var& b) {
    check_rank(a, 2, "matmul");
    check_rank(b, 2, "matmul");
    const auto m = a.dim(0), k = a.dim(1), n = b.dim(1);
    require(b.dim(0) == k, ErrorKind::ShapeError, "matmul inner dims " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    Tensor out({m, n});
    mmap(out.data(), m, n).noalias() = cmap(a.value().data(), m, k) * cmap(b.value().data(), k, n);
    return make_op(std::move(out), {a, b}, [m, k, n](Node& self) {
        auto go = cmap(self.grad.data(), m, n);
        if (wants(self, 0)) mmap(pgrad(self, 0).data(), m, k).noalias() += go * cmap(pval(self, 1).data(), k, n).transpose();
        if (wants(self, 1)) mmap(pgrad(self, 1).data(), k, n).noalias() += cmap(pval(self, 0).data(), m, k).transpose() * go;
    });
}

Var linear(const Var& x, const Var& weight, const Var& bias) {
    check_rank(x, 2, "linear");
    check_rank(weight, 2, "linear");
    const auto n = x.dim(0), in = x.dim(1), out_dim = weight.dim(0);
    require(weight.dim(1) == in, ErrorKind::ShapeError,
            "linear: input " + shape_str(x.shape()) + " vs weight " + shape_str(weight.shape()));
    const bool has_bias = static_cast<bool>(bias);
    if (has_bias) require(bias.numel() == out_dim, ErrorKind::ShapeError, "linear: bias length mismatch");

    Tensor out({n, out_dim});
    auto o = mmap(out.data(), n, out_dim);
    o.noalias() = cmap(x.value().data(), n, in) * cmap(weight.value().data(), out_dim, in).transpose();
    if (has_bias)
        for (std::int64_t i = 0; i < n; ++i)
            for (std::int64_t j = 0; j < out_dim; ++j) o(i, j) += bias.value()[j];

    std::vector<Var> parents{x, weight};
    if (has_bias) parents.push_back(bias);
    return make_op(std::move(out), std::move(parents), [n, in, out_dim, has_bias](Node& self) {
        auto go = cmap(self.grad.data(), n, out_dim);
        if (wants(self, 0)) mmap(pgrad(self, 0).data(), n, in).noalias() += go * cmap(pval(self, 1).data(), out_dim, in);
        if (wants(self, 1)) mmap(pgrad(self, 1).data(), out_dim, in).noalias() += go.transpose() * cmap(pval(self, 0).data(), n, in);
        if (has_bias && wants(self, 2)) {
            auto& g = pgrad(self, 2);
            for (std::int64_t i = 0; i < n; ++i)
                for (std::int64_t j = 0; j < out_dim; ++j) g[j] += go(i, j);
        }
    });
}

Var softmax_rows(const Var& x) {
    check_rank(x, 2, "softmax_rows");
    const auto n = x.dim(0), d = x.dim(1);
    Tensor out = x.value();
    for (std::int64_t i = 0; i < n; ++i) {
        double* row = out.data() + i * d;
        const double mx = *std::max_element(row, row + d);
        double s = 0.0;
        for (std::int64_t j = 0; j < d; ++j) s += (row[j] = std::exp(row[j] - mx));
        for (std::int64_t j = 0; j < d; ++j) row[j] /= s;
    }
    return make_op(std::move(out), {x}, [n, d](Node& self) {
        auto& g = pgrad(self, 0);
        for (std::int64_t i = 0; i < n; ++i) {
            const double* y = self.value.data() + i * d;
            const double* gy = self.grad.data() + i * d;
            double dot = 0.0;
            for (std::int64_t j = 0; j < d; ++j) dot += gy[j] * y[j];
            for (std::int64_t j = 0; j < d; ++j) g[i * d + j] += y[j] * (gy[j] - dot);
        }
    });
}

namespace {

// Normalizes `count` groups of `len` strided values. Shared by the row and
// channel layer norms: rows use stride 1 within a group, channels use stride
// H*W across the channel axis.
struct NormLayout {
    std::int64_t groups;
    std::int64_t len;
    std::int64_t elem_stride;
    std::function<std::int64_t(std::int64_t)> base;  // first element of group
    std::function<std::int64_t(std::int64_t)> param; // index into gamma/beta for element j
};

Var normalize_groups(const Var& x, const Var& gamma, const Var& beta, double eps, NormLayout layout) {
    Tensor out(x.shape());
    Tensor xhat(x.shape());
    std::vector<double> inv_std(static_cast<std::size_t>(layout.groups));
    const auto& xv = x.value();
    for (std::int64_t gi = 0; gi < layout.groups; ++gi) {
        const auto b = layout.base(gi);
        double mu = 0.0;
        for (std::int64_t j = 0; j < layout.len; ++j) mu += xv[b + j * layout.elem_stride];
        mu /= static_cast<double>(layout.len);
        double var = 0.0;
        for (std::int64_t j = 0; j < layout.len; ++j) {
            const double dlt = xv[b + j * layout.elem_stride] - mu;
            var += dlt * dlt;
        }
        var /= static_cast<double>(layout.len);
        const double is = 1.0 / std::sqrt(var + eps);
        inv_std[static_cast<std::size_t>(gi)] = is;
        for (std::int64_t j = 0; j < layout.len; ++j) {
            const auto idx = b + j * layout.elem_stride;
            const auto p = layout.param(j);
            xhat[idx] = (xv[idx] - mu) * is;
            out[idx] = xhat[idx] * gamma.value()[p] + beta.value()[p];
        }
    }
    return make_op(std::move(out), {x, gamma, beta},
                   [layout, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
        const auto& gv = pval(self, 1);
        const double inv_len = 1.0 / static_cast<double>(layout.len);
        for (std::int64_t gi = 0; gi < layout.groups; ++gi) {
            const auto b = layout.base(gi);
            double s1 = 0.0, s2 = 0.0;
            for (std::int64_t j = 0; j < layout.len; ++j) {
                const auto idx = b + j * layout.elem_stride;
                const double dxh = self.grad[idx] * gv[layout.param(j)];
                s1 += dxh;
                s2 += dxh * xhat[idx];
            }
            if (wants(self, 0)) {
                auto& g = pgrad(self, 0);
                const double is = inv_std[static_cast<std::size_t>(gi)];
                for (std::int64_t j = 0; j < layout.len; ++j) {
                    const auto idx = b + j * layout.elem_stride;
                    const double dxh = self.grad[idx] * gv[layout.param(j)];
                    g[idx] += is * (dxh - inv_len * s1 - xhat[idx] * inv_len * s2);
                }
            }
            if (wants(self, 1) || wants(self, 2)) {
                for (std::int64_t j = 0; j < layout.len; ++j) {
                    const auto idx = b + j * layout.elem_stride;
                    const auto p = layout.param(j);
                    if (wants(self, 1)) pgrad(self, 1)[p] += self.grad[idx] * xhat[idx];
                    if (wants(self, 2)) pgrad(self, 2)[p] += self.grad[idx];
                }
            }
        }
    });
}

}  // namespace

Var layer_norm_rows(const Var& x, const Var& gamma, const Var& beta, double eps) {
    check_rank(x, 2, "layer_norm_rows");
    const auto n = x.dim(0), d = x.dim(1);
    require(gamma.numel() == d && beta.numel() == d, ErrorKind::ShapeError, "layer_norm_rows: parameter length mismatch");
    return normalize_groups(x, gamma, beta, eps,
                            NormLayout{n, d, 1, [d](std::int64_t g) { return g * d; },
                                       [](std::int64_t j) { return j; }});
}

Var layer_norm_channels(const Var& x, const Var& gamma, const Var& beta, double eps) {
    check_rank(x, 4, "layer_norm_channels");
    const auto n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
    require(gamma.numel() == c && beta.numel() == c, ErrorKind::ShapeError, "layer_norm_channels: parameter length mismatch");
    return normalize_groups(x, gamma, beta, eps,
                            NormLayout{n * hw, c, hw, [c, hw](std::int64_t g) { return (g / hw) * c * hw + g % hw; },
                                       [](std::int64_t j) { return j; }});
}

// ---------------------------------------------------------------------------
// Convolution

namespace {

struct ConvGeom {
    std::int64_t n, cin, h, w, cout, kh, kw, ho, wo, groups, cin_g, cout_g;
    int stride, pad, dil;
    std::int64_t kdim() const { return cin_g * kh * kw; }
    std::int64_t plane() const { return ho * wo; }
};

// cols is [cin_g*kh*kw, ho*wo] for one (sample, group).
void im2col(const double* x, const ConvGeom& g, double* cols) {
    for (std::int64_t c = 0; c < g.cin_g; ++c)
        for (std::int64_t ki = 0; ki < g.kh; ++ki)
            for (std::int64_t kj = 0; kj < g.kw; ++kj) {
                double* row = cols + ((c * g.kh + ki) * g.kw + kj) * g.plane();
                const double* plane = x + c * g.h * g.w;
                for (std::int64_t oi = 0; oi < g.ho; ++oi) {
                    const std::int64_t ii = oi * g.stride - g.pad + ki * g.dil;
                    double* dst = row + oi * g.wo;
                    if (ii < 0 || ii >= g.h) {
                        std::fill_n(dst, g.wo, 0.0);
                        continue;
                    }
                    for (std::int64_t oj = 0; oj < g.wo; ++oj) {
                        const std::int64_t jj = oj * g.stride - g.pad + kj * g.dil;
                        dst[oj] = (jj >= 0 && jj < g.w) ? plane[ii * g.w + jj] : 0.0;
                    }
                }
            }
}

void col2im(const double* cols, const ConvGeom& g, double* dx) {
    for (std::int64_t c = 0; c < g.cin_g; ++c)
        for (std::int64_t ki = 0; ki < g.kh; ++ki)
            for (std::int64_t kj = 0; kj < g.kw; ++kj) {
                const double* row = cols + ((c * g.kh + ki) * g.kw + kj) * g.plane();
                double* plane = dx + c * g.h * g.w;
                for (std::int64_t oi = 0; oi < g.ho; ++oi) {
                    const std::int64_t ii = oi * g.stride - g.pad + ki * g.dil;
                    if (ii < 0 || ii >= g.h) continue;
                    const double* src = row + oi * g.wo;
                    for (std::int64_t oj = 0; oj < g.wo; ++oj) {
                        const std::int64_t jj = oj * g.stride - g.pad + kj * g.dil;
                        if (jj >= 0 && jj < g.w) plane[ii * g.w + jj] += src[oj];
                    }
                }
            }
}

}  // namespace

Var conv2d(const Var& x, const Var& weight, const Var& bias, const Conv2dOptions& opts) {
    check_rank(x, 4, "conv2d");
    check_rank(weight, 4, "conv2d weight");
    ConvGeom g{};
    g.n = x.dim(0);
    g.cin = x.dim(1);
    g.h = x.dim(2);
    g.w = x.dim(3);
    g.cout = weight.dim(0);
    g.kh = weight.dim(2);
    g.kw = weight.dim(3);
    g.groups = opts.groups;
    g.stride = opts.stride;
    g.pad = opts.padding;
    g.dil = opts.dilation;
    require(opts.groups >= 1 && g.cin % g.groups == 0 && g.cout % g.groups == 0, ErrorKind::ShapeError,
            "conv2d: channels not divisible by groups");
    g.cin_g = g.cin / g.groups;
    g.cout_g = g.cout / g.groups;
    require(weight.dim(1) == g.cin_g, ErrorKind::ShapeError,
            "conv2d: weight " + shape_str(weight.shape()) + " incompatible with input " + shape_str(x.shape()));
    g.ho = (g.h + 2 * g.pad - g.dil * (g.kh - 1) - 1) / g.stride + 1;
    g.wo = (g.w + 2 * g.pad - g.dil * (g.kw - 1) - 1) / g.stride + 1;
    require(g.ho >= 1 && g.wo >= 1, ErrorKind::ShapeError, "conv2d: output would be empty for input " + shape_str(x.shape()));
    const bool has_bias = static_cast<bool>(bias);
    if (has_bias) require(bias.numel() == g.cout, ErrorKind::ShapeError, "conv2d: bias length mismatch");

    Tensor out({g.n, g.cout, g.ho, g.wo});
    std::vector<double> cols(static_cast<std::size_t>(g.kdim() * g.plane()));
    const auto& xv = x.value();
    const auto& wv = weight.value();
    for (std::int64_t s = 0; s < g.n; ++s)
        for (std::int64_t gr = 0; gr < g.groups; ++gr) {
            im2col(xv.data() + (s * g.cin + gr * g.cin_g) * g.h * g.w, g, cols.data());
            auto o = mmap(out.data() + (s * g.cout + gr * g.cout_g) * g.plane(), g.cout_g, g.plane());
            o.noalias() = cmap(wv.data() + gr * g.cout_g * g.kdim(), g.cout_g, g.kdim()) * cmap(cols.data(), g.kdim(), g.plane());
            if (has_bias)
                for (std::int64_t co = 0; co < g.cout_g; ++co) o.row(co).array() += bias.value()[gr * g.cout_g + co];
        }

    std::vector<Var> parents{x, weight};
    if (has_bias) parents.push_back(bias);
    return make_op(std::move(out), std::move(parents), [g, has_bias](Node& self) {
        const auto& xv = pval(self, 0);
        const auto& wv = pval(self, 1);
        const bool want_x = wants(self, 0), want_w = wants(self, 1), want_b = has_bias && wants(self, 2);
        std::vector<double> cols(static_cast<std::size_t>(g.kdim() * g.plane()));
        for (std::int64_t s = 0; s < g.n; ++s)
            for (std::int64_t gr = 0; gr < g.groups; ++gr) {
                auto go = cmap(self.grad.data() + (s * g.cout + gr * g.cout_g) * g.plane(), g.cout_g, g.plane());
                auto wmat = cmap(wv.data() + gr * g.cout_g * g.kdim(), g.cout_g, g.kdim());
                if (want_w) {
                    im2col(xv.data() + (s * g.cin + gr * g.cin_g) * g.h * g.w, g, cols.data());
                    mmap(pgrad(self, 1).data() + gr * g.cout_g * g.kdim(), g.cout_g, g.kdim()).noalias() +=
                        go * cmap(cols.data(), g.kdim(), g.plane()).transpose();
                }
                if (want_x) {
                    mmap(cols.data(), g.kdim(), g.plane()).noalias() = wmat.transpose() * go;
                    col2im(cols.data(), g, pgrad(self, 0).data() + (s * g.cin + gr * g.cin_g) * g.h * g.w);
                }
                if (want_b) {
                    auto& gb = pgrad(self, 2);
                    for (std::int64_t co = 0; co < g.cout_g; ++co) gb[gr * g.cout_g + co] += go.row(co).sum();
                }
            }
    });
}

Var conv_transpose2d(const Var& x, const Var& weight, const Var& bias) {
    check_rank(x, 4, "conv_transpose2d");
    check_rank(weight, 4, "conv_transpose2d weight");
    const auto n = x.dim(0), cin = x.dim(1), h = x.dim(2), w = x.dim(3);
    const auto cout = weight.dim(1), k = weight.dim(2);
    require(weight.dim(0) == cin && weight.dim(3) == k, ErrorKind::ShapeError,
            "conv_transpose2d: weight " + shape_str(weight.shape()) + " incompatible with input " + shape_str(x.shape()));
    const bool has_bias = static_cast<bool>(bias);
    if (has_bias) require(bias.numel() == cout, ErrorKind::ShapeError, "conv_transpose2d: bias length mismatch");
    const auto hw = h * w, ck = cout * k * k, ho = h * k, wo = w * k;

    Tensor out({n, cout, ho, wo});
    RowMat tmp(ck, hw);
    for (std::int64_t s = 0; s < n; ++s) {
        tmp.noalias() = cmap(weight.value().data(), cin, ck).transpose() * cmap(x.value().data() + s * cin * hw, cin, hw);
        double* o = out.data() + s * cout * ho * wo;
        for (std::int64_t co = 0; co < cout; ++co)
            for (std::int64_t a = 0; a < k; ++a)
                for (std::int64_t b = 0; b < k; ++b) {
                    const auto r = (co * k + a) * k + b;
                    const double bv = has_bias ? bias.value()[co] : 0.0;
                    for (std::int64_t i = 0; i < h; ++i)
                        for (std::int64_t j = 0; j < w; ++j)
                            o[(co * ho + i * k + a) * wo + j * k + b] = tmp(r, i * w + j) + bv;
                }
    }

    std::vector<Var> parents{x, weight};
    if (has_bias) parents.push_back(bias);
    return make_op(std::move(out), std::move(parents), [=](Node& self) {
        RowMat gcol(ck, hw);
        for (std::int64_t s = 0; s < n; ++s) {
            const double* go = self.grad.data() + s * cout * ho * wo;
            for (std::int64_t co = 0; co < cout; ++co)
                for (std::int64_t a = 0; a < k; ++a)
                    for (std::int64_t b = 0; b < k; ++b) {
                        const auto r = (co * k + a) * k + b;
                        for (std::int64_t i = 0; i < h; ++i)
                            for (std::int64_t j = 0; j < w; ++j)
                                gcol(r, i * w + j) = go[(co * ho + i * k + a) * wo + j * k + b];
                    }
            if (wants(self, 0))
                mmap(pgrad(self, 0).data() + s * cin * hw, cin, hw).noalias() += cmap(pval(self, 1).data(), cin, ck) * gcol;
            if (wants(self, 1))
                mmap(pgrad(self, 1).data(), cin, ck).noalias() +=
                    cmap(pval(self, 0).data() + s * cin * hw, cin, hw) * gcol.transpose();
            if (has_bias && wants(self, 2)) {
                auto& gb = pgrad(self, 2);
                for (std::int64_t co = 0; co < cout; ++co) gb[co] += gcol.middleRows(co * k * k, k * k).sum();
            }
        }
    });
}

Var batch_norm(const Var& x, const Var& gamma, const Var& beta, BatchNormState state, bool training) {
    check_rank(x, 4, "batch_norm");
    const auto n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
    require(gamma.numel() == c && beta.numel() == c, ErrorKind::ShapeError, "batch_norm: parameter length mismatch");
    require(state.running_mean && state.running_var && state.running_mean->numel() == c && state.running_var->numel() == c,
            ErrorKind::ShapeError, "batch_norm: running statistics missing or mis-shaped");
    const auto m = n * hw;
    const auto& xv = x.value();

    std::vector<double> mu(static_cast<std::size_t>(c)), inv_std(static_cast<std::size_t>(c));
    for (std::int64_t ch = 0; ch < c; ++ch) {
        double mean_c, var_c;
        if (training) {
            double s = 0.0;
            for (std::int64_t s_ = 0; s_ < n; ++s_)
                for (std::int64_t i = 0; i < hw; ++i) s += xv[(s_ * c + ch) * hw + i];
            mean_c = s / static_cast<double>(m);
            double v = 0.0;
            for (std::int64_t s_ = 0; s_ < n; ++s_)
                for (std::int64_t i = 0; i < hw; ++i) {
                    const double d = xv[(s_ * c + ch) * hw + i] - mean_c;
                    v += d * d;
                }
            var_c = v / static_cast<double>(m);
            const double unbiased = m > 1 ? v / static_cast<double>(m - 1) : var_c;
            auto& rm = (*state.running_mean)[ch];
            auto& rv = (*state.running_var)[ch];
            rm = (1.0 - state.momentum) * rm + state.momentum * mean_c;
            rv = (1.0 - state.momentum) * rv + state.momentum * unbiased;
        } else {
            mean_c = (*state.running_mean)[ch];
            var_c = (*state.running_var)[ch];
        }
        mu[static_cast<std::size_t>(ch)] = mean_c;
        inv_std[static_cast<std::size_t>(ch)] = 1.0 / std::sqrt(var_c + state.eps);
    }

    Tensor out(x.shape());
    Tensor xhat(x.shape());
    for (std::int64_t s_ = 0; s_ < n; ++s_)
        for (std::int64_t ch = 0; ch < c; ++ch)
            for (std::int64_t i = 0; i < hw; ++i) {
                const auto idx = (s_ * c + ch) * hw + i;
                xhat[idx] = (xv[idx] - mu[static_cast<std::size_t>(ch)]) * inv_std[static_cast<std::size_t>(ch)];
                out[idx] = xhat[idx] * gamma.value()[ch] + beta.value()[ch];
            }

    return make_op(std::move(out), {x, gamma, beta},
                   [=, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
        const auto& gv = pval(self, 1);
        for (std::int64_t ch = 0; ch < c; ++ch) {
            double sg = 0.0, sgx = 0.0;
            for (std::int64_t s_ = 0; s_ < n; ++s_)
                for (std::int64_t i = 0; i < hw; ++i) {
                    const auto idx = (s_ * c + ch) * hw + i;
                    sg += self.grad[idx];
                    sgx += self.grad[idx] * xhat[idx];
                }
            if (wants(self, 1)) pgrad(self, 1)[ch] += sgx;
            if (wants(self, 2)) pgrad(self, 2)[ch] += sg;
            if (wants(self, 0)) {
                auto& g = pgrad(self, 0);
                const double is = inv_std[static_cast<std::size_t>(ch)];
                const double gm = gv[ch];
                for (std::int64_t s_ = 0; s_ < n; ++s_)
                    for (std::int64_t i = 0; i < hw; ++i) {
                        const auto idx = (s_ * c + ch) * hw + i;
                        if (training) {
                            g[idx] += gm * is * (self.grad[idx] - sg / static_cast<double>(m) -
                                                 xhat[idx] * sgx / static_cast<double>(m));
                        } else {
                            g[idx] += gm * is * self.grad[idx];
                        }
                    }
            }
        }
    });
}

namespace {

struct LerpTap {
    std::int64_t i0, i1;
    double w0, w1;
};

std::vector<LerpTap> bilinear_taps(std::int64_t in, std::int64_t out) {
    std::vector<LerpTap> taps(static_cast<std::size_t>(out));
    const double scale = static_cast<double>(in) / static_cast<double>(out);
    for (std::int64_t o = 0; o < out; ++o) {
        double src = (static_cast<double>(o) + 0.5) * scale - 0.5;
        if (src < 0.0) src = 0.0;
        std::int64_t i0 = static_cast<std::int64_t>(std::floor(src));
        if (i0 > in - 1) i0 = in - 1;
        const std::int64_t i1 = std::min(i0 + 1, in - 1);
        const double l1 = src - static_cast<double>(i0);
        taps[static_cast<std::size_t>(o)] = {i0, i1, 1.0 - l1, l1};
    }
    return taps;
}

}  // namespace

Var resize_bilinear(const Var& x, std::int64_t out_h, std::int64_t out_w) {
    check_rank(x, 4, "resize_bilinear");
    require(out_h >= 1 && out_w >= 1, ErrorKind::ShapeError, "resize_bilinear: empty output");
    const auto nc = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
    if (h == out_h && w == out_w) return x;
    const auto rows = bilinear_taps(h, out_h);
    const auto cols = bilinear_taps(w, out_w);
    Tensor out({x.dim(0), x.dim(1), out_h, out_w});
    const auto& xv = x.value();
    for (std::int64_t p = 0; p < nc; ++p) {
        const double* src = xv.data() + p * h * w;
        double* dst = out.data() + p * out_h * out_w;
        for (std::int64_t i = 0; i < out_h; ++i) {
            const auto& r = rows[static_cast<std::size_t>(i)];
            for (std::int64_t j = 0; j < out_w; ++j) {
                const auto& c = cols[static_cast<std::size_t>(j)];
                dst[i * out_w + j] = r.w0 * (c.w0 * src[r.i0 * w + c.i0] + c.w1 * src[r.i0 * w + c.i1]) +
                                     r.w1 * (c.w0 * src[r.i1 * w + c.i0] + c.w1 * src[r.i1 * w + c.i1]);
            }
        }
    }
    return make_op(std::move(out), {x}, [=](Node& self) {
        auto& g = pgrad(self, 0);
        for (std::int64_t p = 0; p < nc; ++p) {
            double* dst = g.data() + p * h * w;
            const double* go = self.grad.data() + p * out_h * out_w;
            for (std::int64_t i = 0; i < out_h; ++i) {
                const auto& r = rows[static_cast<std::size_t>(i)];
                for (std::int64_t j = 0; j < out_w; ++j) {
                    const auto& c = cols[static_cast<std::size_t>(j)];
                    const double v = go[i * out_w + j];
                    dst[r.i0 * w + c.i0] += v * r.w0 * c.w0;
                    dst[r.i0 * w + c.i1] += v * r.w0 * c.w1;
                    dst[r.i1 * w + c.i0] += v * r.w1 * c.w0;
                    dst[r.i1 * w + c.i1] += v * r.w1 * c.w1;
                }
            }
        }
    });
}

Var global_avg_pool(const Var& x) {
    check_rank(x, 4, "global_avg_pool");
    const auto n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
    Tensor out({n, c, 1, 1});
    for (std::int64_t p = 0; p < n * c; ++p) {
        double s = 0.0;
        for (std::int64_t i = 0; i < hw; ++i) s += x.value()[p * hw + i];
        out[p] = s / static_cast<double>(hw);
    }
    return make_op(std::move(out), {x}, [n, c, hw](Node& self) {
        auto& g = pgrad(self, 0);
        for (std::int64_t p = 0; p < n * c; ++p) {
            const double v = self.grad[p] / static_cast<double>(hw);
            for (std::int64_t i = 0; i < hw; ++i) g[p * hw + i] += v;
        }
    });
}

}  // namespace fabseg::ag
