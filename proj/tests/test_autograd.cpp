#include <gtest/gtest.h>

#include <cmath>

#include "fabseg/autograd.hpp"
#include "fabseg/verification.hpp"
#include "test_util.hpp"

using namespace fabseg;
namespace ag = fabseg::ag;

namespace {

Tensor randn(Rng& rng, Shape s, double scale = 1.0) {
    Tensor t(std::move(s));
    for (auto& v : t.storage()) v = rng.normal() * scale;
    return t;
}

// Checks d/dinputs of sum(w * op(inputs)) against central differences for every input.
void check_op(const std::function<ag::Var(const std::vector<ag::Var>&)>& op, std::vector<Tensor> inputs, std::uint64_t seed,
              double tol = 1e-6) {
    Rng rng(seed);
    std::vector<ag::Var> leaves;
    for (auto& t : inputs) leaves.push_back(ag::leaf(t));
    auto y = op(leaves);
    const Tensor w = randn(rng, y.shape());
    ag::backward(ag::sum(ag::mul(y, ag::constant(w))));
    for (std::size_t k = 0; k < inputs.size(); ++k) {
        auto f = [&](std::span<const double> x) {
            std::vector<ag::Var> vars;
            for (std::size_t j = 0; j < inputs.size(); ++j)
                vars.push_back(ag::constant(j == k ? Tensor(inputs[j].shape(), std::vector<double>(x.begin(), x.end())) : inputs[j]));
            const auto out = op(vars).value();
            double s = 0;
            for (std::int64_t i = 0; i < out.numel(); ++i) s += out[i] * w[i];
            return s;
        };
        const auto numeric = verification::finite_difference_gradient(f, inputs[k].values());
        EXPECT_LT(verification::relative_error(leaves[k].grad().values(), numeric, 1e-8), tol) << "input " << k;
    }
}

}  // namespace

TEST(Autograd, Conv2dMatchesNaiveLoop) {
    Rng rng(1);
    const Tensor x = randn(rng, {2, 4, 7, 6}), w = randn(rng, {6, 2, 3, 3}), b = randn(rng, {6});
    const ag::Conv2dOptions o{2, 2, 2, 2};
    const auto y = ag::conv2d(ag::constant(x), ag::constant(w), ag::constant(b), o).value();
    const int ho = (7 + 4 - 2 * 2 - 1) / 2 + 1, wo = (6 + 4 - 2 * 2 - 1) / 2 + 1;
    ASSERT_EQ(y.shape(), (Shape{2, 6, ho, wo}));
    for (int n = 0; n < 2; ++n)
        for (int co = 0; co < 6; ++co)
            for (int r = 0; r < ho; ++r)
                for (int c = 0; c < wo; ++c) {
                    double s = b[co];
                    const int g = co / 3;
                    for (int ci = 0; ci < 2; ++ci)
                        for (int kr = 0; kr < 3; ++kr)
                            for (int kc = 0; kc < 3; ++kc) {
                                const int ir = r * 2 - 2 + kr * 2, ic = c * 2 - 2 + kc * 2;
                                if (ir < 0 || ic < 0 || ir >= 7 || ic >= 6) continue;
                                s += x[((n * 4 + g * 2 + ci) * 7 + ir) * 6 + ic] * w[((co * 2 + ci) * 3 + kr) * 3 + kc];
                            }
                    EXPECT_NEAR(y[((n * 6 + co) * ho + r) * wo + c], s, 1e-12);
                }
}

TEST(Autograd, ResizeBilinearHalfPixel) {
    Tensor x({1, 1, 1, 2}, {0.0, 1.0});
    const auto y = ag::resize_bilinear(ag::constant(x), 1, 4).value();
    EXPECT_NEAR(y[0], 0.0, 1e-15);
    EXPECT_NEAR(y[1], 0.25, 1e-15);
    EXPECT_NEAR(y[2], 0.75, 1e-15);
    EXPECT_NEAR(y[3], 1.0, 1e-15);
}

TEST(Autograd, SoftmaxRowsSumToOne) {
    Rng rng(2);
    const auto y = ag::softmax_rows(ag::constant(randn(rng, {5, 7}, 10.0))).value();
    for (int r = 0; r < 5; ++r) {
        double s = 0;
        for (int c = 0; c < 7; ++c) s += y[r * 7 + c];
        EXPECT_NEAR(s, 1.0, 1e-12);
    }
}

TEST(AutogradGradients, Elementwise) {
    Rng rng(3);
    check_op([](auto& v) { return ag::mul(ag::add(v[0], v[1]), ag::sub(v[0], v[1])); }, {randn(rng, {3, 4}), randn(rng, {3, 4})}, 1);
    check_op([](auto& v) { return ag::gelu(v[0]); }, {randn(rng, {10})}, 2);
    check_op([](auto& v) { return ag::sigmoid(ag::scale(v[0], 1.5)); }, {randn(rng, {10})}, 3);
}

TEST(AutogradGradients, DenseLayers) {
    Rng rng(4);
    check_op([](auto& v) { return ag::matmul(v[0], v[1]); }, {randn(rng, {3, 4}), randn(rng, {4, 5})}, 4);
    check_op([](auto& v) { return ag::linear(v[0], v[1], v[2]); }, {randn(rng, {3, 4}), randn(rng, {2, 4}), randn(rng, {2})}, 5);
    check_op([](auto& v) { return ag::softmax_rows(v[0]); }, {randn(rng, {3, 6})}, 6);
    check_op([](auto& v) { return ag::layer_norm_rows(v[0], v[1], v[2]); },
             {randn(rng, {4, 6}), randn(rng, {6}), randn(rng, {6})}, 7);
    check_op([](auto& v) { return ag::layer_norm_channels(v[0], v[1], v[2]); },
             {randn(rng, {1, 5, 3, 3}), randn(rng, {5}), randn(rng, {5})}, 8);
}

TEST(AutogradGradients, Convolutions) {
    Rng rng(5);
    check_op([](auto& v) { return ag::conv2d(v[0], v[1], v[2], {1, 1, 1, 1}); },
             {randn(rng, {2, 3, 5, 5}), randn(rng, {4, 3, 3, 3}), randn(rng, {4})}, 9);
    check_op([](auto& v) { return ag::conv2d(v[0], v[1], v[2], {2, 2, 2, 4}); },
             {randn(rng, {1, 4, 7, 7}), randn(rng, {4, 1, 3, 3}), randn(rng, {4})}, 10);
    check_op([](auto& v) { return ag::conv_transpose2d(v[0], v[1], v[2]); },
             {randn(rng, {1, 3, 3, 3}), randn(rng, {3, 2, 2, 2}), randn(rng, {2})}, 11);
}

TEST(AutogradGradients, BatchNormTraining) {
    Rng rng(6);
    Tensor rm({3}), rv({3}, 1.0);
    check_op(
        [&](auto& v) {
            Tensor m = rm, s = rv;
            return ag::batch_norm(v[0], v[1], v[2], {&m, &s, 0.1, 1e-5}, true);
        },
        {randn(rng, {2, 3, 3, 3}), randn(rng, {3}), randn(rng, {3})}, 12);
}

TEST(AutogradGradients, ShapeAndResampling) {
    Rng rng(7);
    check_op([](auto& v) { return ag::resize_bilinear(v[0], 7, 5); }, {randn(rng, {1, 2, 3, 4})}, 13);
    check_op([](auto& v) { return ag::global_avg_pool(v[0]); }, {randn(rng, {2, 3, 4, 4})}, 14);
    check_op([](auto& v) { return ag::concat({v[0], ag::slice(v[1], 1, 1, 2)}, 1); },
             {randn(rng, {2, 3, 2, 2}), randn(rng, {2, 4, 2, 2})}, 15);
    check_op([](auto& v) { return ag::transpose(ag::reshape(v[0], {4, 3})); }, {randn(rng, {2, 6})}, 16);
    check_op([](auto& v) { return ag::tokens_to_grid(ag::add_row_vector(ag::grid_to_tokens(v[0]), v[1]), 2, 3); },
             {randn(rng, {1, 4, 2, 3}), randn(rng, {4})}, 17);
    check_op([](auto& v) { return ag::expand_channels(v[0], 2, 2); }, {randn(rng, {3})}, 18);
    check_op([](auto& v) { return ag::relu(v[0]); }, {randn(rng, {20})}, 19);
}

TEST(Autograd, ConstantsRecordNothing) {
    auto a = ag::constant(Tensor({2}, 1.0));
    auto b = ag::constant(Tensor({2}, 2.0));
    auto c = ag::mul(a, b);
    EXPECT_FALSE(c.requires_grad());
    EXPECT_TRUE(c.node()->parents.empty());
}
