#include <gtest/gtest.h>

#include <cmath>

#include "fabseg/losses.hpp"
#include "fabseg/metrics.hpp"
#include "fabseg/verification.hpp"
#include "test_util.hpp"

using namespace fabseg;
using namespace fabseg::losses;
using fabseg::testutil::throws_kind;

namespace {

std::vector<double> random_probs(Rng& rng, std::size_t n) {
    std::vector<double> y(n);
    for (auto& v : y) v = rng.uniform(0.02, 0.98);
    return y;
}

std::vector<double> random_binary(Rng& rng, std::size_t n) {
    std::vector<double> t(n);
    for (auto& v : t) v = rng.uniform() < 0.5 ? 1.0 : 0.0;
    return t;
}

void expect_grad_matches(const std::function<LossValue(std::span<const double>)>& loss, const std::vector<double>& y) {
    const auto analytic = loss(y).grad;
    const auto numeric = verification::finite_difference_gradient([&](std::span<const double> x) { return loss(x).value; }, y);
    EXPECT_LT(verification::relative_error(analytic, numeric), 1e-5);
}

}  // namespace

TEST(CrossEntropy, PerfectPredictionIsNearZero) {
    const std::vector<double> t = {1, 0, 1, 1};
    EXPECT_NEAR(cross_entropy_loss(t, t).value, -std::log(1.0 - kProbEps), 1e-12);
}

TEST(CrossEntropy, HalfProbabilityIsLn2) {
    const std::vector<double> y(10, 0.5), t(10, 1.0);
    EXPECT_NEAR(cross_entropy_loss(y, t).value, std::log(2.0), 1e-12);
}

TEST(CrossEntropy, LabelSymmetry) {
    Rng rng(1);
    auto y = random_probs(rng, 50);
    auto t = random_binary(rng, 50);
    std::vector<double> y2(50), t2(50);
    for (int i = 0; i < 50; ++i) {
        y2[i] = 1 - y[i];
        t2[i] = 1 - t[i];
    }
    EXPECT_NEAR(cross_entropy_loss(y, t).value, cross_entropy_loss(y2, t2).value, 1e-12);
}

TEST(CrossEntropy, ShapeMismatch) {
    const std::vector<double> y(3, 0.5), t(4, 1.0);
    EXPECT_TRUE(throws_kind(ErrorKind::ShapeError, [&] { cross_entropy_loss(y, t); }));
}

TEST(Dice, HandArithmetic) {
    const std::vector<double> t = {1, 0, 1, 0}, y = {0.8, 0.2, 0.6, 0.4};
    EXPECT_NEAR(dice_loss(y, t).value, 0.3, 1e-9);
}

TEST(Dice, PerfectOverlapAndDisjoint) {
    const std::vector<double> t = {1, 0, 1, 1, 0};
    EXPECT_NEAR(dice_loss(t, t).value, 0.0, 1e-12);
    const std::vector<double> t2 = {1, 0}, y2 = {0, 1};
    EXPECT_NEAR(dice_loss(y2, t2).value, 1.0, 1e-9);
}

TEST(Dice, EqualsOneMinusF1OnBinaryPredictions) {
    Rng rng(7);
    for (int trial = 0; trial < 100; ++trial) {
        auto pm = testutil::random_mask(rng, 8, 8);
        auto gm = testutil::random_mask(rng, 8, 8);
        std::vector<double> y(pm.pixels().begin(), pm.pixels().end()), t(gm.pixels().begin(), gm.pixels().end());
        const auto f1 = metrics::pixel_metrics(metrics::confusion_counts(pm, gm)).f1;
        EXPECT_NEAR(dice_loss(y, t).value, 1.0 - f1, 1e-9);
    }
}

TEST(Focal, ReferenceValues) {
    const std::vector<double> y1 = {0.9}, t1 = {1.0};
    EXPECT_NEAR(focal_loss(y1, t1, 0.25, 2.0).value, 0.25 * 0.01 * -std::log(0.9), 1e-12);
    EXPECT_NEAR(focal_loss(y1, t1, 0.25, 2.0).value, 2.634e-4, 1e-7);
    const std::vector<double> y0 = {0.1}, t0 = {0.0};
    EXPECT_NEAR(focal_loss(y0, t0, 0.25, 2.0).value, 7.902e-4, 1e-7);
}

TEST(Focal, DegeneratesToHalfCrossEntropy) {
    Rng rng(2);
    for (int trial = 0; trial < 100; ++trial) {
        auto y = random_probs(rng, 32);
        auto t = random_binary(rng, 32);
        EXPECT_NEAR(focal_loss(y, t, 0.5, 0.0).value, 0.5 * cross_entropy_loss(y, t).value, 1e-9);
    }
}

TEST(Focal, AlphaOutsideOpenIntervalFails) {
    const std::vector<double> y = {0.5}, t = {1.0};
    EXPECT_TRUE(throws_kind(ErrorKind::InvalidArgument, [&] { focal_loss(y, t, 0.0, 2.0); }));
    EXPECT_TRUE(throws_kind(ErrorKind::InvalidArgument, [&] { focal_loss(y, t, 1.0, 2.0); }));
}

TEST(FinetuneLoss, ComposesDiceAndFocal) {
    const std::vector<double> t = {1, 0, 1, 0}, y = {0.8, 0.2, 0.6, 0.4};
    FinetuneLossWeights w;
    const auto total = finetune_loss(y, t, w);
    const double d = dice_loss(y, t).value, f = focal_loss(y, t, 0.25, 2.0).value;
    EXPECT_NEAR(total.term("dice"), d, 1e-15);
    EXPECT_NEAR(total.term("focal"), f, 1e-15);
    EXPECT_NEAR(total.value, d + f, 1e-15);
    w.w_f = 0.0;
    EXPECT_NEAR(finetune_loss(y, t, w).value, d, 1e-15);
}

TEST(PrompterLoss, WeightDegeneration) {
    Rng rng(4);
    Tensor main({2, 2, 3, 3}), aux({2, 2, 3, 3});
    for (auto& v : main.storage()) v = rng.normal();
    for (auto& v : aux.storage()) v = rng.normal();
    auto t = random_binary(rng, 18);
    PrompterLossWeights only_main{1.0, 0.0};
    PrompterLossWeights both{1.0, 1.0};
    const double lm = prompter_loss(main, aux, t, only_main).loss.value;
    EXPECT_NEAR(prompter_loss(main, Tensor{}, t, only_main).loss.value, lm, 1e-15);
    EXPECT_NEAR(prompter_loss(main, main, t, both).loss.value, 2 * lm, 1e-12);
}

TEST(Losses, NonNegativeAndFinite) {
    Rng rng(9);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<double> y(16);
        for (auto& v : y) v = rng.uniform();  // includes values near 0 and 1
        if (trial % 10 == 0) y[0] = 0.0, y[1] = 1.0;
        auto t = random_binary(rng, 16);
        for (const auto& l : {cross_entropy_loss(y, t), dice_loss(y, t), focal_loss(y, t, 0.25, 2.0),
                              finetune_loss(y, t, FinetuneLossWeights{})}) {
            EXPECT_TRUE(std::isfinite(l.value));
            EXPECT_GE(l.value, 0.0);
        }
    }
}

TEST(LossGradients, MatchFiniteDifferences) {
    Rng rng(13);
    for (int trial = 0; trial < 5; ++trial) {
        auto y = random_probs(rng, 12);
        auto t = random_binary(rng, 12);
        expect_grad_matches([&](std::span<const double> x) { return cross_entropy_loss(x, t); }, y);
        expect_grad_matches([&](std::span<const double> x) { return dice_loss(x, t); }, y);
        expect_grad_matches([&](std::span<const double> x) { return focal_loss(x, t, 0.25, 2.0); }, y);
        expect_grad_matches([&](std::span<const double> x) { return finetune_loss(x, t, FinetuneLossWeights{}); }, y);
    }
}

TEST(LossGradients, PrompterLossLogitGradients) {
    Rng rng(17);
    Tensor main({2, 2, 2, 3}), aux({2, 2, 2, 3});
    for (auto& v : main.storage()) v = rng.normal();
    for (auto& v : aux.storage()) v = rng.normal();
    auto t = random_binary(rng, 12);
    PrompterLossWeights w;
    const auto pl = prompter_loss(main, aux, t, w);
    auto num_main = verification::finite_difference_gradient(
        [&](std::span<const double> x) {
            Tensor m(main.shape(), std::vector<double>(x.begin(), x.end()));
            return prompter_loss(m, aux, t, w).loss.value;
        },
        main.values());
    auto num_aux = verification::finite_difference_gradient(
        [&](std::span<const double> x) {
            Tensor a(aux.shape(), std::vector<double>(x.begin(), x.end()));
            return prompter_loss(main, a, t, w).loss.value;
        },
        aux.values());
    EXPECT_LT(verification::relative_error(pl.grad_main, num_main), 1e-5);
    EXPECT_LT(verification::relative_error(pl.grad_aux, num_aux), 1e-5);
}
