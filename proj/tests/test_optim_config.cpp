#include <gtest/gtest.h>

#include <cmath>

#include "fabseg/config.hpp"
#include "fabseg/optim.hpp"
#include "fabseg/random.hpp"
#include "test_util.hpp"

using namespace fabseg;
using fabseg::testutil::throws_kind;

TEST(PolyLr, ReferencePoints) {
    EXPECT_DOUBLE_EQ(poly_lr(0, 80000, 0.004), 0.004);
    EXPECT_EQ(poly_lr(80000, 80000, 0.004), 0.0);
    EXPECT_NEAR(poly_lr(40000, 80000, 0.004), 0.004 * std::pow(0.5, 0.9), 1e-12);
    EXPECT_NEAR(poly_lr(40000, 80000, 0.004), 0.0021436, 1e-7);
}

TEST(PolyLr, StrictlyDecreasing) {
    for (double power : {0.5, 0.9, 2.0}) {
        double prev = poly_lr(0, 500, 0.01, power);
        for (int s = 1; s <= 500; ++s) {
            const double cur = poly_lr(s, 500, 0.01, power);
            EXPECT_LT(cur, prev);
            prev = cur;
        }
    }
}

TEST(PolyLr, OutOfRangeStep) {
    EXPECT_TRUE(throws_kind(ErrorKind::InvalidArgument, [] { poly_lr(11, 10, 0.1); }));
    EXPECT_TRUE(throws_kind(ErrorKind::InvalidArgument, [] { poly_lr(-1, 10, 0.1); }));
}

TEST(Optimizers, SgdMomentumByHand) {
    ParamStore p{{"w", Tensor({1}, 1.0)}};
    GradStore g{{"w", Tensor({1}, 0.5)}};
    Sgd sgd(0.9, 0.0);
    sgd.step(p, g, 0.1);
    EXPECT_NEAR(p.at("w")[0], 1.0 - 0.1 * 0.5, 1e-15);
    sgd.step(p, g, 0.1);
    EXPECT_NEAR(p.at("w")[0], 0.95 - 0.1 * (0.9 * 0.5 + 0.5), 1e-15);
}

TEST(Optimizers, AdamFirstStepIsLrSized) {
    ParamStore p{{"w", Tensor({2}, std::vector<double>{1.0, -1.0})}};
    GradStore g{{"w", Tensor({2}, std::vector<double>{3.0, -0.01})}};
    Adam adam(0.9, 0.999, 1e-8, 0.0);
    adam.step(p, g, 0.01);
    EXPECT_NEAR(p.at("w")[0], 0.99, 1e-8);
    EXPECT_NEAR(p.at("w")[1], -0.99, 1e-6);
}

TEST(Optimizers, SkipsParamsWithoutGrad) {
    ParamStore p{{"a", Tensor({1}, 1.0)}, {"b", Tensor({1}, 2.0)}};
    GradStore g{{"a", Tensor({1}, 1.0)}};
    Adam adam(0.9, 0.999, 1e-8, 0.1);
    adam.step(p, g, 0.01);
    EXPECT_EQ(p.at("b")[0], 2.0);
}

TEST(Config, DefaultsFollowFullScaleSchedule) {
    const auto p = TrainConfig::prompter_defaults();
    EXPECT_EQ(p.optimizer, OptimizerKind::Sgd);
    EXPECT_EQ(p.batch_size, 8);
    EXPECT_EQ(p.iterations, 80000);
    EXPECT_DOUBLE_EQ(p.lr0, 0.004);
    const auto f = TrainConfig::finetune_defaults();
    EXPECT_EQ(f.optimizer, OptimizerKind::Adam);
    EXPECT_EQ(f.batch_size, 4);
    EXPECT_EQ(f.epochs, 20);
    EXPECT_DOUBLE_EQ(f.lr0, 0.0003);
    EXPECT_DOUBLE_EQ(f.weight_decay, 0.0001);
    PromptGenConfig g;
    EXPECT_EQ(g.n_fg, 4);
    EXPECT_EQ(g.n_bg, 4);
    EXPECT_DOUBLE_EQ(g.t_fg, 0.7);
    EXPECT_DOUBLE_EQ(g.t_bg, 0.3);
}

TEST(Config, IniRoundTrip) {
    auto c = load_config(testutil::toy_config_path());
    EXPECT_EQ(c.data.tile, 64);
    EXPECT_EQ(c.prompter.input_height, 64);
    EXPECT_EQ(c.sam.image_width, 64);
    const auto again = parse_config(to_ini(c));
    EXPECT_EQ(to_ini(again), to_ini(c));
}

TEST(Config, UnknownKeyRejected) {
    EXPECT_TRUE(throws_kind(ErrorKind::InvalidArgument, [] { parse_config("[data]\ntile = 64\nbogus = 1\n"); }));
    EXPECT_TRUE(throws_kind(ErrorKind::InvalidArgument, [] { parse_config("[nonsense]\nx = 1\n"); }));
}

TEST(Config, Ratios) {
    auto r = parse_ratios("0.7,0.15,0.15");
    EXPECT_DOUBLE_EQ(r[0], 0.7);
    EXPECT_DOUBLE_EQ(r[2], 0.15);
    EXPECT_THROW(parse_ratios("0.5,0.5"), Error);
}

TEST(Random, SeededStreamsReproduce) {
    Rng a(5), b(5);
    for (int i = 0; i < 100; ++i) EXPECT_EQ(a.next(), b.next());
    Rng c(5);
    c.next();
    Rng d;
    d.set_state(c.state());
    EXPECT_EQ(c.next(), d.next());
    EXPECT_NE(derive_seed(1, 2), derive_seed(1, 3));
    EXPECT_EQ(derive_seed(1, 2, 3), derive_seed(1, 2, 3));
}

TEST(Random, BelowIsUnbiasedEnough) {
    Rng rng(9);
    std::vector<int> counts(3, 0);
    for (int i = 0; i < 30000; ++i) ++counts[rng.below(3)];
    for (int c : counts) EXPECT_NEAR(c, 10000, 400);
}
