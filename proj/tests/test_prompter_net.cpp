#include <gtest/gtest.h>

#include <utility>

#include "fabseg/prompter_net.hpp"
#include "fabseg/verification.hpp"
#include "test_util.hpp"

using namespace fabseg;
using fabseg::testutil::throws_kind;

namespace {

Tensor random_images(Rng& rng, std::int64_t n, std::int64_t size) {
    Tensor t({n, 3, size, size});
    for (auto& v : t.storage()) v = rng.uniform();
    return t;
}

}  // namespace

TEST(PrompterNet, OutputShapeAtFullResolution) {
    PrompterConfig cfg;  // 256 x 256 x 3
    auto params = init_prompter_params(cfg, 1);
    Rng rng(1);
    ParamBinder binder(std::as_const(params));
    auto out = prompter_forward(ag::constant(random_images(rng, 1, 256)), cfg, binder, false);
    EXPECT_EQ(out.main_logits.shape(), (Shape{1, 2, 256, 256}));
    EXPECT_FALSE(static_cast<bool>(out.aux_logits));
}

TEST(PrompterNet, ZeroWeightsGiveZeroLogits) {
    auto cfg = verification::toy_prompter_config();
    auto params = init_prompter_params(cfg, 2);
    for (auto& [name, t] : params)
        if (!is_buffer(name)) t.fill(0.0);
    Rng rng(2);
    ParamBinder binder(std::as_const(params));
    auto out = prompter_forward(ag::constant(random_images(rng, 1, cfg.input_height)), cfg, binder, false);
    for (double v : out.main_logits.value().storage()) EXPECT_EQ(v, 0.0);
}

TEST(PrompterNet, AuxHeadZeroConvGivesBias) {
    auto cfg = verification::toy_prompter_config();
    auto params = init_prompter_params(cfg, 3);
    params.at("prompter.aux.conv3.weight").fill(0.0);
    params.at("prompter.aux.conv1.weight").fill(0.0);
    params.at("prompter.aux.conv1.bias") = Tensor({2}, {0.25, -0.5});
    Rng rng(3);
    Tensor features({2, cfg.backbone_channels[2], 4, 4});
    for (auto& v : features.storage()) v = rng.normal();
    ParamBinder binder(std::as_const(params));
    auto y = aux_head_forward(ag::constant(features), cfg, binder, true).value();
    ASSERT_EQ(y.shape(), (Shape{2, 2, cfg.input_height, cfg.input_width}));
    const auto plane = static_cast<std::int64_t>(cfg.input_height) * cfg.input_width;
    for (std::int64_t n = 0; n < 2; ++n)
        for (std::int64_t k = 0; k < plane; ++k) {
            EXPECT_DOUBLE_EQ(y[(n * 2 + 0) * plane + k], 0.25);
            EXPECT_DOUBLE_EQ(y[(n * 2 + 1) * plane + k], -0.5);
        }
}

TEST(PrompterNet, AuxHeadRequiresTraining) {
    auto cfg = verification::toy_prompter_config();
    auto params = init_prompter_params(cfg, 3);
    ParamBinder binder(std::as_const(params));
    Tensor features({1, cfg.backbone_channels[2], 4, 4});
    EXPECT_TRUE(throws_kind(ErrorKind::InvalidState, [&] { aux_head_forward(ag::constant(features), cfg, binder, false); }));
}

TEST(PrompterNet, ShapeMismatchAndNonFiniteParams) {
    auto cfg = verification::toy_prompter_config();
    auto params = init_prompter_params(cfg, 4);
    Rng rng(4);
    {
        ParamBinder binder(std::as_const(params));
        EXPECT_TRUE(throws_kind(ErrorKind::ShapeError,
                                [&] { prompter_forward(ag::constant(random_images(rng, 1, 24)), cfg, binder, false); }));
    }
    params.at("prompter.decoder.classifier.weight")[0] = std::nan("");
    ParamBinder binder(std::as_const(params));
    EXPECT_TRUE(throws_kind(ErrorKind::NumericalError, [&] {
        prompter_forward(ag::constant(random_images(rng, 1, cfg.input_height)), cfg, binder, false);
    }));
}

TEST(PrompterNet, Deterministic) {
    auto cfg = verification::toy_prompter_config();
    auto a = init_prompter_params(cfg, 5);
    auto b = init_prompter_params(cfg, 5);
    EXPECT_EQ(a, b);
    Rng rng(5);
    auto img = random_images(rng, 2, cfg.input_height);
    ParamBinder ba(std::as_const(a)), bb(std::as_const(b));
    EXPECT_EQ(prompter_forward(ag::constant(img), cfg, ba, true).main_logits.value(),
              prompter_forward(ag::constant(img), cfg, bb, true).main_logits.value());
}

TEST(PrompterNet, ReadOnlyBinderLeavesRunningStatsAlone) {
    auto cfg = verification::toy_prompter_config();
    auto params = init_prompter_params(cfg, 6);
    const auto before = params;
    Rng rng(6);
    {
        ParamBinder binder(std::as_const(params));
        prompter_forward(ag::constant(random_images(rng, 2, cfg.input_height)), cfg, binder, true);
    }
    EXPECT_EQ(params, before);
    {
        ParamBinder binder(params);
        prompter_forward(ag::constant(random_images(rng, 2, cfg.input_height)), cfg, binder, true);
    }
    EXPECT_NE(params.at("prompter.backbone.stem.bn.running_mean"), before.at("prompter.backbone.stem.bn.running_mean"));
}

TEST(PrompterNet, EveryParameterReceivesGradient) {
    auto cfg = verification::toy_prompter_config();
    auto params = init_prompter_params(cfg, 7);
    Rng rng(7);
    ParamBinder binder(std::as_const(params), [](const std::string&) { return true; });
    auto out = prompter_forward(ag::constant(random_images(rng, 2, cfg.input_height)), cfg, binder, true);
    Tensor wm(out.main_logits.shape()), wa(out.aux_logits.shape());
    for (auto& v : wm.storage()) v = rng.normal();
    for (auto& v : wa.storage()) v = rng.normal();
    ag::backward(ag::add(ag::sum(ag::mul(out.main_logits, ag::constant(wm))), ag::sum(ag::mul(out.aux_logits, ag::constant(wa)))));
    auto grads = binder.grads();
    std::size_t trainable = 0;
    for (const auto& [name, t] : params) {
        if (is_buffer(name)) continue;
        ++trainable;
        ASSERT_TRUE(grads.count(name)) << name;
        EXPECT_GT(grads.at(name).max_abs(), 0.0) << name;
    }
    EXPECT_EQ(grads.size(), trainable);
}

TEST(PrompterNet, MaskLogitsAreClassDifference) {
    Tensor main({1, 2, 1, 3}, {0.0, 1.0, 2.0, 3.0, 3.0, 3.0});
    EXPECT_EQ(mask_logits(main), Tensor({1, 3}, {3.0, 2.0, 1.0}));
}

TEST(PrompterConfigTest, RejectsBadAsppRates) {
    PrompterConfig cfg;
    cfg.aspp_rates = {1, 6, 6};
    EXPECT_THROW(cfg.validate(), Error);
}
