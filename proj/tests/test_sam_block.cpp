#include <gtest/gtest.h>

#include <utility>

#include "fabseg/sam_block.hpp"
#include "fabseg/verification.hpp"
#include "test_util.hpp"

using namespace fabseg;
using fabseg::testutil::throws_kind;

namespace {

Tensor random_image(Rng& rng, const SamConfig& c) {
    Tensor t({1, c.in_channels, c.image_height, c.image_width});
    for (auto& v : t.storage()) v = rng.uniform();
    return t;
}

RealRaster random_logits(Rng& rng, const SamConfig& c) {
    RealRaster r(c.image_height, c.image_width, 1, Domain::Logits);
    for (auto& v : r.pixels()) v = rng.normal() * 3;
    return r;
}

PointPromptSet three_points() {
    PointPromptSet s;
    s.points = {{1, 2, true}, {10, 20, false}, {30, 5, true}};
    return s;
}

}  // namespace

TEST(SamBlock, EmbeddingGridShape) {
    SamConfig cfg;  // 256 x 256, patch 16
    auto params = init_sam_params(cfg, 1);
    Rng rng(1);
    ParamBinder binder(std::as_const(params));
    auto f = encode_image(ag::constant(random_image(rng, cfg)), cfg, binder);
    EXPECT_EQ(f.shape(), (Shape{1, cfg.prompt_dim, 16, 16}));
}

TEST(SamBlock, IndivisibleInputFails) {
    SamConfig cfg;
    cfg.image_height = 250;
    EXPECT_TRUE(throws_kind(ErrorKind::ShapeError, [&] { cfg.validate(); }));
}

TEST(SamBlock, EncodeImageDeterministic) {
    auto cfg = verification::toy_sam_config();
    auto params = init_sam_params(cfg, 2);
    Rng rng(2);
    auto img = random_image(rng, cfg);
    ParamBinder b1(std::as_const(params)), b2(std::as_const(params));
    EXPECT_EQ(encode_image(ag::constant(img), cfg, b1).value(), encode_image(ag::constant(img), cfg, b2).value());
}

TEST(SamBlock, PromptShapesAndNoMaskEmbedding) {
    auto cfg = verification::toy_sam_config();
    auto params = init_sam_params(cfg, 3);
    ParamBinder binder(std::as_const(params));
    auto pts = three_points();
    auto e = encode_prompts(nullptr, &pts, cfg, binder);
    EXPECT_EQ(e.sparse.shape(), (Shape{3, cfg.prompt_dim}));
    const auto& nm = params.at("sam.prompt_encoder.no_mask_embed");
    const auto& dense = e.dense.value();
    ASSERT_EQ(dense.shape(), (Shape{1, cfg.prompt_dim, cfg.grid_h(), cfg.grid_w()}));
    const auto plane = static_cast<std::int64_t>(cfg.grid_h()) * cfg.grid_w();
    for (std::int64_t ch = 0; ch < cfg.prompt_dim; ++ch)
        for (std::int64_t k = 0; k < plane; ++k) EXPECT_EQ(dense[ch * plane + k], nm[ch]);
    auto none = encode_prompts(nullptr, nullptr, cfg, binder);
    EXPECT_EQ(none.sparse.shape(), (Shape{0, cfg.prompt_dim}));
}

TEST(SamBlock, OutOfBoundsPointFails) {
    auto cfg = verification::toy_sam_config();
    auto params = init_sam_params(cfg, 3);
    ParamBinder binder(std::as_const(params));
    PointPromptSet s;
    s.points = {{cfg.image_height, 0, true}};
    EXPECT_TRUE(throws_kind(ErrorKind::InvalidPrompt, [&] { encode_prompts(nullptr, &s, cfg, binder); }));
}

TEST(SamBlock, UnknownHeadFails) {
    EXPECT_TRUE(throws_kind(ErrorKind::InvalidArgument, [] { parse_head("edges"); }));
    EXPECT_EQ(parse_head("region"), Head::Region);
    EXPECT_EQ(parse_head("boundary"), Head::Boundary);
}

TEST(SamBlock, PointLabelChangesOutput) {
    auto cfg = verification::toy_sam_config();
    auto params = init_sam_params(cfg, 4);
    Rng rng(4);
    ParamBinder binder(std::as_const(params));
    auto f = encode_image(ag::constant(random_image(rng, cfg)), cfg, binder);
    auto a = three_points();
    auto b = a;
    b.points[0].foreground = false;
    auto ea = encode_prompts(nullptr, &a, cfg, binder);
    auto eb = encode_prompts(nullptr, &b, cfg, binder);
    EXPECT_NE(ea.sparse.value(), eb.sparse.value());
    auto ya = decode_mask(f, ea.dense, ea.sparse, Head::Region, cfg, binder).value();
    auto yb = decode_mask(f, eb.dense, eb.sparse, Head::Region, cfg, binder).value();
    ASSERT_EQ(ya.shape(), (Shape{1, 1, cfg.image_height, cfg.image_width}));
    double delta = 0;
    for (std::int64_t i = 0; i < ya.numel(); ++i) delta = std::max(delta, std::abs(ya[i] - yb[i]));
    EXPECT_GT(delta, 0.0);
}

TEST(SamBlock, FusionIsElementwiseSum) {
    auto cfg = verification::toy_sam_config();
    auto params = init_sam_params(cfg, 5);
    Rng rng(5);
    ParamBinder binder(std::as_const(params));
    auto f = encode_image(ag::constant(random_image(rng, cfg)), cfg, binder);
    auto mp = random_logits(rng, cfg);
    auto pts = three_points();
    auto e = encode_prompts(&mp, &pts, cfg, binder);
    auto fused = ag::constant(ag::add(f, e.dense).value());
    auto zero = ag::constant(Tensor(e.dense.shape()));
    for (auto head : {Head::Region, Head::Boundary}) {
        auto y1 = decode_mask(f, e.dense, e.sparse, head, cfg, binder).value();
        auto y2 = decode_mask(fused, zero, e.sparse, head, cfg, binder).value();
        EXPECT_EQ(y1, y2);
    }
}

TEST(SamBlock, HeadsAreSeparateParameterSets) {
    auto cfg = verification::toy_sam_config();
    auto params = init_sam_params(cfg, 6);
    std::size_t region = 0, boundary = 0;
    for (const auto& [name, t] : params) {
        region += starts_with(name, decoder_prefix(Head::Region));
        boundary += starts_with(name, decoder_prefix(Head::Boundary));
    }
    EXPECT_GT(region, 0u);
    EXPECT_EQ(region, boundary);
    EXPECT_EQ(sam_frozen_manifest(), std::vector<std::string>{"sam.image_encoder.*"});
}
