#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <set>

#include "fabseg/data_pipeline.hpp"
#include "fabseg/errors.hpp"
#include "fabseg/postprocess.hpp"
#include "test_util.hpp"

using namespace fabseg;
using fabseg::testutil::throws_kind;

namespace {

RawTile single_value(std::int32_t v) {
    RawTile t;
    t.height = t.width = 1;
    t.channels = 1;
    t.pixels = {v};
    return t;
}

int render_one(std::int32_t v, std::int64_t lo = 0, std::int64_t hi = 3000) {
    return render_bands(single_value(v), lo, hi).pixels()[0];
}

}  // namespace

TEST(RenderBands, ReferenceValues) {
    EXPECT_EQ(render_one(3000), 255);
    EXPECT_EQ(render_one(0), 0);
    EXPECT_EQ(render_one(4000), 255);
    EXPECT_EQ(render_one(1500), 128);  // 127.5 rounds up
}

TEST(RenderBands, RejectsEmptyRange) {
    EXPECT_TRUE(throws_kind(ErrorKind::InvalidRange, [] { render_bands(single_value(1), 5, 5); }));
    EXPECT_TRUE(throws_kind(ErrorKind::InvalidRange, [] { render_bands(single_value(1), 6, 5); }));
}

TEST(RenderBands, MonotoneInValue) {
    int prev = -1;
    for (std::int32_t v = 0; v <= 3200; v += 7) {
        const int cur = render_one(v);
        EXPECT_GE(cur, prev);
        prev = cur;
    }
}

TEST(RenderBands, IdempotentOnRenderedBytes) {
    Rng rng(3);
    RawTile t;
    t.height = 8;
    t.width = 9;
    t.channels = 3;
    for (int i = 0; i < 8 * 9 * 3; ++i) t.pixels.push_back(static_cast<std::int32_t>(rng.below(5000)));
    const auto once = render_bands(t, 0, 3000);
    RawTile again = t;
    for (std::size_t i = 0; i < once.size(); ++i) again.pixels[i] = once.pixels()[i];
    EXPECT_EQ(render_bands(again, 0, 255).pixels(), once.pixels());
}

TEST(CropTiles, ExactFitIsIdentity) {
    Rng rng(1);
    auto img = testutil::random_mask(rng, 256, 256);
    auto g = crop_tiles(img, 256);
    ASSERT_EQ(g.rows, 1);
    ASSERT_EQ(g.cols, 1);
    EXPECT_EQ(g.tiles[0], img);
}

TEST(CropTiles, QuadrantsOf512) {
    ByteRaster img(512, 512, 1, Domain::U8);
    for (int r = 0; r < 512; ++r)
        for (int c = 0; c < 512; ++c) img.at(r, c) = static_cast<std::uint8_t>((r * 31 + c * 17) % 251);
    auto g = crop_tiles(img, 256);
    ASSERT_EQ(g.rows, 2);
    ASSERT_EQ(g.cols, 2);
    for (int q = 0; q < 4; ++q) {
        const int r0 = (q / 2) * 256, c0 = (q % 2) * 256;
        for (int r = 0; r < 256; r += 13)
            for (int c = 0; c < 256; c += 11) EXPECT_EQ(g.tiles[q].at(r, c), img.at(r0 + r, c0 + c));
    }
}

TEST(CropTiles, PadsRemainder) {
    ByteRaster img(300, 300, 1, Domain::U8, 9);
    auto g = crop_tiles(img, 256, std::uint8_t{0});
    ASSERT_EQ(g.rows, 2);
    ASSERT_EQ(g.cols, 2);
    const auto& br = g.tiles[3];
    // 44 source pixels per axis, 212 padded
    EXPECT_EQ(br.at(43, 43), 9);
    EXPECT_EQ(br.at(44, 0), 0);
    EXPECT_EQ(br.at(0, 44), 0);
    EXPECT_EQ(br.at(255, 255), 0);
    int padded = 0;
    for (int c = 0; c < 256; ++c) padded += br.at(0, c) == 0;
    EXPECT_EQ(padded, 212);
}

TEST(CropTiles, EmptyImageFails) {
    EXPECT_TRUE(throws_kind(ErrorKind::EmptyInput, [] { crop_tiles(ByteRaster{}, 4); }));
}

TEST(CropTiles, StitchRoundTripRandomShapes) {
    Rng rng(11);
    const int sizes[] = {64, 128, 256};
    for (int trial = 0; trial < 25; ++trial) {
        const int h = 1 + static_cast<int>(rng.below(600));
        const int w = 1 + static_cast<int>(rng.below(600));
        const int t = sizes[rng.below(3)];
        auto img = testutil::random_mask(rng, h, w);
        EXPECT_EQ(stitch_tiles(crop_tiles(img, t)), img) << h << "x" << w << " tile " << t;
    }
}

TEST(SplitDataset, FloorSizes) {
    std::vector<std::string> ids;
    for (int i = 0; i < 20; ++i) ids.push_back("id" + std::to_string(i));
    auto s = split_dataset(ids, {0.7, 0.15, 0.15}, 4);
    EXPECT_EQ(s.train.size(), 14u);
    EXPECT_EQ(s.val.size(), 3u);
    EXPECT_EQ(s.test.size(), 3u);
    auto s2 = split_dataset(ids, {0.7, 0.15, 0.15}, 4);
    EXPECT_EQ(s.train, s2.train);
    EXPECT_EQ(s.val, s2.val);
    EXPECT_EQ(s.test, s2.test);
}

TEST(SplitDataset, SingleIdGoesToTrain) {
    auto s = split_dataset({"only"}, {0.7, 0.15, 0.15}, 0);
    EXPECT_EQ(s.train.size(), 1u);
    EXPECT_TRUE(s.val.empty());
    EXPECT_TRUE(s.test.empty());
}

TEST(SplitDataset, NegativeRatioFails) {
    EXPECT_TRUE(throws_kind(ErrorKind::InvalidRange, [] { split_dataset({"a", "b"}, {1.2, -0.1, -0.1}, 0); }));
}

TEST(SplitDataset, PartitionProperty) {
    Rng rng(5);
    for (int trial = 0; trial < 50; ++trial) {
        const int n = 1 + static_cast<int>(rng.below(200));
        const auto seed = rng.next();
        std::vector<std::string> ids;
        for (int i = 0; i < n; ++i) ids.push_back(std::to_string(i));
        auto s = split_dataset(ids, {0.7, 0.15, 0.15}, seed);
        EXPECT_EQ(s.val.size(), static_cast<std::size_t>(n * 0.15));
        EXPECT_EQ(s.test.size(), static_cast<std::size_t>(n * 0.15));
        std::set<std::string> all;
        for (const auto* part : {&s.train, &s.val, &s.test}) all.insert(part->begin(), part->end());
        EXPECT_EQ(all.size(), static_cast<std::size_t>(n));
        EXPECT_EQ(s.train.size() + s.val.size() + s.test.size(), static_cast<std::size_t>(n));
    }
}

TEST(SyntheticScene, Deterministic) {
    auto a = generate_synthetic_scene(42, 4, 64);
    auto b = generate_synthetic_scene(42, 4, 64);
    EXPECT_EQ(a.image, b.image);
    EXPECT_EQ(a.region_mask, b.region_mask);
    EXPECT_EQ(a.boundary_mask, b.boundary_mask);
    EXPECT_EQ(a.labels, b.labels);
}

TEST(SyntheticScene, BoundaryIsInnerRegionEdge) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        auto s = generate_synthetic_scene(seed, 5, 64);
        const auto& m = s.region_mask;
        const auto& b = s.boundary_mask;
        for (int r = 0; r < 64; ++r)
            for (int c = 0; c < 64; ++c) {
                ASSERT_LE(m.at(r, c), 1);
                ASSERT_LE(b.at(r, c), 1);
                if (!b.at(r, c)) continue;
                ASSERT_EQ(m.at(r, c), 1);
                const bool edge = (r > 0 && !m.at(r - 1, c)) || (r < 63 && !m.at(r + 1, c)) || (c > 0 && !m.at(r, c - 1)) ||
                                  (c < 63 && !m.at(r, c + 1));
                ASSERT_TRUE(edge);
            }
        EXPECT_GT(s.parcel_count, 0);
    }
}

TEST(Manifest, RoundTripsRelativePaths) {
    const auto dir = std::filesystem::temp_directory_path() / "fabseg_manifest_test";
    std::filesystem::create_directories(dir);
    const auto path = (dir / "m.tsv").string();
    write_manifest(path, {{(dir / "a.png").string(), (dir / "b.png").string(), ""},
                          {(dir / "c.png").string(), (dir / "d.png").string(), (dir / "e.png").string()}});
    auto back = read_manifest(path);
    ASSERT_EQ(back.size(), 2u);
    EXPECT_EQ(std::filesystem::path(back[0].image_path), dir / "a.png");
    EXPECT_TRUE(back[0].boundary_path.empty());
    EXPECT_EQ(std::filesystem::path(back[1].boundary_path), dir / "e.png");
    std::filesystem::remove_all(dir);
}
