#include <gtest/gtest.h>

#include <filesystem>

#include "fabseg/checkpoint.hpp"
#include "fabseg/prompter_net.hpp"
#include "fabseg/verification.hpp"
#include "test_util.hpp"

using namespace fabseg;
using fabseg::testutil::throws_kind;

namespace {

Checkpoint sample_checkpoint() {
    Checkpoint c;
    c.arrays = init_prompter_params(verification::toy_prompter_config(), 9);
    c.frozen_manifest = {"prompter.backbone.*"};
    c.meta["kind"] = "prompter";
    c.meta["note"] = "tab\there";
    return c;
}

}  // namespace

TEST(Checkpoint, RoundTripIsBitExact) {
    const auto c = sample_checkpoint();
    const auto bytes = save_checkpoint(c);
    EXPECT_EQ(load_checkpoint(bytes), c);
    EXPECT_EQ(save_checkpoint(load_checkpoint(bytes)), bytes);
}

TEST(Checkpoint, TruncatedAndCorrupt) {
    const auto bytes = save_checkpoint(sample_checkpoint());
    for (std::size_t cut : {std::size_t{0}, std::size_t{5}, bytes.size() / 2, bytes.size() - 1}) {
        std::vector<std::uint8_t> part(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(cut));
        EXPECT_TRUE(throws_kind(ErrorKind::CorruptCheckpoint, [&] { load_checkpoint(part); })) << cut;
    }
    auto bad_magic = bytes;
    bad_magic[0] ^= 0xff;
    EXPECT_TRUE(throws_kind(ErrorKind::CorruptCheckpoint, [&] { load_checkpoint(bad_magic); }));
    auto trailing = bytes;
    trailing.push_back(0);
    EXPECT_TRUE(throws_kind(ErrorKind::CorruptCheckpoint, [&] { load_checkpoint(trailing); }));
}

TEST(Checkpoint, SchemaMismatchOnSmallerConfig) {
    auto cfg = verification::toy_prompter_config();
    const auto full = init_prompter_params(cfg, 1);
    auto smaller = cfg;
    smaller.blocks_per_stage = cfg.blocks_per_stage + 1;
    EXPECT_TRUE(throws_kind(ErrorKind::SchemaError, [&] { check_schema(init_prompter_params(smaller, 1), full, "prompter."); }));
    auto narrower = cfg;
    narrower.decoder_channels -= 1;
    EXPECT_TRUE(throws_kind(ErrorKind::SchemaError, [&] { check_schema(init_prompter_params(narrower, 1), full, "prompter."); }));
    EXPECT_NO_THROW(check_schema(init_prompter_params(cfg, 2), full, "prompter."));
}

TEST(Checkpoint, FrozenPatterns) {
    auto c = sample_checkpoint();
    EXPECT_TRUE(c.is_frozen("prompter.backbone.stem.conv.weight"));
    EXPECT_FALSE(c.is_frozen("prompter.aspp.project.conv.weight"));
    EXPECT_NO_THROW(c.validate());
    c.frozen_manifest.push_back("sam.nothing.*");
    EXPECT_THROW(c.validate(), Error);
}

TEST(Checkpoint, FileRoundTrip) {
    const auto path = (std::filesystem::temp_directory_path() / "fabseg_ckpt_test.bin").string();
    const auto c = sample_checkpoint();
    save_checkpoint_file(path, c);
    EXPECT_EQ(load_checkpoint_file(path), c);
    std::filesystem::remove(path);
    EXPECT_TRUE(throws_kind(ErrorKind::IoError, [&] { load_checkpoint_file(path); }));
}
