#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "fabseg/params.hpp"

namespace fabseg {

inline constexpr char kCheckpointMagic[] = "FABSAM01";

/// Versioned container for one pipeline stage: named arrays, the name
/// patterns that must never change during fine-tuning, and string metadata
/// (config snapshot, RNG state, stage kind).
struct Checkpoint {
    ParamStore arrays;
    std::vector<std::string> frozen_manifest;  // entries like "sam.image_encoder.*"
    std::map<std::string, std::string> meta;

    bool is_frozen(std::string_view name) const;
    /// All arrays finite and every manifest entry matches at least one array.
    void validate() const;
    bool operator==(const Checkpoint&) const = default;
};

/// Layout (little-endian, u64 lengths):
///   magic "FABSAM01"
///   u64 array count, then per array:
///     u64 name length, name, u64 rank, rank x u64 dims,
///     u64 dtype length, dtype ("f64"), u64 byte length, raw values
///   u64 frozen count, then per entry: u64 length, bytes
///   u64 meta count, then per entry: u64 key length, key, u64 value length, value
std::vector<std::uint8_t> save_checkpoint(const Checkpoint& ckpt);
Checkpoint load_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint_file(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint_file(const std::string& path);

/// Ensures `actual` holds exactly the arrays of `expected` (restricted to
/// names starting with `prefix`) with matching shapes; throws SchemaError.
void check_schema(const ParamStore& expected, const ParamStore& actual, std::string_view prefix);

}  // namespace fabseg
