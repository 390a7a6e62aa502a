#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "fabseg/raster.hpp"

namespace fabseg {

/// Raw multi-band tile as read from disk (unitless reflectance counts).
struct RawTile {
    int height = 0;
    int width = 0;
    int channels = 0;
    std::vector<std::int32_t> pixels;  // row-major, channels interleaved
    std::string geo_id;
};

/// Linear contrast stretch of [lo, hi] onto [0, 255] with clamping and
/// round-half-up, computed in exact integer arithmetic.
ByteRaster render_bands(const RawTile& tile, std::int64_t lo, std::int64_t hi);

template <typename T>
struct TileGrid {
    int rows = 0;
    int cols = 0;
    int tile_size = 0;
    int source_height = 0;
    int source_width = 0;
    std::vector<Raster<T>> tiles;  // row-major
};

/// Non-overlapping row-major tiles; the right and bottom remainders are
/// padded with `pad_value` so no source pixel is lost.
template <typename T>
TileGrid<T> crop_tiles(const Raster<T>& image, int tile_size, T pad_value = T{}) {
    require(!image.empty() && image.height() > 0 && image.width() > 0, ErrorKind::EmptyInput, "crop_tiles: empty image");
    require(tile_size >= 1, ErrorKind::InvalidArgument, "crop_tiles: tile_size must be >= 1");
    TileGrid<T> grid;
    grid.tile_size = tile_size;
    grid.source_height = image.height();
    grid.source_width = image.width();
    grid.rows = (image.height() + tile_size - 1) / tile_size;
    grid.cols = (image.width() + tile_size - 1) / tile_size;
    grid.tiles.reserve(static_cast<std::size_t>(grid.rows * grid.cols));
    const int c = image.channels();
    for (int tr = 0; tr < grid.rows; ++tr)
        for (int tc = 0; tc < grid.cols; ++tc) {
            Raster<T> tile(tile_size, tile_size, c, image.domain(), pad_value);
            const int r0 = tr * tile_size, c0 = tc * tile_size;
            const int rh = std::min(tile_size, image.height() - r0);
            const int cw = std::min(tile_size, image.width() - c0);
            for (int r = 0; r < rh; ++r)
                for (int q = 0; q < cw; ++q)
                    for (int ch = 0; ch < c; ++ch) tile.at(r, q, ch) = image.at(r0 + r, c0 + q, ch);
            grid.tiles.push_back(std::move(tile));
        }
    return grid;
}

struct DatasetSplit {
    std::vector<std::string> train;
    std::vector<std::string> val;
    std::vector<std::string> test;
    std::uint64_t seed = 0;
};

/// Seeded shuffle then contiguous partition. val/test sizes are
/// floor(n * ratio); the remainder goes to train.
DatasetSplit split_dataset(const std::vector<std::string>& ids, std::array<double, 3> ratios, std::uint64_t seed);

struct SyntheticScene {
    ByteRaster image;          // H x W x 3
    ByteRaster region_mask;    // binary
    ByteRaster boundary_mask;  // binary
    std::vector<int> labels;   // per-pixel parcel id, 0 = background
    int parcel_count = 0;
};

/// Random convex parcels with per-parcel stripe texture on a noisy
/// background. Parcels occupy disjoint grid cells and never touch, so the
/// boundary mask is exactly the inner 4-neighbour edge of the region mask.
SyntheticScene generate_synthetic_scene(std::uint64_t seed, int n_parcels, int size);

/// One labeled sample: image plus region and (optionally) boundary labels.
struct Sample {
    std::string id;
    ByteRaster image;
    ByteRaster region;
    ByteRaster boundary;  // empty when unavailable
};

struct ManifestEntry {
    std::string image_path;
    std::string region_path;
    std::string boundary_path;
};

/// Tab-separated manifest: image, region mask, boundary mask per line.
/// Relative paths resolve against the manifest's directory.
std::vector<ManifestEntry> read_manifest(const std::string& path);
void write_manifest(const std::string& path, const std::vector<ManifestEntry>& entries);
std::vector<Sample> load_samples(const std::vector<ManifestEntry>& entries);

}  // namespace fabseg
