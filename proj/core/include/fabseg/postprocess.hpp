#pragma once

#include <string>
#include <vector>

#include "fabseg/data_pipeline.hpp"
#include "fabseg/raster.hpp"

namespace fabseg {

/// sigmoid(logit) > threshold -> 1.
ByteRaster binarize(const RealRaster& logits, double threshold = 0.5);

/// Per-pixel XOR of two binary masks.
ByteRaster symmetric_difference(const ByteRaster& region, const ByteRaster& boundary);

/// Row-major reassembly of a tile grid, cropped back to the source extent.
template <typename T>
Raster<T> stitch_tiles(const TileGrid<T>& grid) {
    require(grid.rows >= 1 && grid.cols >= 1 && grid.tile_size >= 1, ErrorKind::InvalidGrid, "stitch_tiles: empty grid");
    require(static_cast<std::size_t>(grid.rows) * grid.cols == grid.tiles.size(), ErrorKind::InvalidGrid,
            "stitch_tiles: rows * cols does not match tile count");
    require(grid.rows * grid.tile_size >= grid.source_height && grid.cols * grid.tile_size >= grid.source_width &&
                grid.source_height >= 1 && grid.source_width >= 1,
            ErrorKind::InvalidGrid, "stitch_tiles: grid does not cover the source shape");
    const auto& first = grid.tiles.front();
    for (const auto& t : grid.tiles)
        require(t.height() == grid.tile_size && t.width() == grid.tile_size && t.channels() == first.channels(),
                ErrorKind::InvalidGrid, "stitch_tiles: tile shape mismatch");
    Raster<T> out(grid.source_height, grid.source_width, first.channels(), first.domain());
    for (int tr = 0; tr < grid.rows; ++tr)
        for (int tc = 0; tc < grid.cols; ++tc) {
            const auto& tile = grid.tiles[static_cast<std::size_t>(tr * grid.cols + tc)];
            const int r0 = tr * grid.tile_size, c0 = tc * grid.tile_size;
            const int rh = std::min(grid.tile_size, grid.source_height - r0);
            const int cw = std::min(grid.tile_size, grid.source_width - c0);
            for (int r = 0; r < rh; ++r)
                for (int q = 0; q < cw; ++q)
                    for (int ch = 0; ch < first.channels(); ++ch) out.at(r0 + r, c0 + q, ch) = tile.at(r, q, ch);
        }
    return out;
}

struct ParcelInfo {
    int id = 0;
    int area = 0;
    int row_min = 0, col_min = 0, row_max = 0, col_max = 0;  // inclusive bbox
};

struct ParcelMap {
    int height = 0;
    int width = 0;
    std::vector<int> labels;  // 0 = background, 1..parcel_count
    int parcel_count = 0;
    std::vector<ParcelInfo> parcels;
};

inline constexpr int kDefaultMinParcelArea = 16;

/// 4-connected components of (region XOR boundary) restricted to region
/// pixels; components below `min_area` are dropped and ids are assigned in
/// raster-scan order of each component's first pixel.
ParcelMap extract_parcels(const ByteRaster& region, const ByteRaster& boundary, int min_area = kDefaultMinParcelArea);

/// `parcel_id,area_px,bbox` lines; bbox is `row_min col_min row_max col_max`.
std::string format_parcel_summary(const ParcelMap& parcels);

}  // namespace fabseg
