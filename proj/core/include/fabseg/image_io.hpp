#pragma once

#include <string>
#include <vector>

#include "fabseg/data_pipeline.hpp"
#include "fabseg/raster.hpp"

namespace fabseg {

/// 8-bit RGB image (grayscale inputs are replicated to three channels).
ByteRaster read_image_rgb(const std::string& path);
/// Single-channel mask; zero is background, any non-zero value is 1.
ByteRaster read_mask(const std::string& path);
/// 8- or 16-bit raster with its native band values.
RawTile read_raw_tile(const std::string& path);

void write_image_rgb(const std::string& path, const ByteRaster& image);
/// Binary masks are written as {0, 255}.
void write_mask(const std::string& path, const ByteRaster& mask);
/// Integer label map as a 16-bit single-channel PNG.
void write_label_map(const std::string& path, const std::vector<int>& labels, int height, int width);
std::vector<int> read_label_map(const std::string& path, int& height, int& width);

}  // namespace fabseg
