#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fabseg/errors.hpp"
#include "fabseg/tensor.hpp"

namespace fabseg {

/// Declared value domain of a raster.
enum class Domain { U8, Binary, Logits, Probability };

std::string_view domain_name(Domain d);

/// H x W x C grid stored row-major with interleaved channels.
template <typename T>
class Raster {
public:
    using value_type = T;

    Raster() = default;
    Raster(int height, int width, int channels, Domain domain, T fill = T{})
        : height_(height), width_(width), channels_(channels), domain_(domain),
          pixels_(static_cast<std::size_t>(height) * static_cast<std::size_t>(width) * static_cast<std::size_t>(channels), fill) {
        require(height >= 0 && width >= 0 && channels >= 1, ErrorKind::ShapeError, "invalid raster dimensions");
    }

    int height() const noexcept { return height_; }
    int width() const noexcept { return width_; }
    int channels() const noexcept { return channels_; }
    Domain domain() const noexcept { return domain_; }
    bool empty() const noexcept { return pixels_.empty(); }
    std::size_t size() const noexcept { return pixels_.size(); }

    T& at(int row, int col, int ch = 0) { return pixels_[index(row, col, ch)]; }
    const T& at(int row, int col, int ch = 0) const { return pixels_[index(row, col, ch)]; }

    std::vector<T>& pixels() noexcept { return pixels_; }
    const std::vector<T>& pixels() const noexcept { return pixels_; }

    bool same_shape(const Raster& other) const noexcept {
        return height_ == other.height_ && width_ == other.width_ && channels_ == other.channels_;
    }

    bool operator==(const Raster& other) const = default;

private:
    std::size_t index(int row, int col, int ch) const noexcept {
        return (static_cast<std::size_t>(row) * static_cast<std::size_t>(width_) + static_cast<std::size_t>(col)) *
                   static_cast<std::size_t>(channels_) + static_cast<std::size_t>(ch);
    }

    int height_ = 0;
    int width_ = 0;
    int channels_ = 1;
    Domain domain_ = Domain::U8;
    std::vector<T> pixels_;
};

using ByteRaster = Raster<std::uint8_t>;
using RealRaster = Raster<double>;

/// Throws InvalidRange when the values contradict the declared domain.
void validate_domain(const ByteRaster& r);
void validate_domain(const RealRaster& r);

/// uint8 H x W x C image -> [1, C, H, W] tensor scaled to [0, 1].
Tensor image_to_tensor(const ByteRaster& image);
/// Stacks several same-shape images into one [N, C, H, W] tensor.
Tensor images_to_batch(const std::vector<const ByteRaster*>& images);

/// Single-channel raster <-> [H, W] tensor.
Tensor grid_to_tensor(const RealRaster& r);
RealRaster tensor_to_grid(const Tensor& t, Domain domain);

}  // namespace fabseg
