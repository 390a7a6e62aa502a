#include "fabseg/raster.hpp"

#include <cmath>

namespace fabseg {

std::string_view domain_name(Domain d) {
    switch (d) {
        case Domain::U8: return "uint8";
        case Domain::Binary: return "binary";
        case Domain::Logits: return "logits";
        case Domain::Probability: return "probability";
    }
    return "unknown";
}

void validate_domain(const ByteRaster& r) {
    if (r.domain() == Domain::Binary)
        for (auto v : r.pixels()) require(v <= 1, ErrorKind::InvalidRange, "binary raster contains value " + std::to_string(v));
    else
        require(r.domain() == Domain::U8, ErrorKind::InvalidRange, "byte raster must be uint8 or binary");
}

void validate_domain(const RealRaster& r) {
    for (double v : r.pixels()) {
        require(std::isfinite(v), ErrorKind::InvalidRange, "raster contains a non-finite value");
        if (r.domain() == Domain::Probability)
            require(v >= 0.0 && v <= 1.0, ErrorKind::InvalidRange, "probability raster value outside [0,1]");
        if (r.domain() == Domain::Binary)
            require(v == 0.0 || v == 1.0, ErrorKind::InvalidRange, "binary raster value outside {0,1}");
    }
}

Tensor image_to_tensor(const ByteRaster& image) { return images_to_batch({&image}); }

Tensor images_to_batch(const std::vector<const ByteRaster*>& images) {
    require(!images.empty(), ErrorKind::EmptyInput, "images_to_batch: no images");
    const auto& first = *images.front();
    const int h = first.height(), w = first.width(), c = first.channels();
    Tensor t({static_cast<std::int64_t>(images.size()), c, h, w});
    for (std::size_t n = 0; n < images.size(); ++n) {
        const auto& img = *images[n];
        require(img.same_shape(first), ErrorKind::ShapeError, "images_to_batch: mixed image shapes");
        for (int ch = 0; ch < c; ++ch)
            for (int r = 0; r < h; ++r)
                for (int q = 0; q < w; ++q)
                    t[((static_cast<std::int64_t>(n) * c + ch) * h + r) * w + q] = img.at(r, q, ch) / 255.0;
    }
    return t;
}

Tensor grid_to_tensor(const RealRaster& r) {
    require(r.channels() == 1, ErrorKind::ShapeError, "grid_to_tensor expects a single channel");
    return Tensor({r.height(), r.width()}, r.pixels());
}

RealRaster tensor_to_grid(const Tensor& t, Domain domain) {
    require(t.numel() > 0, ErrorKind::EmptyInput, "tensor_to_grid: empty tensor");
    const auto h = t.dim(-2), w = t.dim(-1);
    require(h * w == t.numel(), ErrorKind::ShapeError, "tensor_to_grid expects a single plane, got " + shape_str(t.shape()));
    RealRaster r(static_cast<int>(h), static_cast<int>(w), 1, domain);
    r.pixels() = t.storage();
    return r;
}

}  // namespace fabseg
