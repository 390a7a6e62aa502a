#include "fabseg/image_io.hpp"

#include <filesystem>
#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

namespace fabseg {

namespace {

cv::Mat load(const std::string& path, int flags) {
    cv::Mat m = cv::imread(path, flags);
    require(!m.empty(), ErrorKind::IoError, "cannot read image " + path);
    return m;
}

void ensure_parent(const std::string& path) {
    const auto parent = std::filesystem::path(path).parent_path();
    if (!parent.empty()) std::filesystem::create_directories(parent);
}

void store(const std::string& path, const cv::Mat& m) {
    ensure_parent(path);
    require(cv::imwrite(path, m), ErrorKind::IoError, "cannot write image " + path);
}

}  // namespace

ByteRaster read_image_rgb(const std::string& path) {
    cv::Mat m = load(path, cv::IMREAD_COLOR);
    ByteRaster out(m.rows, m.cols, 3, Domain::U8);
    for (int r = 0; r < m.rows; ++r)
        for (int c = 0; c < m.cols; ++c) {
            const auto& px = m.at<cv::Vec3b>(r, c);
            out.at(r, c, 0) = px[2];
            out.at(r, c, 1) = px[1];
            out.at(r, c, 2) = px[0];
        }
    return out;
}

ByteRaster read_mask(const std::string& path) {
    cv::Mat m = load(path, cv::IMREAD_GRAYSCALE);
    ByteRaster out(m.rows, m.cols, 1, Domain::Binary);
    for (int r = 0; r < m.rows; ++r)
        for (int c = 0; c < m.cols; ++c) out.at(r, c) = m.at<std::uint8_t>(r, c) ? 1 : 0;
    return out;
}

RawTile read_raw_tile(const std::string& path) {
    cv::Mat m = load(path, cv::IMREAD_UNCHANGED);
    require(m.depth() == CV_8U || m.depth() == CV_16U, ErrorKind::DataError, "unsupported band depth in " + path);
    RawTile t;
    t.height = m.rows;
    t.width = m.cols;
    t.channels = m.channels();
    t.geo_id = std::filesystem::path(path).stem().string();
    t.pixels.resize(static_cast<std::size_t>(t.height) * t.width * t.channels);
    const bool bgr = t.channels >= 3;
    for (int r = 0; r < m.rows; ++r)
        for (int c = 0; c < m.cols; ++c)
            for (int ch = 0; ch < t.channels; ++ch) {
                // OpenCV stores colour bands as BGR(A); keep RGB order in memory
                const int src = bgr && ch < 3 ? 2 - ch : ch;
                const auto idx = (static_cast<std::size_t>(r) * t.width + c) * t.channels + ch;
                if (m.depth() == CV_8U)
                    t.pixels[idx] = m.ptr<std::uint8_t>(r)[c * t.channels + src];
                else
                    t.pixels[idx] = m.ptr<std::uint16_t>(r)[c * t.channels + src];
            }
    return t;
}

void write_image_rgb(const std::string& path, const ByteRaster& image) {
    require(image.channels() == 3, ErrorKind::ShapeError, "write_image_rgb expects 3 channels");
    cv::Mat m(image.height(), image.width(), CV_8UC3);
    for (int r = 0; r < image.height(); ++r)
        for (int c = 0; c < image.width(); ++c)
            m.at<cv::Vec3b>(r, c) = cv::Vec3b(image.at(r, c, 2), image.at(r, c, 1), image.at(r, c, 0));
    store(path, m);
}

void write_mask(const std::string& path, const ByteRaster& mask) {
    require(mask.channels() == 1, ErrorKind::ShapeError, "write_mask expects a single channel");
    cv::Mat m(mask.height(), mask.width(), CV_8UC1);
    for (int r = 0; r < mask.height(); ++r)
        for (int c = 0; c < mask.width(); ++c) m.at<std::uint8_t>(r, c) = mask.at(r, c) ? 255 : 0;
    store(path, m);
}

void write_label_map(const std::string& path, const std::vector<int>& labels, int height, int width) {
    require(labels.size() == static_cast<std::size_t>(height) * width, ErrorKind::ShapeError, "label map size mismatch");
    cv::Mat m(height, width, CV_16UC1);
    for (int r = 0; r < height; ++r)
        for (int c = 0; c < width; ++c) {
            const int v = labels[static_cast<std::size_t>(r) * width + c];
            require(v >= 0 && v <= 65535, ErrorKind::InvalidRange, "label id does not fit in 16 bits");
            m.at<std::uint16_t>(r, c) = static_cast<std::uint16_t>(v);
        }
    store(path, m);
}

std::vector<int> read_label_map(const std::string& path, int& height, int& width) {
    cv::Mat m = load(path, cv::IMREAD_UNCHANGED);
    require(m.channels() == 1 && m.depth() == CV_16U, ErrorKind::DataError, "label map must be 16-bit single channel");
    height = m.rows;
    width = m.cols;
    std::vector<int> out(static_cast<std::size_t>(height) * width);
    for (int r = 0; r < height; ++r)
        for (int c = 0; c < width; ++c) out[static_cast<std::size_t>(r) * width + c] = m.at<std::uint16_t>(r, c);
    return out;
}

}  // namespace fabseg
