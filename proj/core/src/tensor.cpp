#include "fabseg/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "fabseg/errors.hpp"

namespace fabseg {

std::int64_t shape_numel(const Shape& shape) {
    std::int64_t n = 1;
    for (auto d : shape) {
        require(d >= 0, ErrorKind::ShapeError, "negative dimension in " + shape_str(shape));
        n *= d;
    }
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << ']';
    return os.str();
}

Tensor::Tensor(Shape shape, double fill)
    : shape_(std::move(shape)), data_(static_cast<std::size_t>(shape_numel(shape_)), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> values) : shape_(std::move(shape)), data_(std::move(values)) {
    require(shape_numel(shape_) == static_cast<std::int64_t>(data_.size()), ErrorKind::ShapeError,
            "tensor shape " + shape_str(shape_) + " does not match " + std::to_string(data_.size()) + " values");
}

std::int64_t Tensor::dim(int axis) const {
    if (axis < 0) axis += rank();
    require(axis >= 0 && axis < rank(), ErrorKind::ShapeError, "axis out of range for " + shape_str(shape_));
    return shape_[static_cast<std::size_t>(axis)];
}

Tensor Tensor::reshaped(Shape shape) const {
    require(shape_numel(shape) == numel(), ErrorKind::ShapeError,
            "cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
    return Tensor(std::move(shape), data_);
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

void Tensor::add_(const Tensor& other) {
    require(other.numel() == numel(), ErrorKind::ShapeError,
            "add_ " + shape_str(shape_) + " vs " + shape_str(other.shape_));
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
}

void Tensor::scale_(double s) {
    for (auto& v : data_) v *= s;
}

bool Tensor::all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

double Tensor::sum() const {
    double s = 0.0;
    for (double v : data_) s += v;
    return s;
}

double Tensor::max_abs() const {
    double m = 0.0;
    for (double v : data_) m = std::max(m, std::abs(v));
    return m;
}

}  // namespace fabseg
