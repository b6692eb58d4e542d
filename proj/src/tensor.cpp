#include "hskd/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace hskd {

std::string shape_to_string(const Shape& shape) {
    std::string out = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) out += "x";
        out += std::to_string(shape[i]);
    }
    return out + "]";
}

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
    for (auto d : shape_) {
        if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + shape_to_string(shape_));
    }
    data_.assign(shape_numel(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    for (auto d : shape_) {
        if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + shape_to_string(shape_));
    }
    if (shape_numel(shape_) != data_.size()) {
        throw ShapeError("shape " + shape_to_string(shape_) + " needs " + std::to_string(shape_numel(shape_)) +
                         " values, got " + std::to_string(data_.size()));
    }
}

Tensor Tensor::vector(std::initializer_list<double> values) {
    return Tensor(Shape{values.size()}, std::vector<double>(values));
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r ? rows.begin()->size() : 0;
    std::vector<double> data;
    data.reserve(r * c);
    for (const auto& row : rows) {
        if (row.size() != c) throw ShapeError("ragged matrix literal");
        data.insert(data.end(), row.begin(), row.end());
    }
    return Tensor(Shape{r, c}, std::move(data));
}

std::size_t Tensor::rows() const {
    if (shape_.size() == 2) return shape_[0];
    if (shape_.size() <= 1) return 1;
    throw ShapeError("rows() needs rank <= 2, got " + shape_to_string(shape_));
}

std::size_t Tensor::cols() const {
    if (shape_.size() == 2) return shape_[1];
    if (shape_.size() == 1) return shape_[0];
    if (shape_.empty()) return 1;
    throw ShapeError("cols() needs rank <= 2, got " + shape_to_string(shape_));
}

double Tensor::item() const {
    if (data_.size() != 1) throw ShapeError("item() on non-scalar tensor " + shape_to_string(shape_));
    return data_[0];
}

void Tensor::fill(double value) { std::fill(data_.begin(), data_.end(), value); }

bool Tensor::all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Tensor Tensor::gather_rows(std::span<const std::size_t> indices) const {
    const std::size_t c = cols();
    Tensor out(Shape{indices.size(), c});
    for (std::size_t i = 0; i < indices.size(); ++i) {
        if (indices[i] >= rows()) throw std::out_of_range("gather_rows index out of range");
        std::copy_n(data_.begin() + static_cast<std::ptrdiff_t>(indices[i] * c), c,
                    out.data_.begin() + static_cast<std::ptrdiff_t>(i * c));
    }
    return out;
}

bool bitwise_equal(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) return false;
    return std::memcmp(a.data().data(), b.data().data(), a.size() * sizeof(double)) == 0;
}

}  // namespace hskd
