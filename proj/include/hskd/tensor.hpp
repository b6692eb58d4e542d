#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace hskd {

using Shape = std::vector<std::size_t>;

std::string shape_to_string(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

// Dense row-major array of doubles. Rank 0 ({}) is a scalar holding one value.
class Tensor {
public:
    Tensor() : data_(1, 0.0) {}
    explicit Tensor(Shape shape, double fill = 0.0);
    Tensor(Shape shape, std::vector<double> data);

    static Tensor scalar(double value) { return Tensor(Shape{}, std::vector<double>{value}); }
    static Tensor vector(std::initializer_list<double> values);
    static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t size() const { return data_.size(); }

    // Matrix view: rank-2 is [rows x cols], rank-1 is a single row, rank-0 is 1x1.
    std::size_t rows() const;
    std::size_t cols() const;

    std::span<double> data() { return data_; }
    std::span<const double> data() const { return data_; }
    std::vector<double>& storage() { return data_; }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }
    double& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
    double at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

    std::span<double> row(std::size_t r) { return std::span<double>(data_).subspan(r * cols(), cols()); }
    std::span<const double> row(std::size_t r) const {
        return std::span<const double>(data_).subspan(r * cols(), cols());
    }

    double item() const;
    void fill(double value);
    bool all_finite() const;

    // Gathers the given rows of a rank-2 tensor into a new [indices.size() x cols] tensor.
    Tensor gather_rows(std::span<const std::size_t> indices) const;

private:
    Shape shape_;
    std::vector<double> data_;
};

// Same shape and the same bit pattern in every entry.
bool bitwise_equal(const Tensor& a, const Tensor& b);

class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

}  // namespace hskd
