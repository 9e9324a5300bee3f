#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <vector>

namespace mkcaps {

/// Dense row-major array of 64-bit floats. Shapes are immutable after
/// construction; the data length always equals the product of the extents.
class Tensor {
public:
    Tensor() = default;

    // Zero-filled tensor of the given shape. Extents must be positive.
    explicit Tensor(std::vector<std::size_t> shape);
    Tensor(std::vector<std::size_t> shape, std::vector<double> data);

    static Tensor scalar(double v);
    static Tensor zeros_like(const Tensor& other);

    const std::vector<std::size_t>& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t size() const { return data_.size(); }
    std::size_t extent(std::size_t dim) const;

    bool is_scalar() const { return data_.size() == 1 && shape_.size() <= 1; }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::span<double> values() { return data_; }
    std::span<const double> values() const { return data_; }

    double& operator[](std::size_t flat) { return data_[flat]; }
    double operator[](std::size_t flat) const { return data_[flat]; }

    double& at(std::size_t i) { return data_.at(i); }

    // Multi-index access, cold paths only.
    double& operator()(std::size_t i, std::size_t j);
    double operator()(std::size_t i, std::size_t j) const;
    double& operator()(std::size_t i, std::size_t j, std::size_t k);
    double operator()(std::size_t i, std::size_t j, std::size_t k) const;
    double& operator()(std::size_t i, std::size_t j, std::size_t k, std::size_t l);
    double operator()(std::size_t i, std::size_t j, std::size_t k, std::size_t l) const;

    bool all_finite() const;
    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

    void fill(double v);

private:
    std::vector<std::size_t> shape_;
    std::vector<double> data_;
};

std::size_t shape_product(std::span<const std::size_t> shape);
std::string shape_string(std::span<const std::size_t> shape);

/// Numerically safe softmax (max-subtraction). Outputs are strictly positive
/// and sum to 1. Throws DimensionError on an empty input.
std::vector<double> softmax(std::span<const double> logits);

} // namespace mkcaps
