#include "mkcaps/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "mkcaps/errors.hpp"

namespace mkcaps {

std::size_t shape_product(std::span<const std::size_t> shape) {
    std::size_t n = 1;
    for (std::size_t e : shape) n *= e;
    return n;
}

std::string shape_string(std::span<const std::size_t> shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

Tensor::Tensor(std::vector<std::size_t> shape) : shape_(std::move(shape)) {
    for (std::size_t e : shape_) {
        if (e == 0) throw DimensionError("tensor extent must be positive, got shape " + shape_string(shape_));
    }
    data_.assign(shape_product(shape_), 0.0);
}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
    for (std::size_t e : shape_) {
        if (e == 0) throw DimensionError("tensor extent must be positive, got shape " + shape_string(shape_));
    }
    if (data_.size() != shape_product(shape_)) {
        throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                             " does not match shape " + shape_string(shape_));
    }
}

Tensor Tensor::scalar(double v) { return Tensor({1}, {v}); }

Tensor Tensor::zeros_like(const Tensor& other) { return Tensor(other.shape_); }

std::size_t Tensor::extent(std::size_t dim) const {
    if (dim >= shape_.size()) throw DimensionError("extent index out of range");
    return shape_[dim];
}

double& Tensor::operator()(std::size_t i, std::size_t j) {
    return data_[i * shape_[1] + j];
}
double Tensor::operator()(std::size_t i, std::size_t j) const {
    return data_[i * shape_[1] + j];
}
double& Tensor::operator()(std::size_t i, std::size_t j, std::size_t k) {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
}
double Tensor::operator()(std::size_t i, std::size_t j, std::size_t k) const {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
}
double& Tensor::operator()(std::size_t i, std::size_t j, std::size_t k, std::size_t l) {
    return data_[((i * shape_[1] + j) * shape_[2] + k) * shape_[3] + l];
}
double Tensor::operator()(std::size_t i, std::size_t j, std::size_t k, std::size_t l) const {
    return data_[((i * shape_[1] + j) * shape_[2] + k) * shape_[3] + l];
}

bool Tensor::all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

std::vector<double> softmax(std::span<const double> logits) {
    if (logits.empty()) throw DimensionError("softmax of an empty vector");
    const double m = *std::max_element(logits.begin(), logits.end());
    std::vector<double> out(logits.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        out[i] = std::exp(logits[i] - m);
        sum += out[i];
    }
    for (double& v : out) v /= sum;
    return out;
}

} // namespace mkcaps
