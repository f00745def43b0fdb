#include "ichseq/tensor.hpp"

#include <algorithm>
#include <functional>
#include <numeric>

#include "ichseq/errors.hpp"

namespace ichseq {

std::size_t shape_numel(const std::vector<std::size_t>& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

Tensor::Tensor(std::vector<std::size_t> shape, double fill)
    : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != shape_numel(shape_)) {
        throw ContractError("tensor data size does not match shape " + shape_string());
    }
}

Tensor Tensor::reshaped(std::vector<std::size_t> shape) const {
    Tensor out = *this;
    out.reshape(std::move(shape));
    return out;
}

void Tensor::reshape(std::vector<std::size_t> shape) {
    if (shape_numel(shape) != data_.size()) {
        throw ContractError("cannot reshape " + shape_string());
    }
    shape_ = std::move(shape);
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

std::string Tensor::shape_string() const {
    std::string s = "(";
    for (std::size_t i = 0; i < shape_.size(); ++i) {
        if (i) s += ", ";
        s += std::to_string(shape_[i]);
    }
    return s + ")";
}

}  // namespace ichseq
