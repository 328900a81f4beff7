#include "sparsedyn/tensor.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

#include "sparsedyn/error.hpp"

namespace sparsedyn {

std::size_t Tensor::count(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
}

Tensor::Tensor(std::vector<std::size_t> shape)
    : shape_(std::move(shape)),
      data_(std::make_shared<std::vector<double>>(count(shape_), 0.0)) {}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)),
      data_(std::make_shared<std::vector<double>>(std::move(data))) {
    if (data_->size() != count(shape_)) {
        throw DimensionError("tensor data size " + std::to_string(data_->size()) +
                             " does not match shape " + shape_str());
    }
}

Tensor Tensor::scalar(double v) { return Tensor({}, {v}); }

Tensor Tensor::zeros(std::vector<std::size_t> shape) { return Tensor(std::move(shape)); }

Tensor Tensor::full(std::vector<std::size_t> shape, double v) {
    Tensor t(std::move(shape));
    for (double& x : t.mutable_data()) x = v;
    return t;
}

std::size_t Tensor::numel() const { return data_ ? data_->size() : 0; }

std::span<const double> Tensor::data() const {
    if (!data_) return {};
    return {data_->data(), data_->size()};
}

std::span<double> Tensor::mutable_data() {
    if (!data_) throw ContractViolation("mutable_data() on an undefined tensor");
    return {data_->data(), data_->size()};
}

double Tensor::value() const {
    if (numel() != 1) {
        throw ContractViolation("value() requires a scalar, got shape " + shape_str());
    }
    return (*data_)[0];
}

Tensor Tensor::detached() const {
    Tensor t = *this;
    t.tape_ = nullptr;
    t.node_ = -1;
    return t;
}

bool Tensor::all_finite() const {
    for (double v : data())
        if (!std::isfinite(v)) return false;
    return true;
}

std::string Tensor::shape_str() const {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape_.size(); ++i) {
        if (i) os << ',';
        os << shape_[i];
    }
    os << ']';
    return os.str();
}

} // namespace sparsedyn
