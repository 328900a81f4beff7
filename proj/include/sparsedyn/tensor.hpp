#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace sparsedyn {

class Tape;

// Dense row-major f64 tensor. Values are immutable once a tensor has been
// handed to an op or another owner; builders fill data through
// mutable_data() before sharing. Copies are cheap (shared payload).
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<std::size_t> shape);
    Tensor(std::vector<std::size_t> shape, std::vector<double> data);

    static Tensor scalar(double v);
    static Tensor zeros(std::vector<std::size_t> shape);
    static Tensor full(std::vector<std::size_t> shape, double v);

    const std::vector<std::size_t>& shape() const { return shape_; }
    std::size_t ndim() const { return shape_.size(); }
    std::size_t dim(std::size_t i) const { return shape_[i]; }
    std::size_t numel() const;
    bool defined() const { return static_cast<bool>(data_); }

    std::span<const double> data() const;
    std::span<double> mutable_data();

    double at(std::size_t flat) const { return (*data_)[flat]; }
    // Scalar tensors only.
    double value() const;

    bool on_tape() const { return tape_ != nullptr; }
    Tape* tape() const { return tape_; }
    std::int64_t node() const { return node_; }

    // Same payload, no tape node.
    Tensor detached() const;

    bool all_finite() const;
    std::string shape_str() const;

    // Total element count for a shape vector.
    static std::size_t count(const std::vector<std::size_t>& shape);

private:
    friend class Tape;
    std::vector<std::size_t> shape_;
    std::shared_ptr<std::vector<double>> data_;
    Tape* tape_ = nullptr;
    std::int64_t node_ = -1;
};

} // namespace sparsedyn
