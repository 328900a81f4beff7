#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "sparsedyn/tensor.hpp"

namespace sparsedyn {

// Reverse-mode tape. Nodes are appended in evaluation order, which is a
// topological order by construction; backward() walks the list once in
// reverse. A tape has a single owner thread: ops may parallelize their own
// arithmetic internally, but only the owner appends nodes.
class Tape {
public:
    // Called with the accumulated gradient of the node's output; pushes
    // contributions into parent nodes via accumulate().
    using BackwardFn = std::function<void(Tape&, const Tensor& upstream)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // Registers a value as a differentiable input and returns the taped handle.
    Tensor leaf(const Tensor& value);

    // Appends an op node. parents lists the node ids this value depends on
    // (ids of -1, i.e. untaped inputs, must be filtered out by the caller).
    Tensor record(Tensor value, std::vector<std::int64_t> parents, BackwardFn backward);

    // Seeds d(scalar)/d(scalar) = 1 and propagates. Gradients from a previous
    // backward() call are discarded.
    void backward(const Tensor& scalar_root);

    // Gradient of the last backward() root w.r.t. t. Zeros when t was not
    // reached.
    Tensor grad(const Tensor& t) const;

    // For use inside BackwardFn implementations. The rvalue form adopts the
    // buffer when the slot is still empty; contributions never alias saved
    // values in that path.
    void accumulate(std::int64_t node, const Tensor& g);
    void accumulate(std::int64_t node, Tensor&& g);

    std::size_t size() const { return nodes_.size(); }

private:
    struct Node {
        std::vector<std::int64_t> parents;
        std::vector<std::size_t> shape;
        BackwardFn backward; // empty for leaves
    };
    std::vector<Node> nodes_;
    std::vector<Tensor> grads_;
};

// Resolves the tape shared by a set of operands. Throws ContractViolation if
// two operands live on different tapes. Returns nullptr when none is taped.
Tape* common_tape(std::initializer_list<const Tensor*> args);

} // namespace sparsedyn
