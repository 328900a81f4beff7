#include "sparsedyn/tape.hpp"

#include "sparsedyn/error.hpp"

namespace sparsedyn {

Tensor Tape::leaf(const Tensor& value) {
    Tensor t = value.detached();
    t.tape_ = this;
    t.node_ = static_cast<std::int64_t>(nodes_.size());
    nodes_.push_back(Node{{}, t.shape(), nullptr});
    return t;
}

Tensor Tape::record(Tensor value, std::vector<std::int64_t> parents, BackwardFn backward) {
    value.tape_ = this;
    value.node_ = static_cast<std::int64_t>(nodes_.size());
    nodes_.push_back(Node{std::move(parents), value.shape(), std::move(backward)});
    return value;
}

void Tape::backward(const Tensor& scalar_root) {
    if (scalar_root.numel() != 1) {
        throw ContractViolation("backward root must be a scalar, got shape " +
                                scalar_root.shape_str());
    }
    if (scalar_root.tape() != this || scalar_root.node() < 0) {
        throw ContractViolation("backward root does not live on this tape");
    }
    grads_.assign(nodes_.size(), Tensor());
    grads_[static_cast<std::size_t>(scalar_root.node())] = Tensor::full(scalar_root.shape(), 1.0);
    for (std::int64_t i = scalar_root.node(); i >= 0; --i) {
        const auto idx = static_cast<std::size_t>(i);
        if (!grads_[idx].defined()) continue;
        if (nodes_[idx].backward) nodes_[idx].backward(*this, grads_[idx]);
    }
}

Tensor Tape::grad(const Tensor& t) const {
    if (t.tape() != this || t.node() < 0) {
        throw ContractViolation("grad() query for a tensor not on this tape");
    }
    const auto idx = static_cast<std::size_t>(t.node());
    if (idx < grads_.size() && grads_[idx].defined()) return grads_[idx].detached();
    return Tensor::zeros(t.shape());
}

void Tape::accumulate(std::int64_t node, const Tensor& g) {
    if (node < 0) return;
    const auto idx = static_cast<std::size_t>(node);
    if (!grads_[idx].defined()) {
        // Copy, not alias: contributors may hand us views of saved values.
        grads_[idx] = Tensor(g.shape(), std::vector<double>(g.data().begin(), g.data().end()));
        return;
    }
    if (grads_[idx].shape() != g.shape()) {
        throw ContractViolation("gradient shape mismatch at node " + std::to_string(node) +
                                ": " + grads_[idx].shape_str() + " vs " + g.shape_str());
    }
    auto dst = grads_[idx].mutable_data();
    auto src = g.data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

void Tape::accumulate(std::int64_t node, Tensor&& g) {
    if (node < 0) return;
    const auto idx = static_cast<std::size_t>(node);
    if (!grads_[idx].defined()) {
        grads_[idx] = std::move(g);
        return;
    }
    accumulate(node, static_cast<const Tensor&>(g));
}

Tape* common_tape(std::initializer_list<const Tensor*> args) {
    Tape* tape = nullptr;
    for (const Tensor* t : args) {
        if (!t || !t->on_tape()) continue;
        if (tape && t->tape() != tape) {
            throw ContractViolation("operands live on different tapes");
        }
        tape = t->tape();
    }
    return tape;
}

} // namespace sparsedyn
