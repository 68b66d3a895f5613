#include "nacforge/tensor.hpp"

#include <cmath>

#include "nacforge/errors.hpp"

namespace nac {

Tensor::Tensor(Shape d, double fill) : dims(std::move(d)) {
    data.assign(static_cast<std::size_t>(shape_numel(dims)), fill);
}

Tensor::Tensor(Shape d, std::vector<double> values) : dims(std::move(d)), data(std::move(values)) {
    if (static_cast<std::int64_t>(data.size()) != shape_numel(dims)) {
        throw ShapeMismatch("tensor of shape " + shape_string(dims) + " given " + std::to_string(data.size()) +
                            " values");
    }
}

bool all_finite(const Tensor& t) {
    for (double v : t.data) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

Tape::Id Tape::constant(Tensor value) {
    nodes_.push_back({std::move(value), {}, {}, false});
    return nodes_.size() - 1;
}

Tape::Id Tape::parameter(Tensor value) {
    nodes_.push_back({std::move(value), {}, {}, recording_});
    return nodes_.size() - 1;
}

Tape::Id Tape::record(Tensor value, std::initializer_list<Id> parents, BackwardFn fn) {
    if (!all_finite(value)) {
        throw NumericOverflow("non-finite value produced at tape node " + std::to_string(nodes_.size()));
    }
    bool needs = false;
    if (recording_) {
        for (Id p : parents) needs = needs || nodes_[p].requires_grad;
    }
    nodes_.push_back({std::move(value), {}, needs ? std::move(fn) : BackwardFn{}, needs});
    return nodes_.size() - 1;
}

Tensor Tape::grad(Id id) const {
    const Node& n = nodes_[id];
    if (n.grad.data.empty()) return Tensor(n.value.dims, 0.0);
    return n.grad;
}

Tensor& Tape::grad_buffer(Id id) {
    Node& n = nodes_[id];
    if (n.grad.data.empty()) n.grad = Tensor(n.value.dims, 0.0);
    return n.grad;
}

void Tape::backward(Id loss) {
    if (!recording_ || loss >= nodes_.size() || !nodes_[loss].requires_grad) {
        throw GraphNotRecorded("backward() needs a recorded node that depends on a parameter");
    }
    if (nodes_[loss].value.size() != 1) {
        throw ShapeMismatch("backward() target must be a scalar, got " + shape_string(nodes_[loss].value.dims));
    }
    for (auto& n : nodes_) n.grad = Tensor();
    grad_buffer(loss)[0] = 1.0;
    for (Id i = loss + 1; i-- > 0;) {
        Node& n = nodes_[i];
        if (n.fn && !n.grad.data.empty()) n.fn(*this, i);
    }
}

}  // namespace nac
