#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "nacforge/arch_ir.hpp"

namespace nac {

// Dense row-major array of doubles.
struct Tensor {
    Shape dims;
    std::vector<double> data;

    Tensor() = default;
    explicit Tensor(Shape d, double fill = 0.0);
    Tensor(Shape d, std::vector<double> values);

    std::size_t size() const { return data.size(); }
    std::size_t rank() const { return dims.size(); }
    int dim(std::size_t i) const { return dims.at(i); }
    double* ptr() { return data.data(); }
    const double* ptr() const { return data.data(); }
    double& operator[](std::size_t i) { return data[i]; }
    double operator[](std::size_t i) const { return data[i]; }

    bool operator==(const Tensor&) const = default;
};

bool all_finite(const Tensor& t);

// Reverse-mode tape. Nodes are appended in evaluation order; backward()
// walks them in reverse, accumulating into lazily allocated gradients.
class Tape {
public:
    using Id = std::size_t;
    using BackwardFn = std::function<void(Tape&, Id)>;

    explicit Tape(bool recording = true) : recording_(recording) {}

    Id constant(Tensor value);
    Id parameter(Tensor value);

    // Appends an op result. Throws NumericOverflow on non-finite values.
    Id record(Tensor value, std::initializer_list<Id> parents, BackwardFn fn);

    const Tensor& value(Id id) const { return nodes_[id].value; }
    bool requires_grad(Id id) const { return nodes_[id].requires_grad; }
    bool recording() const { return recording_; }
    std::size_t size() const { return nodes_.size(); }

    // Gradient of the last backward() target w.r.t. node `id`; zeros if the
    // node received no gradient.
    Tensor grad(Id id) const;

    // Accumulation buffer, allocated on first use. For op backward functions.
    Tensor& grad_buffer(Id id);
    bool has_grad(Id id) const { return !nodes_[id].grad.data.empty(); }

    // Seeds d(loss)/d(loss) = 1 for a scalar node and propagates.
    void backward(Id loss);

private:
    struct Node {
        Tensor value;
        Tensor grad;
        BackwardFn fn;
        bool requires_grad = false;
    };
    std::vector<Node> nodes_;
    bool recording_;
};

}  // namespace nac
