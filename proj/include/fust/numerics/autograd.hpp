#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "fust/numerics/tensor.hpp"

namespace fust {

// A named trainable (or frozen) tensor owned by a layer.
struct Parameter {
    std::string name;
    Tensor value;
    Tensor grad;
    bool trainable = true;

    Parameter() = default;
    Parameter(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)), grad(value.shape()) {}
};

struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    Parameter* param = nullptr;
    std::vector<std::shared_ptr<Node>> inputs;
    // Reads this node's grad and adds contributions into the inputs' grads.
    std::function<void(Node&)> backward_fn;
};

// Handle to a node of the recorded computation graph.
class Var {
public:
    Var() = default;

    static Var constant(Tensor value);
    static Var leaf(Tensor value);
    // Leaf whose gradient is written back into the parameter by backward().
    static Var bind(Parameter& param);

    const Tensor& value() const { return node_->value; }
    const Tensor& grad() const { return node_->grad; }
    const Shape& shape() const { return node_->value.shape(); }
    bool requires_grad() const { return node_ && node_->requires_grad; }
    bool valid() const { return static_cast<bool>(node_); }

    Node& node() const { return *node_; }
    const std::shared_ptr<Node>& ptr() const { return node_; }

private:
    explicit Var(std::shared_ptr<Node> n) : node_(std::move(n)) {}
    friend Var make_op(Tensor, std::vector<Var>, std::function<void(Node&)>);

    std::shared_ptr<Node> node_;
};

// Record an operation. backward_fn is dropped when no input needs a gradient.
Var make_op(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> backward_fn);

// Reverse-mode sweep from a scalar loss. Gradients of every reachable node and
// bound parameter are overwritten, never accumulated across calls.
void backward(const Var& loss);

} // namespace fust
