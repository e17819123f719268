#include "fust/numerics/autograd.hpp"

#include <unordered_set>

namespace fust {

Var Var::constant(Tensor value) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    return Var(std::move(n));
}

Var Var::leaf(Tensor value) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->requires_grad = true;
    return Var(std::move(n));
}

Var Var::bind(Parameter& param) {
    auto n = std::make_shared<Node>();
    n->value = param.value;
    n->requires_grad = param.trainable;
    n->param = &param;
    return Var(std::move(n));
}

Var make_op(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> backward_fn) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    for (auto& in : inputs) {
        n->requires_grad = n->requires_grad || in.requires_grad();
        n->inputs.push_back(in.ptr());
    }
    if (n->requires_grad) n->backward_fn = std::move(backward_fn);
    return Var(std::move(n));
}

void backward(const Var& loss) {
    if (!loss.valid() || loss.value().size() != 1) {
        throw ContractError("backward() needs a scalar loss, got shape " +
                            (loss.valid() ? shape_str(loss.shape()) : std::string("<null>")));
    }

    // Iterative post-order DFS gives a topological order (inputs first).
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, std::size_t>> stack{{&loss.node(), 0}};
    seen.insert(&loss.node());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->inputs.size()) {
            Node* child = node->inputs[next++].get();
            if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    for (Node* n : order) {
        n->grad = Tensor(n->value.shape(), 0.0);
        if (n->param) n->param->grad = Tensor(n->param->value.shape(), 0.0);
    }
    loss.node().grad[0] = 1.0;

    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward_fn) n->backward_fn(*n);
        if (n->param) {
            auto& dst = n->param->grad.storage();
            const auto& src = n->grad.storage();
            for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
        }
    }
}

} // namespace fust
