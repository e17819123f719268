#include "fust/numerics/optim.hpp"

#include <cmath>

namespace fust {

void Sgd::step(std::vector<Parameter*> params, double lr_scale) {
    for (Parameter* p : params) {
        if (!p->trainable) continue;
        if (p->grad.shape() != p->value.shape()) {
            throw DimensionError("sgd: gradient of '" + p->name + "' has shape " + shape_str(p->grad.shape()) +
                                 ", parameter " + shape_str(p->value.shape()));
        }
        for (double g : p->grad.values()) {
            if (!std::isfinite(g)) throw NonFiniteError("sgd: non-finite gradient in parameter '" + p->name + "'");
        }
    }
    const double lr = cfg_.learning_rate * lr_scale;
    for (Parameter* p : params) {
        if (!p->trainable) continue;
        auto it = velocity_.try_emplace(p->name, p->value.shape(), 0.0).first;
        Tensor& v = it->second;
        for (std::size_t i = 0; i < v.size(); ++i) {
            v[i] = cfg_.momentum * v[i] + p->grad[i] + cfg_.weight_decay * p->value[i];
            p->value[i] -= lr * v[i];
        }
    }
}

const Tensor* Sgd::velocity(const std::string& name) const {
    auto it = velocity_.find(name);
    return it == velocity_.end() ? nullptr : &it->second;
}

} // namespace fust
