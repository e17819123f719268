#pragma once

#include <map>
#include <string>
#include <vector>

#include "fust/numerics/autograd.hpp"

namespace fust {

struct SgdConfig {
    double learning_rate = 0.05;
    double momentum = 0.9;
    double weight_decay = 0.0;
};

// SGD with heavy-ball momentum and L2 weight decay. Velocity buffers are keyed
// by parameter name and created lazily with the parameter's shape.
class Sgd {
public:
    explicit Sgd(SgdConfig cfg = {}) : cfg_(cfg) {}

    const SgdConfig& config() const { return cfg_; }

    // velocity <- momentum*velocity + grad + wd*param;  param <- param - lr*lr_scale*velocity
    void step(std::vector<Parameter*> params, double lr_scale = 1.0);

    const Tensor* velocity(const std::string& name) const;

private:
    SgdConfig cfg_;
    std::map<std::string, Tensor> velocity_;
};

} // namespace fust
