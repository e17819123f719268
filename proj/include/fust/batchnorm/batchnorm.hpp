#pragma once

#include <optional>
#include <string>
#include <vector>

#include "fust/numerics/autograd.hpp"

namespace fust::bn {

enum class Mode { train, eval };

struct BatchNormLayer {
    std::string name;
    Parameter gamma;
    Parameter beta;
    Tensor running_mean;
    Tensor running_var;
    double eps = 1e-5;
    double momentum = 0.1;

    // gamma=1, beta=0, running mean 0, running var 1.
    static BatchNormLayer fresh(std::string name, std::size_t channels, double eps = 1e-5, double momentum = 0.1);

    std::size_t channels() const { return gamma.value.size(); }
    void validate() const;
};

struct BNCache {
    std::vector<double> mean;
    std::vector<double> var; // biased: sums run over M
    Tensor xhat;
    Tensor input;
    std::size_t batch_size = 0; // M = N*H*W
};

struct BNForward {
    Tensor y;
    std::optional<BNCache> cache; // present in train mode
};

struct BNGrads {
    Tensor dx;
    Tensor dgamma;
    Tensor dbeta;
};

// y = gamma * (x - mu) / sqrt(var + eps) + beta per channel of an NCHW input.
// Train mode uses batch statistics and updates the running statistics in place;
// eval mode uses the running statistics.
BNForward bn_forward(const Tensor& x, BatchNormLayer& layer, Mode mode);

// Three-term gradient:
//   dL/dx = dL/dxhat / sqrt(var+eps) + dL/dvar * 2(x - mu)/M + dL/dmu / M
// with dL/dxhat = dy * gamma.
BNGrads bn_backward(const Tensor& dy, const BNCache& cache, const BatchNormLayer& layer);

// Recorded version of bn_forward; gradients reach x, gamma and beta.
Var batch_norm(const Var& x, BatchNormLayer& layer, Mode mode);

} // namespace fust::bn
