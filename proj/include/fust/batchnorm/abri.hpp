#pragma once

#include <variant>

#include "fust/batchnorm/batchnorm.hpp"

namespace fust::bn {

// Adaptive BatchNorm re-initialization: an original layer blended per channel
// with a freshly initialized one,
//   y_k = alpha_k * BN_ori(x)_k + (1 - alpha_k) * BN_add(x)_k.
// Each inner layer keeps its own running statistics. alpha is unconstrained.
struct ABRiLayer {
    BatchNormLayer ori;
    BatchNormLayer add;
    Parameter alpha;

    std::size_t channels() const { return ori.channels(); }
    void validate() const;
};

using NormLayer = std::variant<BatchNormLayer, ABRiLayer>;

inline constexpr double default_init_alpha = 0.5;

// The original layer is copied unmodified (parameter names included); the
// additional layer is named "<name>.add" and alpha "<name>.alpha".
ABRiLayer abri_wrap(const BatchNormLayer& layer, double init_alpha = default_init_alpha);
// Rejects a layer that is already wrapped.
ABRiLayer abri_wrap(const NormLayer& layer, double init_alpha = default_init_alpha);

struct ABRiForward {
    Tensor y;
    std::optional<BNCache> ori_cache;
    std::optional<BNCache> add_cache;
};

ABRiForward abri_forward(const Tensor& x, ABRiLayer& layer, Mode mode);

// Recorded version; gradients reach x, alpha and both inner layers.
Var abri(const Var& x, ABRiLayer& layer, Mode mode);

struct ParamCount {
    std::size_t original = 0;   // 2C: gamma, beta of the original layer
    std::size_t additional = 0; // 3C: gamma_add, beta_add, alpha
    double ratio = 0.0;
};

ParamCount abri_param_count(const ABRiLayer& layer);

// Dispatch on the layer kind.
Var norm_forward(const Var& x, NormLayer& layer, Mode mode);
std::size_t norm_channels(const NormLayer& layer);
bool is_abri(const NormLayer& layer);
// The layer whose (gamma, beta) carry the pre-trained values.
const BatchNormLayer& original_of(const NormLayer& layer);
BatchNormLayer& original_of(NormLayer& layer);

} // namespace fust::bn
