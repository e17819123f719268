#include "fust/batchnorm/abri.hpp"

#include "fust/numerics/ops.hpp"

namespace fust::bn {

void ABRiLayer::validate() const {
    ori.validate();
    add.validate();
    if (add.channels() != ori.channels() || alpha.value.size() != ori.channels()) {
        throw DimensionError("abri '" + ori.name + "': inner layers and alpha disagree in channel count");
    }
}

ABRiLayer abri_wrap(const BatchNormLayer& layer, double init_alpha) {
    layer.validate();
    const std::size_t c = layer.channels();
    ABRiLayer out;
    out.ori = layer;
    out.add = BatchNormLayer::fresh(layer.name + ".add", c, layer.eps, layer.momentum);
    out.alpha = Parameter(layer.name + ".alpha", Tensor({c}, init_alpha));
    return out;
}

ABRiLayer abri_wrap(const NormLayer& layer, double init_alpha) {
    if (const auto* plain = std::get_if<BatchNormLayer>(&layer)) return abri_wrap(*plain, init_alpha);
    throw ContractError("abri_wrap: layer '" + std::get<ABRiLayer>(layer).ori.name + "' is already wrapped");
}

ABRiForward abri_forward(const Tensor& x, ABRiLayer& layer, Mode mode) {
    layer.validate();
    BNForward a = bn_forward(x, layer.ori, mode);
    BNForward b = bn_forward(x, layer.add, mode);
    const std::size_t n_batch = x.dim(0), channels = x.dim(1), plane = x.dim(2) * x.dim(3);
    ABRiForward out{Tensor(x.shape(), 0.0), std::move(a.cache), std::move(b.cache)};
    for (std::size_t n = 0; n < n_batch; ++n) {
        for (std::size_t c = 0; c < channels; ++c) {
            const double w = layer.alpha.value[c];
            const std::size_t base = (n * channels + c) * plane;
            for (std::size_t i = base; i < base + plane; ++i) out.y[i] = w * a.y[i] + (1.0 - w) * b.y[i];
        }
    }
    return out;
}

Var abri(const Var& x, ABRiLayer& layer, Mode mode) {
    layer.validate();
    Var from_ori = batch_norm(x, layer.ori, mode);
    Var from_add = batch_norm(x, layer.add, mode);
    return ops::channel_blend(from_ori, from_add, Var::bind(layer.alpha));
}

ParamCount abri_param_count(const ABRiLayer& layer) {
    ParamCount pc;
    pc.original = layer.ori.gamma.value.size() + layer.ori.beta.value.size();
    pc.additional = layer.add.gamma.value.size() + layer.add.beta.value.size() + layer.alpha.value.size();
    pc.ratio = static_cast<double>(pc.additional) / static_cast<double>(pc.original);
    return pc;
}

Var norm_forward(const Var& x, NormLayer& layer, Mode mode) {
    if (auto* plain = std::get_if<BatchNormLayer>(&layer)) return batch_norm(x, *plain, mode);
    return abri(x, std::get<ABRiLayer>(layer), mode);
}

std::size_t norm_channels(const NormLayer& layer) {
    return original_of(layer).channels();
}

bool is_abri(const NormLayer& layer) {
    return std::holds_alternative<ABRiLayer>(layer);
}

const BatchNormLayer& original_of(const NormLayer& layer) {
    if (const auto* plain = std::get_if<BatchNormLayer>(&layer)) return *plain;
    return std::get<ABRiLayer>(layer).ori;
}

BatchNormLayer& original_of(NormLayer& layer) {
    if (auto* plain = std::get_if<BatchNormLayer>(&layer)) return *plain;
    return std::get<ABRiLayer>(layer).ori;
}

} // namespace fust::bn
