#include "fust/batchnorm/batchnorm.hpp"

#include <cmath>
#include <memory>

namespace fust::bn {
namespace {

void check_input(const Tensor& x, const BatchNormLayer& layer) {
    if (x.rank() != 4) throw DimensionError("batch_norm: expected NCHW input, got " + shape_str(x.shape()));
    if (x.dim(1) != layer.channels()) {
        throw DimensionError("batch_norm '" + layer.name + "': input axis 1 (" + std::to_string(x.dim(1)) +
                             ") vs layer channels (" + std::to_string(layer.channels()) + ")");
    }
}

double inv_std(double var, double eps, const std::string& name, std::size_t channel) {
    const double denom = var + eps;
    if (std::isnan(denom)) {
        throw NonFiniteError("batch_norm '" + name + "': non-finite statistics on channel " + std::to_string(channel));
    }
    if (!(denom > 0.0)) {
        throw DivisionHazard("batch_norm '" + name + "': zero variance with eps=" + std::to_string(eps) +
                             " on channel " + std::to_string(channel));
    }
    return 1.0 / std::sqrt(denom);
}

} // namespace

BatchNormLayer BatchNormLayer::fresh(std::string name, std::size_t channels, double eps, double momentum) {
    BatchNormLayer layer;
    layer.gamma = Parameter(name + ".gamma", Tensor({channels}, 1.0));
    layer.beta = Parameter(name + ".beta", Tensor({channels}, 0.0));
    layer.running_mean = Tensor({channels}, 0.0);
    layer.running_var = Tensor({channels}, 1.0);
    layer.eps = eps;
    layer.momentum = momentum;
    layer.name = std::move(name);
    return layer;
}

void BatchNormLayer::validate() const {
    const std::size_t c = channels();
    if (beta.value.size() != c || running_mean.size() != c || running_var.size() != c) {
        throw DimensionError("batch_norm '" + name + "': per-channel arrays disagree in length");
    }
    if (eps < 0.0) throw ContractError("batch_norm '" + name + "': eps must be >= 0");
    if (momentum < 0.0 || momentum > 1.0) throw ContractError("batch_norm '" + name + "': momentum outside [0,1]");
    for (double v : running_var.values()) {
        if (v < 0.0) throw ContractError("batch_norm '" + name + "': negative running variance");
    }
}

BNForward bn_forward(const Tensor& x, BatchNormLayer& layer, Mode mode) {
    check_input(x, layer);
    const std::size_t n_batch = x.dim(0), channels = x.dim(1), plane = x.dim(2) * x.dim(3);
    const std::size_t m = n_batch * plane;
    const double* g = layer.gamma.value.data();
    const double* b = layer.beta.value.data();

    BNForward out{Tensor(x.shape(), 0.0), std::nullopt};
    if (mode == Mode::eval) {
        for (std::size_t c = 0; c < channels; ++c) {
            const double mu = layer.running_mean[c];
            const double istd = inv_std(layer.running_var[c], layer.eps, layer.name, c);
            for (std::size_t n = 0; n < n_batch; ++n) {
                const std::size_t base = (n * channels + c) * plane;
                for (std::size_t i = base; i < base + plane; ++i) out.y[i] = g[c] * ((x[i] - mu) * istd) + b[c];
            }
        }
        return out;
    }

    if (m < 2) {
        throw ContractError("batch_norm '" + layer.name + "': train mode needs N*H*W >= 2 per channel, got " +
                            std::to_string(m));
    }
    BNCache cache{std::vector<double>(channels), std::vector<double>(channels), Tensor(x.shape(), 0.0), x, m};
    const double inv_m = 1.0 / static_cast<double>(m);
    for (std::size_t c = 0; c < channels; ++c) {
        double s = 0.0;
        for (std::size_t n = 0; n < n_batch; ++n) {
            const std::size_t base = (n * channels + c) * plane;
            for (std::size_t i = base; i < base + plane; ++i) s += x[i];
        }
        const double mu = s * inv_m;
        double ss = 0.0;
        for (std::size_t n = 0; n < n_batch; ++n) {
            const std::size_t base = (n * channels + c) * plane;
            for (std::size_t i = base; i < base + plane; ++i) ss += (x[i] - mu) * (x[i] - mu);
        }
        const double var = ss * inv_m;
        const double istd = inv_std(var, layer.eps, layer.name, c);
        for (std::size_t n = 0; n < n_batch; ++n) {
            const std::size_t base = (n * channels + c) * plane;
            for (std::size_t i = base; i < base + plane; ++i) {
                cache.xhat[i] = (x[i] - mu) * istd;
                out.y[i] = g[c] * cache.xhat[i] + b[c];
            }
        }
        cache.mean[c] = mu;
        cache.var[c] = var;
        layer.running_mean[c] = (1.0 - layer.momentum) * layer.running_mean[c] + layer.momentum * mu;
        layer.running_var[c] = (1.0 - layer.momentum) * layer.running_var[c] + layer.momentum * var;
    }
    out.cache = std::move(cache);
    return out;
}

BNGrads bn_backward(const Tensor& dy, const BNCache& cache, const BatchNormLayer& layer) {
    const Tensor& x = cache.input;
    if (cache.mean.size() != layer.channels() || x.dim(1) != layer.channels()) {
        throw DimensionError("bn_backward '" + layer.name + "': cache has " + std::to_string(cache.mean.size()) +
                             " channels, layer has " + std::to_string(layer.channels()));
    }
    require_same_shape(dy, x, "bn_backward dy vs cached input");
    const std::size_t n_batch = x.dim(0), channels = x.dim(1), plane = x.dim(2) * x.dim(3);
    const double m = static_cast<double>(cache.batch_size);

    BNGrads g{Tensor(x.shape(), 0.0), Tensor({channels}, 0.0), Tensor({channels}, 0.0)};
    for (std::size_t c = 0; c < channels; ++c) {
        const double gamma = layer.gamma.value[c];
        const double mu = cache.mean[c];
        const double var_eps = cache.var[c] + layer.eps;
        const double istd = 1.0 / std::sqrt(var_eps);
        double dvar = 0.0, dmu = 0.0, dgamma = 0.0, dbeta = 0.0;
        for (std::size_t n = 0; n < n_batch; ++n) {
            const std::size_t base = (n * channels + c) * plane;
            for (std::size_t i = base; i < base + plane; ++i) {
                const double dxhat = dy[i] * gamma;
                dvar += dxhat * (x[i] - mu);
                dmu += dxhat;
                dgamma += dy[i] * cache.xhat[i];
                dbeta += dy[i];
            }
        }
        dvar *= -0.5 * istd * istd * istd;
        dmu *= -istd;
        for (std::size_t n = 0; n < n_batch; ++n) {
            const std::size_t base = (n * channels + c) * plane;
            for (std::size_t i = base; i < base + plane; ++i) {
                const double dxhat = dy[i] * gamma;
                g.dx[i] = dxhat * istd + dvar * 2.0 * (x[i] - mu) / m + dmu / m;
            }
        }
        g.dgamma[c] = dgamma;
        g.dbeta[c] = dbeta;
    }
    return g;
}

Var batch_norm(const Var& x, BatchNormLayer& layer, Mode mode) {
    BNForward fwd = bn_forward(x.value(), layer, mode);
    Var gamma = Var::bind(layer.gamma);
    Var beta = Var::bind(layer.beta);

    if (mode == Mode::train) {
        auto cache = std::make_shared<BNCache>(std::move(*fwd.cache));
        return make_op(std::move(fwd.y), {x, gamma, beta}, [cache, layer_name = layer.name, eps = layer.eps](Node& self) {
            auto& xi = *self.inputs[0];
            auto& gi = *self.inputs[1];
            auto& bi = *self.inputs[2];
            BatchNormLayer view;
            view.name = layer_name;
            view.eps = eps;
            view.gamma.value = gi.value;
            BNGrads g = bn_backward(self.grad, *cache, view);
            if (xi.requires_grad)
                for (std::size_t i = 0; i < g.dx.size(); ++i) xi.grad[i] += g.dx[i];
            if (gi.requires_grad)
                for (std::size_t i = 0; i < g.dgamma.size(); ++i) gi.grad[i] += g.dgamma[i];
            if (bi.requires_grad)
                for (std::size_t i = 0; i < g.dbeta.size(); ++i) bi.grad[i] += g.dbeta[i];
        });
    }

    // Eval mode: an affine map with frozen statistics.
    std::vector<double> mean(layer.running_mean.storage());
    std::vector<double> istd(layer.channels());
    for (std::size_t c = 0; c < istd.size(); ++c) istd[c] = 1.0 / std::sqrt(layer.running_var[c] + layer.eps);
    return make_op(std::move(fwd.y), {x, gamma, beta}, [mean, istd](Node& self) {
        auto& xi = *self.inputs[0];
        auto& gi = *self.inputs[1];
        auto& bi = *self.inputs[2];
        const std::size_t n_batch = xi.value.dim(0), channels = xi.value.dim(1);
        const std::size_t plane = xi.value.dim(2) * xi.value.dim(3);
        for (std::size_t n = 0; n < n_batch; ++n) {
            for (std::size_t c = 0; c < channels; ++c) {
                const std::size_t base = (n * channels + c) * plane;
                for (std::size_t i = base; i < base + plane; ++i) {
                    const double dy = self.grad[i];
                    if (xi.requires_grad) xi.grad[i] += dy * gi.value[c] * istd[c];
                    if (gi.requires_grad) gi.grad[c] += dy * (xi.value[i] - mean[c]) * istd[c];
                    if (bi.requires_grad) bi.grad[c] += dy;
                }
            }
        }
    });
}

} // namespace fust::bn
