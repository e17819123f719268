#include "fust/fusion/probe.hpp"

#include <cmath>
#include <numeric>

#include "fust/data/checkpoint.hpp"
#include "fust/numerics/loss.hpp"
#include "fust/numerics/metrics.hpp"
#include "fust/numerics/ops.hpp"
#include "fust/numerics/optim.hpp"
#include "fust/numerics/rng.hpp"

namespace fust::fusion {

Tensor extract_features(model::Encoder& encoder, const data::Dataset& ds, data::Modality m) {
    const std::size_t d = encoder.feature_dim();
    Tensor out({ds.size(), d}, 0.0);
    for (std::size_t start = 0; start < ds.size(); start += 128) {
        std::vector<std::size_t> idx(std::min(ds.size(), start + 128) - start);
        std::iota(idx.begin(), idx.end(), start);
        Tensor x = data::adapt_input(data::stack_inputs(ds, idx, m), encoder.config().input_shape);
        Tensor f = encoder.features(Var::constant(std::move(x)), model::Mode::eval).value();
        std::copy(f.storage().begin(), f.storage().end(), out.storage().begin() + static_cast<std::ptrdiff_t>(start * d));
    }
    return out;
}

double linear_probe_features(const Tensor& train_features, const std::vector<int>& train_labels,
                             const Tensor& test_features, const std::vector<int>& test_labels, std::size_t n_classes,
                             const ProbeConfig& cfg) {
    if (train_features.rank() != 2 || test_features.rank() != 2) {
        throw DimensionError("linear_probe: features must be N x D");
    }
    const std::size_t d = train_features.dim(1);
    if (test_features.dim(1) != d) {
        throw ContractError("linear_probe: train features have dimension " + std::to_string(d) + ", test features " +
                            std::to_string(test_features.dim(1)));
    }
    const std::size_t n = train_features.dim(0);
    if (n != train_labels.size() || test_features.dim(0) != test_labels.size()) {
        throw ContractError("linear_probe: feature rows and label counts differ");
    }
    if (n == 0 || test_labels.empty()) throw ContractError("linear_probe: empty split");
    if (cfg.epochs == 0 || cfg.batch_size == 0) throw ContractError("linear_probe: epochs and batch_size must be >= 1");

    std::vector<double> mu(d, 0.0), sd(d, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) mu[j] += train_features[i * d + j];
    for (auto& v : mu) v /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) sd[j] += std::pow(train_features[i * d + j] - mu[j], 2);
    for (auto& v : sd) {
        v = std::sqrt(v / static_cast<double>(n));
        if (v < 1e-12) v = 1.0;
    }
    auto standardize = [&](const Tensor& f) {
        Tensor out = f;
        for (std::size_t i = 0; i < f.dim(0); ++i)
            for (std::size_t j = 0; j < d; ++j) out[i * d + j] = (f[i * d + j] - mu[j]) / sd[j];
        return out;
    };
    const Tensor xs = standardize(train_features);
    const Tensor xt = standardize(test_features);

    Parameter w("probe.weight", Tensor({n_classes, d}, 0.0));
    Parameter b("probe.bias", Tensor({n_classes}, 0.0));
    Sgd opt({cfg.learning_rate, cfg.momentum, cfg.weight_decay});
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng rng = keyed_rng({cfg.seed, tag(Stream::probe), epoch});
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t start = 0; start < n; start += cfg.batch_size) {
            const std::size_t end = std::min(n, start + cfg.batch_size);
            Tensor xb({end - start, d}, 0.0);
            std::vector<int> yb;
            for (std::size_t i = start; i < end; ++i) {
                std::copy_n(xs.data() + order[i] * d, d, xb.data() + (i - start) * d);
                yb.push_back(train_labels[order[i]]);
            }
            auto ce = cross_entropy_confidence(ops::linear(Var::constant(std::move(xb)), Var::bind(w), Var::bind(b)), yb);
            backward(ce.loss);
            opt.step({&w, &b});
        }
    }
    Tensor logits = ops::linear(Var::constant(xt), Var::constant(w.value), Var::constant(b.value)).value();
    std::size_t correct = 0;
    for (std::size_t i = 0; i < test_labels.size(); ++i) correct += argmax_row(logits, i) == test_labels[i] ? 1 : 0;
    return static_cast<double>(correct) / static_cast<double>(test_labels.size());
}

double linear_probe(model::Encoder& encoder, const data::Dataset& train, const data::Dataset& test, data::Modality m,
                    const ProbeConfig& cfg) {
    const std::string before = data::state_hash(encoder);
    const Tensor ftrain = extract_features(encoder, train, m);
    const Tensor ftest = extract_features(encoder, test, m);
    if (data::state_hash(encoder) != before) throw ContractError("linear_probe: encoder state changed while probing");
    return linear_probe_features(ftrain, train.labels(), ftest, test.labels(), train.n_classes, cfg);
}

} // namespace fust::fusion
