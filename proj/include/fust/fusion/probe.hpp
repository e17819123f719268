#pragma once

#include <cstdint>
#include <vector>

#include "fust/data/synthetic.hpp"
#include "fust/model/small_convnet.hpp"

namespace fust::fusion {

struct ProbeConfig {
    std::size_t epochs = 100;
    std::size_t batch_size = 64;
    double learning_rate = 0.1;
    double momentum = 0.9;
    double weight_decay = 1e-4;
    std::uint64_t seed = 0;
};

// Eval-mode pooled features of every sample, N x D.
Tensor extract_features(model::Encoder& encoder, const data::Dataset& ds, data::Modality m);

// Softmax-regression probe on fixed features, standardized with the training
// split's per-dimension mean and deviation. Returns test accuracy.
double linear_probe_features(const Tensor& train_features, const std::vector<int>& train_labels,
                             const Tensor& test_features, const std::vector<int>& test_labels, std::size_t n_classes,
                             const ProbeConfig& cfg);

// Probes a frozen encoder. The encoder's parameters and running statistics are
// hashed before and after; a difference is a contract violation.
double linear_probe(model::Encoder& encoder, const data::Dataset& train, const data::Dataset& test,
                    data::Modality m, const ProbeConfig& cfg);

} // namespace fust::fusion
