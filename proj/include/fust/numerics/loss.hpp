#pragma once

#include <vector>

#include "fust/numerics/autograd.hpp"

namespace fust {

struct CrossEntropyResult {
    Var loss;                       // mean negative log-softmax of the true class
    std::vector<double> confidence; // softmax probability of the true class, per row
};

// logits: NxK, labels in [0, K).
CrossEntropyResult cross_entropy_confidence(const Var& logits, const std::vector<int>& labels);

// Row-wise softmax of an NxK tensor.
Tensor softmax_rows(const Tensor& logits);

} // namespace fust
