#pragma once

#include <vector>

#include "fust/numerics/tensor.hpp"

namespace fust {

struct Metrics {
    double accuracy = 0.0;
    double map = 0.0;
    // Classes with no positive label; they are left out of the mAP average.
    std::vector<int> classes_without_positives;
    bool warning() const { return !classes_without_positives.empty(); }
};

// Index of the row maximum; ties go to the lowest index.
int argmax_row(const Tensor& scores, std::size_t row);

// Average precision of one class under a descending-score ranking. Equal
// scores are ranked by sample index.
double average_precision(const std::vector<double>& scores, const std::vector<bool>& positive);

// probabilities: NxK with rows summing to 1 (within 1e-6).
Metrics compute_metrics(const Tensor& probabilities, const std::vector<int>& labels);

} // namespace fust
