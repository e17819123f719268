#include "fust/numerics/loss.hpp"

#include <cmath>
#include <string>

namespace fust {

Tensor softmax_rows(const Tensor& logits) {
    if (logits.rank() != 2) throw DimensionError("softmax_rows: expected NxK, got " + shape_str(logits.shape()));
    const std::size_t n_rows = logits.dim(0), k = logits.dim(1);
    Tensor out(logits.shape(), 0.0);
    for (std::size_t n = 0; n < n_rows; ++n) {
        const double* row = logits.data() + n * k;
        double peak = row[0];
        for (std::size_t j = 1; j < k; ++j) peak = std::max(peak, row[j]);
        double z = 0.0;
        for (std::size_t j = 0; j < k; ++j) z += std::exp(row[j] - peak);
        for (std::size_t j = 0; j < k; ++j) out[n * k + j] = std::exp(row[j] - peak) / z;
    }
    return out;
}

CrossEntropyResult cross_entropy_confidence(const Var& logits, const std::vector<int>& labels) {
    const Tensor& z = logits.value();
    if (z.rank() != 2) throw DimensionError("cross_entropy: logits must be NxK, got " + shape_str(z.shape()));
    const std::size_t n_rows = z.dim(0), k = z.dim(1);
    if (labels.size() != n_rows) {
        throw DimensionError("cross_entropy: logits axis 0 (" + std::to_string(n_rows) + ") vs labels (" +
                             std::to_string(labels.size()) + ")");
    }
    for (std::size_t n = 0; n < n_rows; ++n) {
        if (labels[n] < 0 || static_cast<std::size_t>(labels[n]) >= k) {
            throw IndexError("cross_entropy: label " + std::to_string(labels[n]) + " at row " + std::to_string(n) +
                             " outside [0, " + std::to_string(k) + ")");
        }
    }

    Tensor probs = softmax_rows(z);
    CrossEntropyResult result;
    result.confidence.resize(n_rows);
    double total = 0.0;
    for (std::size_t n = 0; n < n_rows; ++n) {
        const double* row = z.data() + n * k;
        double peak = row[0];
        for (std::size_t j = 1; j < k; ++j) peak = std::max(peak, row[j]);
        double zsum = 0.0;
        for (std::size_t j = 0; j < k; ++j) zsum += std::exp(row[j] - peak);
        total += -(row[labels[n]] - peak - std::log(zsum));
        result.confidence[n] = probs[n * k + labels[n]];
    }
    const double inv_n = 1.0 / static_cast<double>(n_rows);
    result.loss = make_op(Tensor::scalar(total * inv_n), {logits}, [probs, labels, k, inv_n](Node& self) {
        auto& in = *self.inputs[0];
        const double g = self.grad[0] * inv_n;
        for (std::size_t n = 0; n < labels.size(); ++n) {
            for (std::size_t j = 0; j < k; ++j) {
                const double target = static_cast<std::size_t>(labels[n]) == j ? 1.0 : 0.0;
                in.grad[n * k + j] += g * (probs[n * k + j] - target);
            }
        }
    });
    return result;
}

} // namespace fust
