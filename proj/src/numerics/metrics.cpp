#include "fust/numerics/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace fust {

int argmax_row(const Tensor& scores, std::size_t row) {
    const std::size_t k = scores.dim(1);
    const double* r = scores.data() + row * k;
    std::size_t best = 0;
    for (std::size_t j = 1; j < k; ++j) {
        if (r[j] > r[best]) best = j;
    }
    return static_cast<int>(best);
}

double average_precision(const std::vector<double>& scores, const std::vector<bool>& positive) {
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    double hits = 0.0, acc = 0.0;
    for (std::size_t rank = 0; rank < order.size(); ++rank) {
        if (positive[order[rank]]) {
            hits += 1.0;
            acc += hits / static_cast<double>(rank + 1);
        }
    }
    return hits > 0.0 ? acc / hits : 0.0;
}

Metrics compute_metrics(const Tensor& probabilities, const std::vector<int>& labels) {
    if (probabilities.rank() != 2) {
        throw DimensionError("compute_metrics: expected NxK, got " + shape_str(probabilities.shape()));
    }
    const std::size_t n_rows = probabilities.dim(0), k = probabilities.dim(1);
    if (labels.size() != n_rows) throw DimensionError("compute_metrics: probabilities axis 0 vs labels length");
    if (n_rows == 0) throw ContractError("compute_metrics: empty batch");
    for (std::size_t n = 0; n < n_rows; ++n) {
        double s = 0.0;
        for (std::size_t j = 0; j < k; ++j) s += probabilities[n * k + j];
        if (std::abs(s - 1.0) > 1e-6) {
            throw ContractError("compute_metrics: row " + std::to_string(n) + " sums to " + std::to_string(s));
        }
        if (labels[n] < 0 || static_cast<std::size_t>(labels[n]) >= k) {
            throw IndexError("compute_metrics: label out of range at row " + std::to_string(n));
        }
    }

    Metrics m;
    std::size_t correct = 0;
    for (std::size_t n = 0; n < n_rows; ++n) correct += argmax_row(probabilities, n) == labels[n] ? 1 : 0;
    m.accuracy = static_cast<double>(correct) / static_cast<double>(n_rows);

    double ap_sum = 0.0;
    std::size_t counted = 0;
    std::vector<double> scores(n_rows);
    std::vector<bool> positive(n_rows);
    for (std::size_t j = 0; j < k; ++j) {
        bool any = false;
        for (std::size_t n = 0; n < n_rows; ++n) {
            scores[n] = probabilities[n * k + j];
            positive[n] = static_cast<std::size_t>(labels[n]) == j;
            any = any || positive[n];
        }
        if (!any) {
            m.classes_without_positives.push_back(static_cast<int>(j));
            continue;
        }
        ap_sum += average_precision(scores, positive);
        ++counted;
    }
    m.map = counted ? ap_sum / static_cast<double>(counted) : 0.0;
    return m;
}

} // namespace fust
