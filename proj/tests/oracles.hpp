#pragma once

// Test-only reference computations. Nothing here calls into the library's
// kernels, so agreement with them is independent evidence.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <vector>

#include "fust/numerics/tensor.hpp"

namespace oracle {

// Quintuple loop (n, o, oh, ow | c, kh, kw). Accumulation runs over
// (c, kh, kw) with padded taps skipped; bias is added last.
inline fust::Tensor conv2d(const fust::Tensor& x, const fust::Tensor& w, const fust::Tensor& b, std::size_t stride,
                           std::size_t pad) {
    const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const std::size_t O = w.dim(0), K = w.dim(2);
    const std::size_t Ho = (H + 2 * pad - K) / stride + 1, Wo = (W + 2 * pad - K) / stride + 1;
    fust::Tensor y({N, O, Ho, Wo}, 0.0);
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t o = 0; o < O; ++o)
            for (std::size_t oh = 0; oh < Ho; ++oh)
                for (std::size_t ow = 0; ow < Wo; ++ow) {
                    double acc = 0.0;
                    for (std::size_t c = 0; c < C; ++c)
                        for (std::size_t kh = 0; kh < K; ++kh)
                            for (std::size_t kw = 0; kw < K; ++kw) {
                                const long ih = static_cast<long>(oh * stride + kh) - static_cast<long>(pad);
                                const long iw = static_cast<long>(ow * stride + kw) - static_cast<long>(pad);
                                if (ih < 0 || iw < 0 || ih >= static_cast<long>(H) || iw >= static_cast<long>(W))
                                    continue;
                                acc += w.at(o, c, kh, kw) * x.at(n, c, ih, iw);
                            }
                    y.at(n, o, oh, ow) = b.empty() ? acc : acc + b[o];
                }
    return y;
}

// AP by definition: mean over positives of precision@rank(positive), ranking
// by descending score with index tie-break, computed by counting pairs.
inline double average_precision(const std::vector<double>& s, const std::vector<bool>& pos) {
    const std::size_t n = s.size();
    double total = 0.0;
    std::size_t npos = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (!pos[i]) continue;
        ++npos;
        std::size_t above = 0, pos_above = 0;
        for (std::size_t j = 0; j < n; ++j) {
            const bool ahead = s[j] > s[i] || (s[j] == s[i] && j < i);
            if (ahead || j == i) {
                ++above;
                if (pos[j]) ++pos_above;
            }
        }
        total += static_cast<double>(pos_above) / static_cast<double>(above);
    }
    return npos ? total / static_cast<double>(npos) : 0.0;
}

// Scalar BN reference for one channel's values.
inline std::vector<double> bn_channel(const std::vector<double>& x, double gamma, double beta, double eps) {
    double mu = 0.0;
    for (double v : x) mu += v;
    mu /= static_cast<double>(x.size());
    double var = 0.0;
    for (double v : x) var += (v - mu) * (v - mu);
    var /= static_cast<double>(x.size());
    std::vector<double> y;
    for (double v : x) y.push_back(gamma * (v - mu) / std::sqrt(var + eps) + beta);
    return y;
}

} // namespace oracle
