#pragma once

#include <cstddef>

#include "fust/numerics/autograd.hpp"

namespace fust {

struct ConvGeometry {
    std::size_t stride = 1;
    std::size_t padding = 0;
};

struct ConvGrads {
    Tensor input;
    Tensor weight;
    Tensor bias;
};

// Cross-correlation of an NCHW input with an OxIxKxK weight. An empty bias
// tensor means no bias. Each output accumulates over (c, kh, kw) in that order
// and adds the bias last.
Tensor conv2d_forward(const Tensor& input, const Tensor& weight, const Tensor& bias, ConvGeometry geom);
ConvGrads conv2d_backward(const Tensor& dy, const Tensor& input, const Tensor& weight, ConvGeometry geom,
                          bool with_bias);

namespace ops {

Var add(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var sum(const Var& a);
Var mean(const Var& a);
Var square(const Var& a);
Var relu(const Var& a);

Var conv2d(const Var& input, const Var& weight, ConvGeometry geom);
Var conv2d(const Var& input, const Var& weight, const Var& bias, ConvGeometry geom);

// y = alpha_k * a + (1 - alpha_k) * b on every channel k of NCHW inputs.
Var channel_blend(const Var& a, const Var& b, const Var& alpha);

// Parameter-free residual path: spatial subsample by `stride`, zero-pad
// channels up to `out_channels`.
Var shortcut(const Var& x, std::size_t out_channels, std::size_t stride);

// NCHW -> NC
Var global_avg_pool(const Var& x);

// x: NxD, weight: KxD, bias: K -> NxK
Var linear(const Var& x, const Var& weight, const Var& bias);

// NxDa, NxDb -> Nx(Da+Db)
Var concat_features(const Var& a, const Var& b);

} // namespace ops
} // namespace fust
