#include "fust/numerics/ops.hpp"

#include <algorithm>
#include <string>

namespace fust {
namespace {

void require_rank(const Tensor& t, std::size_t rank, const char* what) {
    if (t.rank() != rank) {
        throw DimensionError(std::string(what) + ": expected rank " + std::to_string(rank) + ", got shape " +
                             shape_str(t.shape()));
    }
}

std::size_t out_extent(std::size_t in, std::size_t k, ConvGeometry g) {
    if (in + 2 * g.padding < k) return 0;
    return (in + 2 * g.padding - k) / g.stride + 1;
}

// Output indices o with 0 <= o*stride - pad + tap < in.
std::pair<std::size_t, std::size_t> valid_range(std::size_t out, std::size_t in, std::size_t tap, ConvGeometry g) {
    std::size_t lo = 0;
    if (tap < g.padding) lo = (g.padding - tap + g.stride - 1) / g.stride;
    // o*stride + tap - pad <= in - 1
    std::size_t hi = 0;
    if (in + g.padding > tap) hi = std::min(out, (in + g.padding - tap - 1) / g.stride + 1);
    return {lo, std::max(lo, hi)};
}

void add_into(Tensor& dst, const Tensor& src) {
    auto& d = dst.storage();
    const auto& s = src.storage();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
}

} // namespace

Tensor conv2d_forward(const Tensor& input, const Tensor& weight, const Tensor& bias, ConvGeometry geom) {
    require_rank(input, 4, "conv2d input");
    require_rank(weight, 4, "conv2d weight");
    if (geom.stride == 0) throw ContractError("conv2d: stride must be positive");
    const std::size_t n_batch = input.dim(0), c_in = input.dim(1), h_in = input.dim(2), w_in = input.dim(3);
    const std::size_t c_out = weight.dim(0), k = weight.dim(2);
    if (weight.dim(1) != c_in) {
        throw DimensionError("conv2d: input axis 1 (channels=" + std::to_string(c_in) + ") vs weight axis 1 (" +
                             std::to_string(weight.dim(1)) + ")");
    }
    if (weight.dim(3) != k) throw DimensionError("conv2d: weight axes 2 and 3 must match (square kernel)");
    if (!bias.empty() && (bias.rank() != 1 || bias.dim(0) != c_out)) {
        throw DimensionError("conv2d: bias axis 0 must equal weight axis 0 (" + std::to_string(c_out) + ")");
    }
    const std::size_t h_out = out_extent(h_in, k, geom), w_out = out_extent(w_in, k, geom);
    if (h_out == 0 || w_out == 0) {
        throw DimensionError("conv2d: non-positive output spatial dims for input axes 2,3 " + shape_str(input.shape()));
    }

    Tensor out({n_batch, c_out, h_out, w_out}, 0.0);
    const double* x = input.data();
    const double* wt = weight.data();
    double* y = out.data();
    for (std::size_t n = 0; n < n_batch; ++n) {
        for (std::size_t o = 0; o < c_out; ++o) {
            double* yp = y + (n * c_out + o) * h_out * w_out;
            for (std::size_t c = 0; c < c_in; ++c) {
                const double* xp = x + (n * c_in + c) * h_in * w_in;
                for (std::size_t kh = 0; kh < k; ++kh) {
                    const auto [oh_lo, oh_hi] = valid_range(h_out, h_in, kh, geom);
                    for (std::size_t kw = 0; kw < k; ++kw) {
                        const double wv = wt[((o * c_in + c) * k + kh) * k + kw];
                        const auto [ow_lo, ow_hi] = valid_range(w_out, w_in, kw, geom);
                        for (std::size_t oh = oh_lo; oh < oh_hi; ++oh) {
                            const double* xr = xp + (oh * geom.stride + kh - geom.padding) * w_in;
                            double* yr = yp + oh * w_out;
                            if (geom.stride == 1) {
                                const double* xs = xr + kw - geom.padding;
                                for (std::size_t ow = ow_lo; ow < ow_hi; ++ow) yr[ow] += wv * xs[ow];
                            } else {
                                for (std::size_t ow = ow_lo; ow < ow_hi; ++ow) {
                                    yr[ow] += wv * xr[ow * geom.stride + kw - geom.padding];
                                }
                            }
                        }
                    }
                }
            }
            if (!bias.empty()) {
                for (std::size_t i = 0; i < h_out * w_out; ++i) yp[i] += bias[o];
            }
        }
    }
    return out;
}

ConvGrads conv2d_backward(const Tensor& dy, const Tensor& input, const Tensor& weight, ConvGeometry geom,
                          bool with_bias) {
    const std::size_t n_batch = input.dim(0), c_in = input.dim(1), h_in = input.dim(2), w_in = input.dim(3);
    const std::size_t c_out = weight.dim(0), k = weight.dim(2);
    const std::size_t h_out = dy.dim(2), w_out = dy.dim(3);

    ConvGrads g{Tensor(input.shape(), 0.0), Tensor(weight.shape(), 0.0),
                with_bias ? Tensor({c_out}, 0.0) : Tensor()};
    const double* x = input.data();
    const double* wt = weight.data();
    const double* d = dy.data();
    double* dx = g.input.data();
    double* dw = g.weight.data();
    for (std::size_t n = 0; n < n_batch; ++n) {
        for (std::size_t o = 0; o < c_out; ++o) {
            const double* dp = d + (n * c_out + o) * h_out * w_out;
            if (with_bias) {
                double acc = 0.0;
                for (std::size_t i = 0; i < h_out * w_out; ++i) acc += dp[i];
                g.bias[o] += acc;
            }
            for (std::size_t c = 0; c < c_in; ++c) {
                const double* xp = x + (n * c_in + c) * h_in * w_in;
                double* dxp = dx + (n * c_in + c) * h_in * w_in;
                for (std::size_t kh = 0; kh < k; ++kh) {
                    const auto [oh_lo, oh_hi] = valid_range(h_out, h_in, kh, geom);
                    for (std::size_t kw = 0; kw < k; ++kw) {
                        const std::size_t widx = ((o * c_in + c) * k + kh) * k + kw;
                        const double wv = wt[widx];
                        const auto [ow_lo, ow_hi] = valid_range(w_out, w_in, kw, geom);
                        double acc = 0.0;
                        for (std::size_t oh = oh_lo; oh < oh_hi; ++oh) {
                            const std::size_t row = (oh * geom.stride + kh - geom.padding) * w_in;
                            const double* dr = dp + oh * w_out;
                            for (std::size_t ow = ow_lo; ow < ow_hi; ++ow) {
                                const std::size_t col = ow * geom.stride + kw - geom.padding;
                                acc += dr[ow] * xp[row + col];
                                dxp[row + col] += wv * dr[ow];
                            }
                        }
                        dw[widx] += acc;
                    }
                }
            }
        }
    }
    return g;
}

namespace ops {

Var add(const Var& a, const Var& b) {
    require_same_shape(a.value(), b.value(), "add");
    Tensor out = a.value();
    add_into(out, b.value());
    return make_op(std::move(out), {a, b}, [](Node& self) {
        for (auto& in : self.inputs) {
            if (in->requires_grad) add_into(in->grad, self.grad);
        }
    });
}

Var mul(const Var& a, const Var& b) {
    require_same_shape(a.value(), b.value(), "mul");
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
    return make_op(std::move(out), {a, b}, [](Node& self) {
        auto& x = *self.inputs[0];
        auto& y = *self.inputs[1];
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            if (x.requires_grad) x.grad[i] += self.grad[i] * y.value[i];
            if (y.requires_grad) y.grad[i] += self.grad[i] * x.value[i];
        }
    });
}

Var scale(const Var& a, double s) {
    Tensor out = a.value();
    for (auto& v : out.storage()) v *= s;
    return make_op(std::move(out), {a}, [s](Node& self) {
        auto& x = *self.inputs[0];
        for (std::size_t i = 0; i < self.grad.size(); ++i) x.grad[i] += s * self.grad[i];
    });
}

Var sum(const Var& a) {
    double acc = 0.0;
    for (double v : a.value().values()) acc += v;
    return make_op(Tensor::scalar(acc), {a}, [](Node& self) {
        auto& x = *self.inputs[0];
        const double g = self.grad[0];
        for (auto& v : x.grad.storage()) v += g;
    });
}

Var mean(const Var& a) {
    if (a.value().empty()) throw ContractError("mean of empty tensor");
    return scale(sum(a), 1.0 / static_cast<double>(a.value().size()));
}

Var square(const Var& a) {
    return mul(a, a);
}

Var relu(const Var& a) {
    Tensor out = a.value();
    for (auto& v : out.storage()) v = v > 0.0 ? v : 0.0;
    return make_op(std::move(out), {a}, [](Node& self) {
        auto& x = *self.inputs[0];
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            if (x.value[i] > 0.0) x.grad[i] += self.grad[i];
        }
    });
}

Var conv2d(const Var& input, const Var& weight, ConvGeometry geom) {
    Tensor out = conv2d_forward(input.value(), weight.value(), Tensor(), geom);
    return make_op(std::move(out), {input, weight}, [geom](Node& self) {
        auto& x = *self.inputs[0];
        auto& w = *self.inputs[1];
        ConvGrads g = conv2d_backward(self.grad, x.value, w.value, geom, false);
        if (x.requires_grad) add_into(x.grad, g.input);
        if (w.requires_grad) add_into(w.grad, g.weight);
    });
}

Var conv2d(const Var& input, const Var& weight, const Var& bias, ConvGeometry geom) {
    Tensor out = conv2d_forward(input.value(), weight.value(), bias.value(), geom);
    return make_op(std::move(out), {input, weight, bias}, [geom](Node& self) {
        auto& x = *self.inputs[0];
        auto& w = *self.inputs[1];
        auto& b = *self.inputs[2];
        ConvGrads g = conv2d_backward(self.grad, x.value, w.value, geom, true);
        if (x.requires_grad) add_into(x.grad, g.input);
        if (w.requires_grad) add_into(w.grad, g.weight);
        if (b.requires_grad) add_into(b.grad, g.bias);
    });
}

Var channel_blend(const Var& a, const Var& b, const Var& alpha) {
    require_same_shape(a.value(), b.value(), "channel_blend");
    require_rank(a.value(), 4, "channel_blend input");
    const std::size_t n_batch = a.value().dim(0), channels = a.value().dim(1);
    const std::size_t plane = a.value().dim(2) * a.value().dim(3);
    if (alpha.value().rank() != 1 || alpha.value().dim(0) != channels) {
        throw DimensionError("channel_blend: alpha axis 0 must equal input axis 1 (" + std::to_string(channels) + ")");
    }
    Tensor out(a.value().shape(), 0.0);
    for (std::size_t n = 0; n < n_batch; ++n) {
        for (std::size_t c = 0; c < channels; ++c) {
            const double w = alpha.value()[c];
            const std::size_t base = (n * channels + c) * plane;
            for (std::size_t i = base; i < base + plane; ++i) {
                out[i] = w * a.value()[i] + (1.0 - w) * b.value()[i];
            }
        }
    }
    return make_op(std::move(out), {a, b, alpha}, [n_batch, channels, plane](Node& self) {
        auto& xa = *self.inputs[0];
        auto& xb = *self.inputs[1];
        auto& al = *self.inputs[2];
        for (std::size_t n = 0; n < n_batch; ++n) {
            for (std::size_t c = 0; c < channels; ++c) {
                const double w = al.value[c];
                const std::size_t base = (n * channels + c) * plane;
                double acc = 0.0;
                for (std::size_t i = base; i < base + plane; ++i) {
                    const double g = self.grad[i];
                    if (xa.requires_grad) xa.grad[i] += w * g;
                    if (xb.requires_grad) xb.grad[i] += (1.0 - w) * g;
                    acc += g * (xa.value[i] - xb.value[i]);
                }
                if (al.requires_grad) al.grad[c] += acc;
            }
        }
    });
}

Var shortcut(const Var& x, std::size_t out_channels, std::size_t stride) {
    require_rank(x.value(), 4, "shortcut input");
    const auto& in = x.value();
    const std::size_t n_batch = in.dim(0), c_in = in.dim(1), h_in = in.dim(2), w_in = in.dim(3);
    if (out_channels < c_in) throw DimensionError("shortcut: cannot reduce channels");
    const std::size_t h_out = (h_in + stride - 1) / stride, w_out = (w_in + stride - 1) / stride;
    Tensor out({n_batch, out_channels, h_out, w_out}, 0.0);
    for (std::size_t n = 0; n < n_batch; ++n)
        for (std::size_t c = 0; c < c_in; ++c)
            for (std::size_t h = 0; h < h_out; ++h)
                for (std::size_t w = 0; w < w_out; ++w) out.at(n, c, h, w) = in.at(n, c, h * stride, w * stride);
    return make_op(std::move(out), {x}, [stride, c_in, h_out, w_out](Node& self) {
        auto& src = *self.inputs[0];
        const std::size_t n_batch = src.value.dim(0);
        for (std::size_t n = 0; n < n_batch; ++n)
            for (std::size_t c = 0; c < c_in; ++c)
                for (std::size_t h = 0; h < h_out; ++h)
                    for (std::size_t w = 0; w < w_out; ++w)
                        src.grad.at(n, c, h * stride, w * stride) += self.grad.at(n, c, h, w);
    });
}

Var global_avg_pool(const Var& x) {
    require_rank(x.value(), 4, "global_avg_pool input");
    const auto& in = x.value();
    const std::size_t n_batch = in.dim(0), channels = in.dim(1), plane = in.dim(2) * in.dim(3);
    Tensor out({n_batch, channels}, 0.0);
    for (std::size_t i = 0; i < n_batch * channels; ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < plane; ++j) acc += in[i * plane + j];
        out[i] = acc / static_cast<double>(plane);
    }
    return make_op(std::move(out), {x}, [plane](Node& self) {
        auto& src = *self.inputs[0];
        const double inv = 1.0 / static_cast<double>(plane);
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            const double g = self.grad[i] * inv;
            for (std::size_t j = 0; j < plane; ++j) src.grad[i * plane + j] += g;
        }
    });
}

Var linear(const Var& x, const Var& weight, const Var& bias) {
    require_rank(x.value(), 2, "linear input");
    require_rank(weight.value(), 2, "linear weight");
    const std::size_t n_batch = x.value().dim(0), d_in = x.value().dim(1), d_out = weight.value().dim(0);
    if (weight.value().dim(1) != d_in) {
        throw DimensionError("linear: input axis 1 (" + std::to_string(d_in) + ") vs weight axis 1 (" +
                             std::to_string(weight.value().dim(1)) + ")");
    }
    if (bias.value().rank() != 1 || bias.value().dim(0) != d_out) {
        throw DimensionError("linear: bias axis 0 must equal weight axis 0");
    }
    Tensor out({n_batch, d_out}, 0.0);
    for (std::size_t n = 0; n < n_batch; ++n) {
        for (std::size_t k = 0; k < d_out; ++k) {
            double acc = 0.0;
            for (std::size_t d = 0; d < d_in; ++d) acc += x.value()[n * d_in + d] * weight.value()[k * d_in + d];
            out[n * d_out + k] = acc + bias.value()[k];
        }
    }
    return make_op(std::move(out), {x, weight, bias}, [n_batch, d_in, d_out](Node& self) {
        auto& xi = *self.inputs[0];
        auto& w = *self.inputs[1];
        auto& b = *self.inputs[2];
        for (std::size_t n = 0; n < n_batch; ++n) {
            for (std::size_t k = 0; k < d_out; ++k) {
                const double g = self.grad[n * d_out + k];
                if (b.requires_grad) b.grad[k] += g;
                for (std::size_t d = 0; d < d_in; ++d) {
                    if (w.requires_grad) w.grad[k * d_in + d] += g * xi.value[n * d_in + d];
                    if (xi.requires_grad) xi.grad[n * d_in + d] += g * w.value[k * d_in + d];
                }
            }
        }
    });
}

Var concat_features(const Var& a, const Var& b) {
    require_rank(a.value(), 2, "concat_features lhs");
    require_rank(b.value(), 2, "concat_features rhs");
    if (a.value().dim(0) != b.value().dim(0)) {
        throw DimensionError("concat_features: axis 0 mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
    const std::size_t n_batch = a.value().dim(0), da = a.value().dim(1), db = b.value().dim(1);
    Tensor out({n_batch, da + db}, 0.0);
    for (std::size_t n = 0; n < n_batch; ++n) {
        for (std::size_t i = 0; i < da; ++i) out[n * (da + db) + i] = a.value()[n * da + i];
        for (std::size_t i = 0; i < db; ++i) out[n * (da + db) + da + i] = b.value()[n * db + i];
    }
    return make_op(std::move(out), {a, b}, [n_batch, da, db](Node& self) {
        auto& xa = *self.inputs[0];
        auto& xb = *self.inputs[1];
        for (std::size_t n = 0; n < n_batch; ++n) {
            if (xa.requires_grad)
                for (std::size_t i = 0; i < da; ++i) xa.grad[n * da + i] += self.grad[n * (da + db) + i];
            if (xb.requires_grad)
                for (std::size_t i = 0; i < db; ++i) xb.grad[n * db + i] += self.grad[n * (da + db) + da + i];
        }
    });
}

} // namespace ops
} // namespace fust
