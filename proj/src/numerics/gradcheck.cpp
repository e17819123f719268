#include "fust/numerics/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace fust {

Tensor finite_diff_check(const std::function<double(const Tensor&)>& f, const Tensor& point, double eps) {
    Tensor grad(point.shape(), 0.0);
    Tensor probe = point;
    for (std::size_t i = 0; i < point.size(); ++i) {
        const double x0 = point[i];
        probe[i] = x0 + eps;
        const double up = f(probe);
        probe[i] = x0 - eps;
        const double down = f(probe);
        probe[i] = x0;
        grad[i] = (up - down) / (2.0 * eps);
    }
    return grad;
}

double max_relative_error(const Tensor& analytic, const Tensor& numeric, double floor) {
    require_same_shape(analytic, numeric, "max_relative_error");
    double diff = 0.0, scale = floor;
    for (std::size_t i = 0; i < analytic.size(); ++i) {
        diff = std::max(diff, std::abs(analytic[i] - numeric[i]));
        scale = std::max({scale, std::abs(analytic[i]), std::abs(numeric[i])});
    }
    return diff / scale;
}

} // namespace fust
