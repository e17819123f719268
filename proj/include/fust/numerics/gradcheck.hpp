#pragma once

#include <functional>

#include "fust/numerics/tensor.hpp"

namespace fust {

// Central differences (f(x + eps*e_i) - f(x - eps*e_i)) / (2*eps) per coordinate.
Tensor finite_diff_check(const std::function<double(const Tensor&)>& f, const Tensor& point, double eps = 1e-6);

// max_i |a_i - b_i| / max(max|a|, max|b|, floor)
double max_relative_error(const Tensor& analytic, const Tensor& numeric, double floor = 1e-12);

} // namespace fust
