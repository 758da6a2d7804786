#pragma once

#include <cmath>
#include <vector>

#include "maffsrn/tensor.hpp"

namespace maffsrn {

// Central-difference gradient of a scalar-valued function with respect to
// every element of x. `f` must read the current contents of x on each call;
// x is restored exactly before returning.
template <typename F>
std::vector<double> finite_diff_grad(F&& f, Tensor<double>& x, double eps = 1e-6) {
    const int64_t n = x.numel();
    std::vector<double> grad(static_cast<size_t>(n));
    double* p = x.data();
    for (int64_t i = 0; i < n; ++i) {
        const double saved = p[i];
        p[i] = saved + eps;
        const double fp = f();
        p[i] = saved - eps;
        const double fm = f();
        p[i] = saved;
        grad[static_cast<size_t>(i)] = (fp - fm) / (2.0 * eps);
    }
    return grad;
}

// Symmetric relative error with an absolute floor so that near-zero pairs
// compare on an absolute scale.
inline double relative_error(double a, double b, double floor = 1e-6) {
    const double scale = std::max({std::fabs(a), std::fabs(b), floor});
    return std::fabs(a - b) / scale;
}

}  // namespace maffsrn
