#pragma once

// Central-finite-difference gradient checking for any model exposing
// for_each_param. Protocol: the caller computes analytic gradients once
// (zero grads, forward, backward), then hands us a loss closure that runs
// only the forward pass. We perturb one scalar at a time and compare.

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "mmfuse/tensor.hpp"

namespace testsupport {

inline double relative_error(double analytic, double numeric) {
    double denom = std::max({std::fabs(analytic), std::fabs(numeric), 1e-3});
    return std::fabs(analytic - numeric) / denom;
}

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::string worst_param;
    long checked = 0;
};

// params: pointers collected after backward() filled the grads.
// loss: recomputes the scalar loss from the current parameter values.
template <typename LossFn>
GradCheckResult gradcheck(const std::vector<mmfuse::Param*>& params, LossFn&& loss,
                          double step = 1e-4) {
    GradCheckResult res;
    for (mmfuse::Param* p : params) {
        for (Eigen::Index i = 0; i < p->value.rows(); ++i) {
            for (Eigen::Index j = 0; j < p->value.cols(); ++j) {
                const double saved = p->value(i, j);
                p->value(i, j) = saved + step;
                const double up = loss();
                p->value(i, j) = saved - step;
                const double down = loss();
                p->value(i, j) = saved;
                const double numeric = (up - down) / (2.0 * step);
                const double err = relative_error(p->grad(i, j), numeric);
                if (err > res.max_rel_error) {
                    res.max_rel_error = err;
                    res.worst_param = p->name + "(" + std::to_string(i) + "," +
                                      std::to_string(j) + ")";
                }
                ++res.checked;
            }
        }
    }
    return res;
}

} // namespace testsupport
