#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "vsmk/rng.hpp"
#include "vsmk/tensor.hpp"

namespace vsmk {

// Central-difference gradient verification. The loss functor is re-evaluated
// with perturbed parameter values, so it must be a pure function of them
// (fresh tape per call, any internal randomness re-seeded identically).
struct FdReport {
    double max_rel = 0.0;
    std::size_t checked = 0;
    std::size_t worst_param = 0;
    std::size_t worst_index = 0;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;

    std::string describe() const {
        return "max rel " + std::to_string(max_rel) + " at param " +
               std::to_string(worst_param) + "[" + std::to_string(worst_index) +
               "] analytic " + std::to_string(worst_analytic) + " numeric " +
               std::to_string(worst_numeric) + " over " + std::to_string(checked) + " coords";
    }
};

// Relative error with a unit floor, so tiny gradients are compared absolutely.
inline double grad_rel_err(double analytic, double numeric) {
    return std::abs(analytic - numeric) /
           std::max(1.0, std::abs(analytic) + std::abs(numeric));
}

// Checks up to `samples_per_tensor` coordinates of each parameter tensor
// (all of them when the tensor is small) against (f(x+h)-f(x-h))/2h.
template <typename LossFn>
FdReport fd_check(LossFn&& loss, std::vector<Tensor<double>> params,
                  const std::vector<Tensor<double>>& grads, std::size_t samples_per_tensor,
                  Rng& rng, double h = 1e-5) {
    FdReport rep;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        const std::size_t n = params[pi].size();
        const bool exhaustive = n <= samples_per_tensor;
        const std::size_t m = exhaustive ? n : samples_per_tensor;
        for (std::size_t s = 0; s < m; ++s) {
            const std::size_t ei = exhaustive ? s : rng.uniform_int(n);
            const double orig = params[pi][ei];
            params[pi][ei] = orig + h;
            const double lp = loss(params);
            params[pi][ei] = orig - h;
            const double lm = loss(params);
            params[pi][ei] = orig;
            const double numeric = (lp - lm) / (2.0 * h);
            const double analytic = grads[pi][ei];
            const double rel = grad_rel_err(analytic, numeric);
            ++rep.checked;
            if (rel > rep.max_rel) {
                rep.max_rel = rel;
                rep.worst_param = pi;
                rep.worst_index = ei;
                rep.worst_analytic = analytic;
                rep.worst_numeric = numeric;
            }
        }
    }
    return rep;
}

}  // namespace vsmk
