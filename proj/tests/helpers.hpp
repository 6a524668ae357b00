#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "vsmk/rng.hpp"
#include "vsmk/tensor.hpp"

namespace testutil {

template <typename T>
inline double rel_err(T a, T b) {
    const double d = std::abs(double(a) - double(b));
    const double scale = std::max(1.0, std::max(std::abs(double(a)), std::abs(double(b))));
    return d / scale;
}

template <typename T>
inline double max_rel_err(const T* a, const T* b, size_t n) {
    double m = 0;
    for (size_t i = 0; i < n; ++i) m = std::max(m, rel_err(a[i], b[i]));
    return m;
}

template <typename T>
inline double max_abs_diff(const T* a, const T* b, size_t n) {
    double m = 0;
    for (size_t i = 0; i < n; ++i) m = std::max(m, std::abs(double(a[i]) - double(b[i])));
    return m;
}

template <typename T>
inline std::vector<T> random_vec(vsmk::Rng& rng, size_t n, double lo = -1.0, double hi = 1.0) {
    std::vector<T> v(n);
    for (auto& x : v) x = T(rng.uniform(lo, hi));
    return v;
}

template <typename T>
inline vsmk::Tensor<T> random_tensor(vsmk::Rng& rng, typename vsmk::Tensor<T>::Shape shape,
                                     double lo = -1.0, double hi = 1.0) {
    vsmk::Tensor<T> t(std::move(shape));
    for (size_t i = 0; i < t.size(); ++i) t[i] = T(rng.uniform(lo, hi));
    return t;
}

}  // namespace testutil
