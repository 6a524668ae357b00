#pragma once

#include <cmath>
#include <type_traits>

// Zero-order-hold step factors shared by the state-space discretization and the
// selective-scan kernels.
//
//   zoh_factor(u)  = (e^u - 1) / u        (u = delta * a)
//   zoh_dfactor(u) = d/du zoh_factor(u) = (u e^u - (e^u - 1)) / u^2
//
// Near u = 0 both expressions cancel catastrophically, so they switch to their
// truncated Taylor series. In double the switch happens at |u| < 1e-4 with six
// series terms. In float the series window widens to |u| < 2e-2: there the
// series still agrees with the exact value to ~1e-13 relative (far below float
// resolution) while the direct formula would lose up to three digits, and the
// float lane derives e^u - 1 from exp(u) rather than expm1 so that the scalar
// and AVX2 variants share one branch structure.

namespace vsmk {

template <typename T>
constexpr T zoh_series_cutoff() {
    if constexpr (std::is_same_v<T, float>) {
        return T(0.02);
    } else {
        return T(1e-4);
    }
}

// (e^u - 1)/u = 1 + u/2 + u^2/6 + u^3/24 + u^4/120 + u^5/720 + ...
template <typename T>
inline T zoh_series(T u) {
    return T(1) +
           u * (T(1) / T(2) +
                u * (T(1) / T(6) +
                     u * (T(1) / T(24) + u * (T(1) / T(120) + u * (T(1) / T(720))))));
}

// d/du[(e^u - 1)/u] = 1/2 + u/3 + u^2/8 + u^3/30 + u^4/144 + ...
template <typename T>
inline T zoh_dseries(T u) {
    return T(1) / T(2) +
           u * (T(1) / T(3) +
                u * (T(1) / T(8) + u * (T(1) / T(30) + u * (T(1) / T(144)))));
}

// abar must equal exp(u); reused so the float path needs a single exponential.
template <typename T>
inline T zoh_factor_from_exp(T u, T abar) {
    if (std::abs(u) < zoh_series_cutoff<T>()) return zoh_series(u);
    if constexpr (std::is_same_v<T, float>) {
        return (abar - T(1)) / u;
    } else {
        return std::expm1(u) / u;
    }
}

template <typename T>
inline T zoh_factor(T u) {
    return zoh_factor_from_exp(u, std::exp(u));
}

template <typename T>
inline T zoh_dfactor_from_exp(T u, T abar) {
    if (std::abs(u) < zoh_series_cutoff<T>()) return zoh_dseries(u);
    if constexpr (std::is_same_v<T, float>) {
        return (u * abar - (abar - T(1))) / (u * u);
    } else {
        return (u * abar - std::expm1(u)) / (u * u);
    }
}

}  // namespace vsmk
