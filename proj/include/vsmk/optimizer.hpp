#pragma once

// Decoupled-weight-decay Adam over a named parameter store, plus global
// gradient-norm clipping.  Both walk parameters in name order (std::map),
// which keeps update sequences independent of how gradients were gathered
// and hence bitwise reproducible.

#include <cmath>
#include <map>
#include <string>

#include "vsmk/errors.hpp"
#include "vsmk/nn.hpp"
#include "vsmk/simd/typed.hpp"
#include "vsmk/tensor.hpp"

namespace vsmk::opt {

template <typename T>
using GradMap = std::map<std::string, Tensor<T>>;

// Scales every gradient by max_norm/norm when the global L2 norm exceeds
// max_norm.  Returns the pre-clip norm.  A non-finite norm is passed through
// unscaled so the optimizer step can identify the offending parameter.
template <typename T>
double clip_gradients(GradMap<T>& grads, double max_norm) {
    if (max_norm <= 0) throw ConfigError("clip_gradients: max_norm must be positive");
    double sq = 0;
    for (const auto& [name, g] : grads)
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double x = g.data()[i];
            sq += x * x;
        }
    const double norm = std::sqrt(sq);
    if (!std::isfinite(norm)) return norm;
    if (norm > max_norm) {
        const T scale = static_cast<T>(max_norm / norm);
        for (auto& [name, g] : grads)
            for (std::size_t i = 0; i < g.size(); ++i) g.data()[i] *= scale;
    }
    return norm;
}

template <typename T>
class AdamW {
public:
    struct Hyper {
        double lr = 1e-4;
        double beta1 = 0.9;
        double beta2 = 0.999;
        double eps = 1e-8;
        double weight_decay = 0.05;
    };

    explicit AdamW(Hyper hp) : hp_(hp) {
        if (hp_.lr < 0) throw ConfigError("AdamW: negative learning rate");
        if (hp_.beta1 < 0 || hp_.beta1 >= 1 || hp_.beta2 < 0 || hp_.beta2 >= 1)
            throw ConfigError("AdamW: betas must lie in [0,1)");
        if (hp_.eps <= 0) throw ConfigError("AdamW: eps must be positive");
        if (hp_.weight_decay < 0) throw ConfigError("AdamW: negative weight decay");
    }

    double lr() const { return hp_.lr; }
    void set_lr(double lr) {
        if (lr < 0) throw ConfigError("AdamW: negative learning rate");
        hp_.lr = lr;
    }
    std::size_t steps() const { return t_; }

    // One update over every (parameter, gradient) pair.  Every gradient name
    // must already exist in the store; a non-finite gradient aborts with the
    // offending parameter named.
    void step(nn::ParamStore<T>& store, const GradMap<T>& grads) {
        ++t_;
        const double bc1 = 1.0 / (1.0 - std::pow(hp_.beta1, double(t_)));
        const double bc2 = 1.0 / (1.0 - std::pow(hp_.beta2, double(t_)));
        for (const auto& [name, g] : grads) {
            Tensor<T>& p = store.at(name);
            if (p.shape() != g.shape())
                throw ShapeError("AdamW: gradient shape mismatch for '" + name + "'");
            for (std::size_t i = 0; i < g.size(); ++i)
                if (!std::isfinite(double(g.data()[i])))
                    throw NumericError("AdamW: non-finite gradient for parameter '" + name +
                                       "'");
            auto& [m, v] = moments(name, p);
            simd::k_adamw<T>(p.data(), g.data(), m.data(), v.data(), p.size(),
                             static_cast<T>(hp_.lr), static_cast<T>(hp_.beta1),
                             static_cast<T>(hp_.beta2), static_cast<T>(hp_.eps),
                             static_cast<T>(hp_.weight_decay), static_cast<T>(bc1),
                             static_cast<T>(bc2));
        }
    }

private:
    std::pair<Tensor<T>, Tensor<T>>& moments(const std::string& name, const Tensor<T>& p) {
        auto it = state_.find(name);
        if (it == state_.end())
            it = state_
                     .emplace(name, std::make_pair(Tensor<T>::zeros(p.shape()),
                                                   Tensor<T>::zeros(p.shape())))
                     .first;
        return it->second;
    }

    Hyper hp_;
    std::size_t t_ = 0;
    std::map<std::string, std::pair<Tensor<T>, Tensor<T>>> state_;
};

}  // namespace vsmk::opt
