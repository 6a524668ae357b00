#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "vsmk/autograd.hpp"
#include "vsmk/errors.hpp"
#include "vsmk/rng.hpp"
#include "vsmk/tensor.hpp"

namespace vsmk::nn {

// Named parameter registry. Tensors are created lazily on first use; each
// tensor's initial values depend only on (store seed, parameter name), so the
// result is independent of creation order. Iteration is name-sorted, which
// makes optimizer sweeps and serialization deterministic.
template <typename T>
class ParamStore {
public:
    explicit ParamStore(std::uint64_t seed) : seed_(seed) {}

    Tensor<T>& get_or_create(const std::string& name, const typename Tensor<T>::Shape& shape,
                             const std::function<void(Rng&, Tensor<T>&)>& init) {
        auto it = params_.find(name);
        if (it != params_.end()) {
            if (it->second.shape() != shape)
                throw ShapeError("parameter '" + name + "' bound with shape " +
                                 Tensor<T>::str(shape) + " but stored as " +
                                 it->second.shape_str());
            return it->second;
        }
        Tensor<T> t(shape);
        Rng rng(mix64(seed_, fnv1a64(name)));
        init(rng, t);
        return params_.emplace(name, std::move(t)).first->second;
    }

    bool has(const std::string& name) const { return params_.count(name) != 0; }

    Tensor<T>& at(const std::string& name) {
        auto it = params_.find(name);
        if (it == params_.end())
            throw ConfigError("unknown parameter '" + name + "'");
        return it->second;
    }
    const Tensor<T>& at(const std::string& name) const {
        return const_cast<ParamStore*>(this)->at(name);
    }

    void set(const std::string& name, Tensor<T> value) {
        auto it = params_.find(name);
        if (it == params_.end())
            params_.emplace(name, std::move(value));
        else {
            if (it->second.shape() != value.shape())
                throw ShapeError("parameter '" + name + "' assigned shape " + value.shape_str() +
                                 " but stored as " + it->second.shape_str());
            it->second = std::move(value);
        }
    }

    const std::map<std::string, Tensor<T>>& entries() const { return params_; }
    std::map<std::string, Tensor<T>>& entries() { return params_; }

    std::size_t count() const { return params_.size(); }

    std::size_t total_scalars() const {
        std::size_t n = 0;
        for (const auto& [k, v] : params_) n += v.size();
        return n;
    }
    std::size_t total_scalars(const std::string& prefix) const {
        std::size_t n = 0;
        for (const auto& [k, v] : params_)
            if (k.rfind(prefix, 0) == 0) n += v.size();
        return n;
    }

    std::uint64_t seed() const { return seed_; }

private:
    std::uint64_t seed_;
    std::map<std::string, Tensor<T>> params_;
};

enum class Init {
    Zeros,
    Ones,
    KaimingUniform,  // uniform(-b, b), b = sqrt(6 / fan_in); fan-in from shape
};

template <typename T>
inline std::function<void(Rng&, Tensor<T>&)> initializer(Init kind) {
    switch (kind) {
        case Init::Zeros:
            return [](Rng&, Tensor<T>& t) { t.fill(T(0)); };
        case Init::Ones:
            return [](Rng&, Tensor<T>& t) { t.fill(T(1)); };
        case Init::KaimingUniform:
        default:
            return [](Rng& rng, Tensor<T>& t) {
                // fan_in: trailing dims beyond the first (conv [Co,Ci,kh,kw] ->
                // Ci*kh*kw, linear [out,in] -> in, vectors -> own length).
                std::size_t fan = 1;
                if (t.rank() >= 2)
                    for (std::size_t a = 1; a < t.rank(); ++a) fan *= t.shape(a);
                else
                    fan = std::max<std::size_t>(1, t.size());
                const double b = std::sqrt(6.0 / static_cast<double>(fan));
                for (std::size_t i = 0; i < t.size(); ++i)
                    t.data()[i] = static_cast<T>(rng.uniform(-b, b));
            };
    }
}

// Creates tape leaves for named parameters and records them so gradients can
// be collected by name after the backward pass.
template <typename T>
class Binder {
public:
    Binder(ParamStore<T>& store, Tape<T>& tape) : store_(store), tape_(tape) {}

    Var<T> operator()(const std::string& name, const typename Tensor<T>::Shape& shape,
                      Init kind) {
        return bind(name, shape, initializer<T>(kind));
    }

    Var<T> bind(const std::string& name, const typename Tensor<T>::Shape& shape,
                const std::function<void(Rng&, Tensor<T>&)>& init) {
        Tensor<T>& stored = store_.get_or_create(name, shape, init);
        Var<T> v = tape_.leaf(stored, /*requires_grad=*/true);
        bound_.emplace_back(name, v);
        return v;
    }

    Tape<T>& tape() { return tape_; }
    ParamStore<T>& store() { return store_; }

    const std::vector<std::pair<std::string, Var<T>>>& bound() const { return bound_; }

    // Analytic gradients by name; call after Tape::backward.
    std::map<std::string, Tensor<T>> collect_grads() const {
        std::map<std::string, Tensor<T>> g;
        for (const auto& [name, var] : bound_) {
            Tensor<T> gi = tape_.grad(var);
            auto it = g.find(name);
            if (it == g.end())
                g.emplace(name, std::move(gi));
            else  // parameter bound more than once in the graph: sum contributions
                simd::k_add(it->second.data(), gi.data(), it->second.data(), gi.size());
        }
        return g;
    }

private:
    ParamStore<T>& store_;
    Tape<T>& tape_;
    std::vector<std::pair<std::string, Var<T>>> bound_;
};

}  // namespace vsmk::nn
