#pragma once

#include <cstddef>
#include <functional>
#include <utility>
#include <vector>

#include "vsmk/errors.hpp"
#include "vsmk/simd/typed.hpp"
#include "vsmk/tensor.hpp"

namespace vsmk {

template <typename T>
class Tape;

// Handle to a node on a tape. Cheap to copy; valid for the tape's lifetime.
template <typename T>
struct Var {
    Tape<T>* tape = nullptr;
    size_t id = 0;
    bool valid() const { return tape != nullptr; }
};

// Reverse-mode gradient tape. Nodes are appended in forward order, which is a
// topological order, so the backward sweep is a single reverse iteration.
// One forward + one backward per tape; parameters re-enter as leaves each step.
template <typename T>
class Tape {
public:
    explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    bool grad_enabled() const { return grad_enabled_; }

    Var<T> leaf(Tensor<T> value, bool requires_grad = false) {
        return push(std::move(value), requires_grad && grad_enabled_, {});
    }

    // Creates an interior node. `backward` receives the tape and the node's own
    // handle; it must accumulate into parent gradients. Dropped when gradients
    // are disabled or no parent requires them.
    Var<T> node(Tensor<T> value, bool requires_grad,
                std::function<void(Tape<T>&, Var<T>)> backward) {
        requires_grad = requires_grad && grad_enabled_;
        return push(std::move(value), requires_grad,
                    requires_grad ? std::move(backward) : std::function<void(Tape<T>&, Var<T>)>{});
    }

    const Tensor<T>& val(Var<T> v) const { return nodes_[v.id].value; }
    Tensor<T>& val(Var<T> v) { return nodes_[v.id].value; }

    bool needs_grad(Var<T> v) const { return nodes_[v.id].requires_grad; }

    Tensor<T>& grad(Var<T> v) {
        Node& n = nodes_[v.id];
        if (!n.requires_grad)
            throw std::logic_error("gradient requested for a node that does not require it");
        return n.grad;
    }

    // Accumulates g into v's gradient (no-op when v doesn't require one).
    void acc_grad(Var<T> v, const Tensor<T>& g) {
        Node& n = nodes_[v.id];
        if (!n.requires_grad) return;
        check_same_shape(n.grad, g, "acc_grad");
        simd::k_add(n.grad.data(), g.data(), n.grad.data(), g.size());
    }

    // Runs the backward sweep from a scalar root.
    void backward(Var<T> root) {
        if (!grad_enabled_) throw std::logic_error("backward on a gradient-disabled tape");
        if (val(root).size() != 1)
            throw ShapeError("backward root must be scalar, got shape " + val(root).shape_str());
        grad(root).fill(T(1));
        for (size_t i = root.id + 1; i-- > 0;) {
            Node& n = nodes_[i];
            if (n.requires_grad && n.backward) n.backward(*this, Var<T>{this, i});
        }
    }

    size_t size() const { return nodes_.size(); }

private:
    struct Node {
        Tensor<T> value;
        Tensor<T> grad;
        bool requires_grad = false;
        std::function<void(Tape<T>&, Var<T>)> backward;
    };

    Var<T> push(Tensor<T> value, bool requires_grad,
                std::function<void(Tape<T>&, Var<T>)> backward) {
        Node n;
        if (requires_grad) n.grad = Tensor<T>(value.shape());
        n.value = std::move(value);
        n.requires_grad = requires_grad;
        n.backward = std::move(backward);
        nodes_.push_back(std::move(n));
        return Var<T>{this, nodes_.size() - 1};
    }

    std::vector<Node> nodes_;
    bool grad_enabled_;
};

}  // namespace vsmk
