#pragma once

#include <array>
#include <cstddef>
#include <memory>
#include <vector>

#include "vsmk/autograd.hpp"
#include "vsmk/errors.hpp"
#include "vsmk/ops.hpp"
#include "vsmk/ssm.hpp"
#include "vsmk/tensor.hpp"

// 2D selective scan: serialize an H x W token grid along four directed paths
// (row-major forward/reverse, column-major forward/reverse), run a selective
// scan per path, map each result back to grid positions, and merge by
// elementwise sum in fixed path order.

namespace vsmk::ss2d {

using std::size_t;

enum class Path { RowFwd = 0, RowRev = 1, ColFwd = 2, ColRev = 3 };

inline constexpr std::array<Path, 4> kPaths = {Path::RowFwd, Path::RowRev, Path::ColFwd,
                                               Path::ColRev};

// order[k] = flat grid index (row * W + col) of the k-th sequence token.
// Each path is a bijection, so deserialization is the inverse table.
inline std::vector<size_t> path_order(Path p, size_t H, size_t W) {
    const size_t n = H * W;
    std::vector<size_t> order(n);
    switch (p) {
        case Path::RowFwd:
            for (size_t k = 0; k < n; ++k) order[k] = k;
            break;
        case Path::RowRev:
            for (size_t k = 0; k < n; ++k) order[k] = n - 1 - k;
            break;
        case Path::ColFwd:
            for (size_t k = 0; k < n; ++k) order[k] = (k % H) * W + k / H;
            break;
        case Path::ColRev:
            for (size_t k = 0; k < n; ++k) {
                const size_t f = n - 1 - k;
                order[k] = (f % H) * W + f / H;
            }
            break;
    }
    return order;
}

// [H,W,d] -> [(H*W), d] in path order.
template <typename T>
Tensor<T> serialize(const Tensor<T>& grid, Path p) {
    if (grid.rank() != 3) throw ShapeError("serialize: need [H,W,d], got " + grid.shape_str());
    const size_t H = grid.shape(0), W = grid.shape(1), d = grid.shape(2);
    const auto order = path_order(p, H, W);
    Tensor<T> seq({H * W, d});
    for (size_t k = 0; k < order.size(); ++k)
        std::copy_n(grid.data() + order[k] * d, d, seq.data() + k * d);
    return seq;
}

// Inverse of serialize for the same path.
template <typename T>
Tensor<T> deserialize(const Tensor<T>& seq, Path p, size_t H, size_t W) {
    if (seq.rank() != 2 || seq.shape(0) != H * W)
        throw ShapeError("deserialize: sequence " + seq.shape_str() + " vs grid " +
                         std::to_string(H) + "x" + std::to_string(W));
    const size_t d = seq.shape(1);
    const auto order = path_order(p, H, W);
    Tensor<T> grid({H, W, d});
    for (size_t k = 0; k < order.size(); ++k)
        std::copy_n(seq.data() + k * d, d, grid.data() + order[k] * d);
    return grid;
}

// Four-path scan and merge. params[i] drives path i (pass the same object four
// times for shared parameters); `a` is the shared negative diagonal.
template <typename T>
Tensor<T> ss2d_forward(const Tensor<T>& grid,
                       const std::array<const ssm::SelectiveParams<T>*, 4>& params,
                       const Tensor<T>& a) {
    if (grid.rank() != 3 || grid.size() == 0)
        throw ShapeError("ss2d_forward: need a nonempty [H,W,d] grid, got " + grid.shape_str());
    const size_t H = grid.shape(0), W = grid.shape(1);
    ssm::SsmParams<T> base;
    base.a = a;
    Tensor<T> out({H, W, grid.shape(2)});
    for (size_t pi = 0; pi < 4; ++pi) {
        const Path p = kPaths[pi];
        Tensor<T> seq = serialize(grid, p);
        Tensor<T> y = ssm::selective_scan(*params[pi], base, seq);
        Tensor<T> back = deserialize(y, p, H, W);
        for (size_t i = 0; i < out.size(); ++i) out[i] += back[i];
    }
    return out;
}

// ===== Differentiable composition (used by the model backbone) =====

// Selective projection parameters as tape variables.
template <typename T>
struct SelectiveVars {
    Var<T> w_dt_low, w_dt_up, b_dt, w_B, b_B, w_C, b_C;
};

inline std::shared_ptr<const std::vector<size_t>> path_index(Path p, size_t H, size_t W) {
    return std::make_shared<const std::vector<size_t>>(path_order(p, H, W));
}

inline std::shared_ptr<const std::vector<size_t>> inverse_index(
    const std::vector<size_t>& order) {
    std::vector<size_t> inv(order.size());
    for (size_t k = 0; k < order.size(); ++k) inv[order[k]] = k;
    return std::make_shared<const std::vector<size_t>>(std::move(inv));
}

// One selective scan over an already-serialized token sequence [L, d].
// `a` is the (negative) shared diagonal as a tape variable.
template <typename T>
Var<T> selective_scan_taped(const SelectiveVars<T>& sp, Var<T> a, Var<T> tokens) {
    Tape<T>& t = *tokens.tape;
    const size_t rank = t.val(sp.w_dt_low).shape(0);
    Var<T> zero_rank = t.leaf(Tensor<T>({rank}));
    Var<T> low = ops::linear(tokens, sp.w_dt_low, zero_rank);
    Var<T> delta = ops::softplus(ops::linear(low, sp.w_dt_up, sp.b_dt));
    Var<T> Bm = ops::linear(tokens, sp.w_B, sp.b_B);
    Var<T> Cm = ops::linear(tokens, sp.w_C, sp.b_C);
    return ops::s6_scan(a, delta, Bm, Cm, tokens);
}

// Four-path scan over row-major tokens [H*W, d]; result stays row-major.
// Projections are pointwise, so projecting the gathered tokens equals
// gathering the projections; the merge order is fixed (path 0..3).
template <typename T>
Var<T> ss2d_forward_taped(Var<T> tokens, size_t H, size_t W, Var<T> a,
                          const std::array<const SelectiveVars<T>*, 4>& params) {
    Tape<T>& t = *tokens.tape;
    if (t.val(tokens).rank() != 2 || t.val(tokens).shape(0) != H * W)
        throw ShapeError("ss2d_forward_taped: tokens " + t.val(tokens).shape_str() + " vs grid " +
                         std::to_string(H) + "x" + std::to_string(W));
    Var<T> out{};
    for (size_t pi = 0; pi < 4; ++pi) {
        auto idx = path_index(kPaths[pi], H, W);
        auto inv = inverse_index(*idx);
        Var<T> xs = ops::gather_rows(tokens, idx);
        Var<T> ys = selective_scan_taped(*params[pi], a, xs);
        Var<T> yg = ops::gather_rows(ys, inv);
        out = pi == 0 ? yg : ops::add(out, yg);
    }
    return out;
}

}  // namespace vsmk::ss2d
