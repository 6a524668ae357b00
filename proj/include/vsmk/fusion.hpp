#pragma once

#include <array>
#include <string>
#include <vector>

#include "vsmk/autograd.hpp"
#include "vsmk/errors.hpp"
#include "vsmk/nn.hpp"
#include "vsmk/ops.hpp"
#include "vsmk/rng.hpp"

namespace vsmk::fusion {

using nn::Binder;
using nn::Init;

// Canonical view order everywhere: L-CC, L-MLO, R-CC, R-MLO.
inline constexpr std::size_t kViews = 4;
inline constexpr const char* kViewNames[kViews] = {"lcc", "lmlo", "rcc", "rmlo"};

template <typename T>
struct FusionOut {
    Var<T> alpha;  // [B, 4] attention weights on the simplex
    Var<T> fused;  // [B, 4*D]; slot i equals alpha_i * v_i
};

// Gated attention over the four per-view feature vectors: the concatenated
// global context feeds a two-layer MLP whose softmax output weights each
// view's slot of the concatenation. Dropout acts on the MLP input only, at
// train time only, so the fused slots themselves stay undropped.
template <typename T>
FusionOut<T> fuse(Binder<T>& bn, const std::string& p, const std::array<Var<T>, kViews>& views,
                  double dropout_p, Rng& rng, bool train) {
    Tape<T>& t = bn.tape();
    const std::size_t D = t.val(views[0]).shape(1);
    for (std::size_t i = 1; i < kViews; ++i)
        if (t.val(views[i]).shape(1) != D || t.val(views[i]).shape(0) != t.val(views[0]).shape(0))
            throw ShapeError("view feature " + std::to_string(i) + " has shape " +
                             t.val(views[i]).shape_str() + ", expected " +
                             t.val(views[0]).shape_str());

    Var<T> v_global =
        ops::concat(std::vector<Var<T>>(views.begin(), views.end()), /*axis=*/1);  // [B, 4D]
    Var<T> gate_in = ops::dropout(v_global, dropout_p, rng, train);
    Var<T> w1 = bn(p + ".w1", {D, kViews * D}, Init::KaimingUniform);
    Var<T> b1 = bn(p + ".b1", {D}, Init::Zeros);
    Var<T> h = ops::relu(ops::linear(gate_in, w1, b1));
    Var<T> w2 = bn(p + ".w2", {kViews, D}, Init::KaimingUniform);
    Var<T> b2 = bn(p + ".b2", {kViews}, Init::Zeros);
    Var<T> logits = ops::linear(h, w2, b2);

    FusionOut<T> out;
    out.alpha = ops::softmax_rows(logits);
    out.fused = ops::slot_scale(v_global, out.alpha, kViews);
    return out;
}

}  // namespace vsmk::fusion
