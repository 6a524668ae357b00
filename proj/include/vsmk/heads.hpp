#pragma once

#include <memory>
#include <string>
#include <vector>

#include "vsmk/autograd.hpp"
#include "vsmk/errors.hpp"
#include "vsmk/model_config.hpp"
#include "vsmk/nn.hpp"
#include "vsmk/ops.hpp"

namespace vsmk::heads {

using nn::Binder;
using nn::Init;

// Per-study targets for one batch; -1 marks a masked side. Assessment grades
// are already re-indexed to contiguous 0..K-1.
struct BatchLabels {
    std::vector<int> label_l, label_r;    // {0, 1, -1}
    std::vector<int> birads_l, birads_r;  // {0..K-1, -1}
};

template <typename T>
struct HeadLogits {
    Var<T> label_l, label_r;    // [B, 2] when the label task is active
    Var<T> birads_l, birads_r;  // [B, K] when the grading task is active
    bool has_label = false;
    bool has_birads = false;
};

// Four independent affine heads on the fused study vector. Single-task modes
// evaluate only the relevant pair.
template <typename T>
HeadLogits<T> quad_heads(Binder<T>& bn, const std::string& p, Var<T> fused, std::size_t n_birads,
                         model::Task task) {
    HeadLogits<T> out;
    auto head = [&](const std::string& name, std::size_t k) {
        Var<T> w = bn(p + "." + name + ".w", {k, bn.tape().val(fused).shape(1)},
                      Init::KaimingUniform);
        Var<T> b = bn(p + "." + name + ".b", {k}, Init::Zeros);
        return ops::linear(fused, w, b);
    };
    if (task != model::Task::Birads) {
        out.label_l = head("label_l", 2);
        out.label_r = head("label_r", 2);
        out.has_label = true;
    }
    if (task != model::Task::Label) {
        out.birads_l = head("birads_l", n_birads);
        out.birads_r = head("birads_r", n_birads);
        out.has_birads = true;
    }
    return out;
}

// Inverse-frequency class weights, mean-normalized so the average weight over
// valid labels is 1: w_c = T / (K * count_c). Labels of -1 are skipped; a
// class that never occurs is a configuration error.
template <typename T>
Tensor<T> class_weights(const std::vector<int>& labels, std::size_t K) {
    std::vector<std::size_t> counts(K, 0);
    std::size_t total = 0;
    for (int y : labels) {
        if (y == -1) continue;
        if (y < 0 || static_cast<std::size_t>(y) >= K)
            throw DataError("class label " + std::to_string(y) + " outside 0.." +
                            std::to_string(K - 1));
        ++counts[static_cast<std::size_t>(y)];
        ++total;
    }
    Tensor<T> w({K});
    for (std::size_t c = 0; c < K; ++c) {
        if (counts[c] == 0)
            throw ConfigError("class " + std::to_string(c) +
                              " absent from the training labels; cannot weight it");
        w.data()[c] =
            static_cast<T>(static_cast<double>(total) / (static_cast<double>(K) * counts[c]));
    }
    return w;
}

// Class-weighted cross-entropy for one task over both sides of each study.
// A side labeled -1 contributes exactly zero and is excluded from the
// denominator: each study averages over its valid sides only (zero when both
// are masked), and the batch loss is the mean over studies.
template <typename T>
Var<T> task_loss(Var<T> logits_l, Var<T> logits_r, const std::vector<int>& y_l,
                 const std::vector<int>& y_r, const Tensor<T>& weights) {
    Tape<T>& t = *logits_l.tape;
    const std::size_t B = t.val(logits_l).shape(0);
    if (y_l.size() != B || y_r.size() != B)
        throw ShapeError("label count " + std::to_string(y_l.size()) + "/" +
                         std::to_string(y_r.size()) + " vs batch " + std::to_string(B));
    auto yl = std::make_shared<const std::vector<int>>(y_l);
    auto yr = std::make_shared<const std::vector<int>>(y_r);
    Var<T> ll = ops::masked_weighted_ce(logits_l, yl, weights);  // [B]
    Var<T> lr = ops::masked_weighted_ce(logits_r, yr, weights);  // [B]
    Tensor<T> inv({B});
    for (std::size_t b = 0; b < B; ++b) {
        const int valid = (y_l[b] != -1) + (y_r[b] != -1);
        inv.data()[b] = valid ? T(1) / static_cast<T>(valid) : T(0);
    }
    Var<T> per_study = ops::cmul(ops::add(ll, lr), inv);
    return ops::reduce_mean(per_study);
}

// Multi-task composition: equal halves. Single-task callers pass the lone
// task's loss straight through.
template <typename T>
Var<T> total_loss(Var<T> loss_label, Var<T> loss_birads) {
    return ops::scale(ops::add(loss_label, loss_birads), T(0.5));
}

}  // namespace vsmk::heads
