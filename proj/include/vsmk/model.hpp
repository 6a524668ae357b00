#pragma once

#include <array>
#include <cstring>
#include <string>
#include <utility>
#include <vector>

#include "vsmk/autograd.hpp"
#include "vsmk/backbone.hpp"
#include "vsmk/errors.hpp"
#include "vsmk/fusion.hpp"
#include "vsmk/heads.hpp"
#include "vsmk/model_config.hpp"
#include "vsmk/nn.hpp"
#include "vsmk/ops.hpp"
#include "vsmk/rng.hpp"

namespace vsmk::model {

// One tensorized training/eval batch. Image slots follow the canonical view
// order (L-CC, L-MLO, R-CC, R-MLO); absent views are all-zero images and the
// matching side labels are -1.
template <typename T>
struct Batch {
    std::array<Tensor<T>, fusion::kViews> images;  // each [B, 3, S, S]
    heads::BatchLabels labels;
    std::vector<std::string> study_ids;

    std::size_t size() const { return images[0].rank() ? images[0].shape(0) : 0; }
};

template <typename T>
struct Outputs {
    std::array<Var<T>, fusion::kViews> view_feats;  // each [B, D]
    Var<T> alpha;                                   // [B, 4]
    Var<T> fused;                                   // [B, 4D]
    heads::HeadLogits<T> logits;
};

template <typename T>
struct TaskWeights {
    Tensor<T> label;   // [2]
    Tensor<T> birads;  // [K]
};

template <typename T>
struct LossVars {
    Var<T> total;
    Var<T> label;   // valid when the label task is active
    Var<T> birads;  // valid when the grading task is active
};

namespace detail {

// Concatenates equal-shaped tensors along a new leading batch dimension
// grouping, i.e. [B,...] + [B,...] -> [2B,...].
template <typename T>
Tensor<T> stack_batches(const std::vector<const Tensor<T>*>& parts) {
    typename Tensor<T>::Shape shape = parts[0]->shape();
    std::size_t rows = 0;
    for (const Tensor<T>* p : parts) {
        if (p->rank() != parts[0]->rank())
            throw ShapeError("batch stack rank mismatch");
        for (std::size_t a = 1; a < p->rank(); ++a)
            if (p->shape(a) != shape[a]) throw ShapeError("batch stack shape mismatch");
        rows += p->shape(0);
    }
    shape[0] = rows;
    Tensor<T> out(shape);
    T* dst = out.data();
    for (const Tensor<T>* p : parts) {
        std::memcpy(dst, p->data(), p->size() * sizeof(T));
        dst += p->size();
    }
    return out;
}

}  // namespace detail

// The four-view multi-task classifier: per-view backbone encodings (shared or
// projection-specific parameter binding), gated attention fusion, and four
// affine heads. Parameters live in a name-keyed store; every forward pass
// re-binds them as leaves of the caller's tape.
template <typename T>
class Model {
public:
    explicit Model(ModelConfig cfg) : cfg_(std::move(cfg)), store_(cfg_.init_seed) {
        cfg_.validate();
    }

    const ModelConfig& config() const { return cfg_; }
    nn::ParamStore<T>& params() { return store_; }
    const nn::ParamStore<T>& params() const { return store_; }

    Outputs<T> forward(nn::Binder<T>& bn, const Batch<T>& batch, bool train, Rng& rng) {
        Tape<T>& t = bn.tape();
        const std::size_t B = batch.size();
        if (B == 0) throw DataError("empty batch");
        for (std::size_t i = 0; i < fusion::kViews; ++i) {
            const Tensor<T>& img = batch.images[i];
            if (img.rank() != 4 || img.shape(1) != 3 || img.shape(2) != cfg_.image_size ||
                img.shape(3) != cfg_.image_size || img.shape(0) != B)
                throw ShapeError("view " + std::string(fusion::kViewNames[i]) + " batch " +
                                 img.shape_str() + ", expected [" + std::to_string(B) + ", 3, " +
                                 std::to_string(cfg_.image_size) + ", " +
                                 std::to_string(cfg_.image_size) + "]");
        }

        Outputs<T> out;
        if (cfg_.binding == Binding::Shared) {
            Var<T> x = t.leaf(detail::stack_batches<T>(
                {&batch.images[0], &batch.images[1], &batch.images[2], &batch.images[3]}));
            Var<T> f = backbone::backbone_features(bn, "backbone", x, cfg_);  // [4B, D]
            for (std::size_t i = 0; i < fusion::kViews; ++i)
                out.view_feats[i] = ops::slice(f, /*axis=*/0, i * B, (i + 1) * B);
        } else {
            // One parameter set per projection: CC views share one branch,
            // MLO views the other.
            Var<T> xcc = t.leaf(detail::stack_batches<T>({&batch.images[0], &batch.images[2]}));
            Var<T> xmlo = t.leaf(detail::stack_batches<T>({&batch.images[1], &batch.images[3]}));
            Var<T> fcc = backbone::backbone_features(bn, "backbone.cc", xcc, cfg_);
            Var<T> fmlo = backbone::backbone_features(bn, "backbone.mlo", xmlo, cfg_);
            out.view_feats[0] = ops::slice(fcc, 0, 0, B);
            out.view_feats[2] = ops::slice(fcc, 0, B, 2 * B);
            out.view_feats[1] = ops::slice(fmlo, 0, 0, B);
            out.view_feats[3] = ops::slice(fmlo, 0, B, 2 * B);
        }

        fusion::FusionOut<T> fo =
            fusion::fuse(bn, "fusion", out.view_feats, cfg_.dropout_p, rng, train);
        out.alpha = fo.alpha;
        out.fused = fo.fused;
        out.logits = heads::quad_heads(bn, "heads", fo.fused, cfg_.n_birads(), cfg_.task);
        return out;
    }

    LossVars<T> loss(const Outputs<T>& out, const Batch<T>& batch, const TaskWeights<T>& w) {
        LossVars<T> lv;
        if (out.logits.has_label)
            lv.label = heads::task_loss(out.logits.label_l, out.logits.label_r,
                                        batch.labels.label_l, batch.labels.label_r, w.label);
        if (out.logits.has_birads)
            lv.birads = heads::task_loss(out.logits.birads_l, out.logits.birads_r,
                                         batch.labels.birads_l, batch.labels.birads_r, w.birads);
        switch (cfg_.task) {
            case Task::Label: lv.total = lv.label; break;
            case Task::Birads: lv.total = lv.birads; break;
            default: lv.total = heads::total_loss(lv.label, lv.birads); break;
        }
        return lv;
    }

private:
    ModelConfig cfg_;
    nn::ParamStore<T> store_;
};

}  // namespace vsmk::model
