#pragma once

#include <array>
#include <string>
#include <utility>
#include <vector>

#include "vsmk/gradcheck.hpp"
#include "vsmk/heads.hpp"
#include "vsmk/model.hpp"
#include "vsmk/rng.hpp"

namespace vsmk::model {

struct CheckResult {
    FdReport report;
    std::vector<std::string> names;  // parameter order used by the report

    std::string worst_name() const {
        return names.empty() ? std::string("<none>") : names[report.worst_param];
    }
    std::string describe() const {
        return report.describe() + " (parameter '" + worst_name() + "')";
    }
};

// Compares the analytic gradient of the total loss on one batch against
// central finite differences for every trainable tensor. Runs the forward
// pass in eval mode so the graph is deterministic across probe evaluations.
inline CheckResult fd_check_model(Model<double>& m, const Batch<double>& batch,
                                  const TaskWeights<double>& w, std::size_t samples, Rng& rng,
                                  double h = 1e-5) {
    Rng fwd_rng(0);
    std::map<std::string, Tensor<double>> grads;
    {
        Tape<double> tape(true);
        nn::Binder<double> bn(m.params(), tape);
        Outputs<double> out = m.forward(bn, batch, /*train=*/false, fwd_rng);
        LossVars<double> lv = m.loss(out, batch, w);
        tape.backward(lv.total);
        grads = bn.collect_grads();
    }

    CheckResult res;
    std::vector<Tensor<double>> pvec, gvec;
    for (const auto& [name, tensor] : m.params().entries()) {
        res.names.push_back(name);
        pvec.push_back(tensor);
        gvec.push_back(grads.at(name));
    }

    auto loss_at = [&](const std::vector<Tensor<double>>& ps) {
        for (std::size_t i = 0; i < ps.size(); ++i) m.params().set(res.names[i], ps[i]);
        Tape<double> tape(false);
        nn::Binder<double> bn(m.params(), tape);
        Rng r(0);
        Outputs<double> out = m.forward(bn, batch, /*train=*/false, r);
        LossVars<double> lv = m.loss(out, batch, w);
        return static_cast<double>(tape.val(lv.total).item());
    };
    res.report = fd_check(loss_at, pvec, gvec, samples, rng, h);
    // Restore the unperturbed parameters.
    for (std::size_t i = 0; i < pvec.size(); ++i) m.params().set(res.names[i], pvec[i]);
    return res;
}

// Same comparison for the fusion head and classifier heads alone, driven by
// fixed random per-view features instead of backbone encodings.
inline CheckResult fd_check_fusion_head(std::size_t B, std::size_t D, std::size_t n_birads,
                                        Task task, std::size_t samples, Rng& rng,
                                        double h = 1e-5) {
    Rng data_rng(rng.u64());
    std::array<Tensor<double>, fusion::kViews> feats;
    for (auto& f : feats) {
        f = Tensor<double>({B, D});
        for (std::size_t i = 0; i < f.size(); ++i) f.data()[i] = data_rng.uniform(-1.0, 1.0);
    }
    heads::BatchLabels labels;
    for (std::size_t b = 0; b < B; ++b) {
        // Mask one right side to exercise the exclusion rule.
        const bool mask_r = (b == B - 1);
        labels.label_l.push_back(static_cast<int>(data_rng.uniform_int(2)));
        labels.label_r.push_back(mask_r ? -1 : static_cast<int>(data_rng.uniform_int(2)));
        labels.birads_l.push_back(static_cast<int>(data_rng.uniform_int(n_birads)));
        labels.birads_r.push_back(mask_r ? -1 : static_cast<int>(data_rng.uniform_int(n_birads)));
    }
    TaskWeights<double> w;
    w.label = Tensor<double>::full({2}, 1.0);
    w.birads = Tensor<double>::full({n_birads}, 1.0);

    nn::ParamStore<double> store(data_rng.u64());
    auto run = [&](bool with_grad, std::map<std::string, Tensor<double>>* grads_out) {
        Tape<double> tape(with_grad);
        nn::Binder<double> bn(store, tape);
        std::array<Var<double>, fusion::kViews> views;
        for (std::size_t i = 0; i < fusion::kViews; ++i) views[i] = tape.leaf(feats[i]);
        Rng r(0);
        fusion::FusionOut<double> fo = fusion::fuse(bn, "fusion", views, 0.5, r, /*train=*/false);
        heads::HeadLogits<double> hl = heads::quad_heads(bn, "heads", fo.fused, n_birads, task);
        Var<double> total;
        Var<double> ll, lb;
        if (hl.has_label)
            ll = heads::task_loss(hl.label_l, hl.label_r, labels.label_l, labels.label_r, w.label);
        if (hl.has_birads)
            lb = heads::task_loss(hl.birads_l, hl.birads_r, labels.birads_l, labels.birads_r,
                                  w.birads);
        if (task == Task::Label) total = ll;
        else if (task == Task::Birads) total = lb;
        else total = heads::total_loss(ll, lb);
        if (with_grad) {
            tape.backward(total);
            *grads_out = bn.collect_grads();
        }
        return static_cast<double>(tape.val(total).item());
    };

    std::map<std::string, Tensor<double>> grads;
    run(true, &grads);

    CheckResult res;
    std::vector<Tensor<double>> pvec, gvec;
    for (const auto& [name, tensor] : store.entries()) {
        res.names.push_back(name);
        pvec.push_back(tensor);
        gvec.push_back(grads.at(name));
    }
    auto loss_at = [&](const std::vector<Tensor<double>>& ps) {
        for (std::size_t i = 0; i < ps.size(); ++i) store.set(res.names[i], ps[i]);
        return run(false, nullptr);
    };
    res.report = fd_check(loss_at, pvec, gvec, samples, rng, h);
    for (std::size_t i = 0; i < pvec.size(); ++i) store.set(res.names[i], pvec[i]);
    return res;
}

}  // namespace vsmk::model
