#pragma once

// Training and evaluation harness: epoch loop with per-study augmentation,
// AdamW with decoupled decay, global gradient clipping, plateau-driven LR
// reduction, per-epoch validation metrics, and best-checkpoint tracking on
// the combined score (mean of the AUCs the active tasks define, compared
// strictly).  Every random stream is keyed by (seed, purpose, epoch), so a
// fixed seed reproduces the run bit for bit.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "vsmk/data.hpp"
#include "vsmk/errors.hpp"
#include "vsmk/metrics.hpp"
#include "vsmk/model.hpp"
#include "vsmk/optimizer.hpp"
#include "vsmk/schedule.hpp"

namespace vsmk::train {

struct TrainConfig {
    double lr = -1;  // < 0 → per-backbone default (1e-5 pure state-space, else 1e-4)
    double weight_decay = 0.05;
    double clip_norm = 1.0;
    std::size_t batch_size = 8;
    std::size_t max_epochs = 100;
    double plateau_factor = 0.5;
    std::size_t plateau_patience = 10;
    double train_fraction = 0.8;
    std::uint64_t seed = 0;
    // Optional early exit once the combined score reaches a target; the
    // default runs all epochs.
    std::optional<double> stop_at_score;

    double resolved_lr(model::Variant v) const {
        if (lr >= 0) return lr;
        return v == model::Variant::Vssm ? 1e-5 : 1e-4;
    }

    void validate() const {
        if (batch_size == 0) throw ConfigError("batch_size must be positive");
        if (max_epochs == 0) throw ConfigError("max_epochs must be positive");
        if (plateau_factor <= 0 || plateau_factor >= 1)
            throw ConfigError("plateau_factor must lie in (0,1)");
        if (plateau_patience < 1) throw ConfigError("plateau_patience must be >= 1");
        if (train_fraction <= 0 || train_fraction >= 1)
            throw ConfigError("train_fraction must lie in (0,1)");
        if (weight_decay < 0) throw ConfigError("weight_decay must be non-negative");
        if (clip_norm <= 0) throw ConfigError("clip_norm must be positive");
    }
};

struct TaskMetrics {
    std::optional<double> auc;
    std::optional<double> f1;
};

struct EpochRow {
    std::size_t epoch = 0;
    double lr = 0;
    double train_loss = 0;
    TaskMetrics label;
    TaskMetrics birads;
    std::optional<double> combined;
};

// One validation study's interpretability record: the four attention weights
// plus the active tasks' per-side predictions (absent for masked sides).
struct AttentionRow {
    std::string study_id;
    std::array<double, fusion::kViews> alpha{};
    std::optional<double> label_prob_l, label_prob_r;  // P(malignant)
    std::optional<int> birads_pred_l, birads_pred_r;   // original grade values
};

struct EvalReport {
    TaskMetrics label;
    TaskMetrics birads;
    std::optional<double> combined;
    std::vector<AttentionRow> attention;
};

template <typename T>
struct TrainResult {
    std::vector<EpochRow> history;
    std::size_t best_epoch = 0;  // 0 → the combined score was never defined
    std::optional<double> best_score;
    std::map<std::string, Tensor<T>> best_params;
    EvalReport best_eval;
};

namespace detail {

inline void softmax_row(const double* in, std::size_t k, double* out) {
    double mx = in[0];
    for (std::size_t i = 1; i < k; ++i) mx = std::max(mx, in[i]);
    double sum = 0;
    for (std::size_t i = 0; i < k; ++i) {
        out[i] = std::exp(in[i] - mx);
        sum += out[i];
    }
    for (std::size_t i = 0; i < k; ++i) out[i] /= sum;
}

// Scores/labels gathered side-by-side over every valid (unmasked) side.
struct TaskPool {
    std::vector<double> scores;  // n rows of k class probabilities
    std::vector<int> truth;
    std::size_t k = 0;
};

inline TaskMetrics pool_metrics(const TaskPool& p) {
    TaskMetrics out;
    if (p.truth.empty()) return out;
    const std::size_t n = p.truth.size();
    if (p.k == 2) {
        std::vector<double> pos(n);
        for (std::size_t i = 0; i < n; ++i) pos[i] = p.scores[i * 2 + 1];
        out.auc = metrics::binary_auc(pos, p.truth);
    } else {
        out.auc = metrics::macro_ovr_auc(p.scores, n, p.k, p.truth);
    }
    out.f1 = metrics::macro_f1(metrics::argmax_rows(p.scores, n, p.k), p.truth, p.k);
    return out;
}

}  // namespace detail

// Inverse-frequency class weights for the active tasks, computed from the
// training split only.  Inactive tasks get unit weights.
template <typename T>
model::TaskWeights<T> compute_task_weights(const std::vector<data::FourViewStudy>& studies,
                                           const std::vector<std::size_t>& train_idx,
                                           const model::ModelConfig& cfg) {
    model::TaskWeights<T> w{Tensor<T>::full({2}, T(1)),
                            Tensor<T>::full({cfg.n_birads()}, T(1))};
    std::vector<int> label_ys, birads_ys;
    for (std::size_t i : train_idx) {
        const auto& s = studies.at(i);
        for (int raw : {s.labels.label_l, s.labels.label_r})
            if (raw >= 0) label_ys.push_back(raw);
        for (int raw : {s.labels.birads_l, s.labels.birads_r})
            if (raw >= 0) birads_ys.push_back(cfg.birads_index(raw));
    }
    if (cfg.task != model::Task::Birads) w.label = heads::class_weights<T>(label_ys, 2);
    if (cfg.task != model::Task::Label)
        w.birads = heads::class_weights<T>(birads_ys, cfg.n_birads());
    return w;
}

// Forward passes over `indices` in fixed order (no augmentation, no dropout)
// and reports pooled per-task metrics plus per-study attention rows.
template <typename T>
EvalReport evaluate(model::Model<T>& m, const std::vector<data::FourViewStudy>& studies,
                    const std::vector<std::size_t>& indices, std::size_t batch_size) {
    const model::ModelConfig& cfg = m.config();
    EvalReport rep;
    detail::TaskPool label_pool, birads_pool;
    label_pool.k = 2;
    birads_pool.k = cfg.n_birads();

    for (std::size_t start = 0; start < indices.size(); start += batch_size) {
        const std::size_t stop = std::min(indices.size(), start + batch_size);
        std::vector<std::size_t> chunk(indices.begin() + std::ptrdiff_t(start),
                                       indices.begin() + std::ptrdiff_t(stop));
        model::Batch<T> batch =
            data::make_batch<T>(studies, chunk, cfg, /*train=*/false, /*seed=*/0, /*epoch=*/0);
        Tape<T> tape(/*grad_enabled=*/false);
        nn::Binder<T> bn(m.params(), tape);
        Rng rng(0);  // unused: dropout is disabled outside training
        model::Outputs<T> out = m.forward(bn, batch, /*train=*/false, rng);

        const Tensor<T>& alpha = tape.val(out.alpha);
        const std::size_t B = batch.size();
        for (std::size_t b = 0; b < B; ++b) {
            AttentionRow row;
            row.study_id = batch.study_ids[b];
            for (std::size_t v = 0; v < fusion::kViews; ++v)
                row.alpha[v] = double(alpha.at(b, v));

            auto side_probs = [&](const Var<T>& logits, std::size_t k,
                                  std::vector<double>& probs) {
                const Tensor<T>& lt = tape.val(logits);
                std::vector<double> raw(k);
                for (std::size_t c = 0; c < k; ++c) raw[c] = double(lt.at(b, c));
                probs.resize(k);
                detail::softmax_row(raw.data(), k, probs.data());
            };

            if (out.logits.has_label) {
                std::vector<double> pl, pr;
                side_probs(out.logits.label_l, 2, pl);
                side_probs(out.logits.label_r, 2, pr);
                if (batch.labels.label_l[b] >= 0) {
                    row.label_prob_l = pl[1];
                    label_pool.scores.insert(label_pool.scores.end(), pl.begin(), pl.end());
                    label_pool.truth.push_back(batch.labels.label_l[b]);
                }
                if (batch.labels.label_r[b] >= 0) {
                    row.label_prob_r = pr[1];
                    label_pool.scores.insert(label_pool.scores.end(), pr.begin(), pr.end());
                    label_pool.truth.push_back(batch.labels.label_r[b]);
                }
            }
            if (out.logits.has_birads) {
                const std::size_t k = cfg.n_birads();
                std::vector<double> pl, pr;
                side_probs(out.logits.birads_l, k, pl);
                side_probs(out.logits.birads_r, k, pr);
                auto argmax = [&](const std::vector<double>& p) {
                    return int(std::max_element(p.begin(), p.end()) - p.begin());
                };
                if (batch.labels.birads_l[b] >= 0) {
                    row.birads_pred_l = cfg.birads_classes[std::size_t(argmax(pl))];
                    birads_pool.scores.insert(birads_pool.scores.end(), pl.begin(), pl.end());
                    birads_pool.truth.push_back(batch.labels.birads_l[b]);
                }
                if (batch.labels.birads_r[b] >= 0) {
                    row.birads_pred_r = cfg.birads_classes[std::size_t(argmax(pr))];
                    birads_pool.scores.insert(birads_pool.scores.end(), pr.begin(), pr.end());
                    birads_pool.truth.push_back(batch.labels.birads_r[b]);
                }
            }
            rep.attention.push_back(std::move(row));
        }
    }

    if (cfg.task != model::Task::Birads) rep.label = detail::pool_metrics(label_pool);
    if (cfg.task != model::Task::Label) rep.birads = detail::pool_metrics(birads_pool);
    rep.combined = metrics::combined_score({rep.label.auc, rep.birads.auc});
    return rep;
}

template <typename T>
TrainResult<T> train_model(model::Model<T>& m, const std::vector<data::FourViewStudy>& studies,
                           const TrainConfig& tc,
                           const std::function<void(const EpochRow&)>& on_epoch = {}) {
    tc.validate();
    const model::ModelConfig& cfg = m.config();
    if (studies.size() < 2) throw DataError("training needs at least two studies");

    auto [train_idx, val_idx] = data::split_dataset(studies.size(), tc.train_fraction, tc.seed);
    if (train_idx.empty() || val_idx.empty())
        throw DataError("degenerate split: empty training or validation set");

    model::TaskWeights<T> weights = compute_task_weights<T>(studies, train_idx, cfg);

    opt::AdamW<T> optimizer({tc.resolved_lr(cfg.variant), 0.9, 0.999, 1e-8, tc.weight_decay});
    opt::PlateauSchedule schedule(std::max(tc.resolved_lr(cfg.variant),
                                           std::numeric_limits<double>::min()),
                                  tc.plateau_factor, tc.plateau_patience);

    TrainResult<T> result;
    for (std::size_t epoch = 1; epoch <= tc.max_epochs; ++epoch) {
        // Deterministic epoch shuffle, independent of dataset contents.
        std::vector<std::size_t> order = train_idx;
        Rng shuffle_rng(mix64(tc.seed, fnv1a64("shuffle"), epoch));
        for (std::size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[shuffle_rng.uniform_int(i)]);

        double loss_sum = 0;
        for (std::size_t start = 0, bi = 0; start < order.size();
             start += tc.batch_size, ++bi) {
            const std::size_t stop = std::min(order.size(), start + tc.batch_size);
            std::vector<std::size_t> chunk(order.begin() + std::ptrdiff_t(start),
                                           order.begin() + std::ptrdiff_t(stop));
            model::Batch<T> batch =
                data::make_batch<T>(studies, chunk, cfg, /*train=*/true, tc.seed, epoch);

            Tape<T> tape(/*grad_enabled=*/true);
            nn::Binder<T> bn(m.params(), tape);
            Rng drop_rng(mix64(mix64(tc.seed, fnv1a64("dropout"), epoch), bi));
            model::Outputs<T> out = m.forward(bn, batch, /*train=*/true, drop_rng);
            model::LossVars<T> lv = m.loss(out, batch, weights);

            const double loss_val = double(tape.val(lv.total).data()[0]);
            const std::string where =
                " at epoch " + std::to_string(epoch) + ", batch " + std::to_string(bi);
            if (!std::isfinite(loss_val))
                throw NumericError("training diverged (non-finite loss)" + where);
            loss_sum += loss_val * double(batch.size());

            tape.backward(lv.total);
            auto grads = bn.collect_grads();
            try {
                opt::clip_gradients(grads, tc.clip_norm);
                optimizer.step(m.params(), grads);
            } catch (const NumericError& e) {
                throw NumericError(e.what() + where);
            }
        }

        EvalReport ev = evaluate(m, studies, val_idx, tc.batch_size);

        EpochRow row;
        row.epoch = epoch;
        row.lr = optimizer.lr();
        row.train_loss = loss_sum / double(order.size());
        row.label = ev.label;
        row.birads = ev.birads;
        row.combined = ev.combined;
        result.history.push_back(row);
        if (on_epoch) on_epoch(row);

        if (ev.combined && (!result.best_score || *ev.combined > *result.best_score)) {
            result.best_score = ev.combined;
            result.best_epoch = epoch;
            result.best_params = m.params().entries();
            result.best_eval = ev;
        }

        schedule.observe(ev.combined);
        optimizer.set_lr(schedule.lr());

        if (tc.stop_at_score && result.best_score && *result.best_score >= *tc.stop_at_score)
            break;
    }
    return result;
}

// --- CSV reports ------------------------------------------------------------

inline std::string csv_num(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

inline std::string csv_opt(const std::optional<double>& v) {
    return v ? csv_num(*v) : std::string();
}

inline constexpr const char* kMetricsHeader =
    "epoch,lr,train_loss,label_auc,label_f1,birads_auc,birads_f1";

inline std::string metrics_csv(const std::vector<EpochRow>& history) {
    std::string out = std::string(kMetricsHeader) + "\n";
    for (const auto& r : history) {
        out += std::to_string(r.epoch) + "," + csv_num(r.lr) + "," + csv_num(r.train_loss) +
               "," + csv_opt(r.label.auc) + "," + csv_opt(r.label.f1) + "," +
               csv_opt(r.birads.auc) + "," + csv_opt(r.birads.f1) + "\n";
    }
    return out;
}

inline constexpr const char* kAttentionHeader =
    "study_id,alpha_lcc,alpha_lmlo,alpha_rcc,alpha_rmlo,label_prob_l,label_prob_r,"
    "birads_pred_l,birads_pred_r";

inline std::string attention_csv(const std::vector<AttentionRow>& rows) {
    std::string out = std::string(kAttentionHeader) + "\n";
    for (const auto& r : rows) {
        out += r.study_id;
        for (double a : r.alpha) out += "," + csv_num(a);
        out += "," + csv_opt(r.label_prob_l) + "," + csv_opt(r.label_prob_r);
        out += ",";
        if (r.birads_pred_l) out += std::to_string(*r.birads_pred_l);
        out += ",";
        if (r.birads_pred_r) out += std::to_string(*r.birads_pred_r);
        out += "\n";
    }
    return out;
}

}  // namespace vsmk::train
