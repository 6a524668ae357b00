#pragma once

// Ranking and classification metrics for validation reporting.
//
// AUC is the Mann–Whitney statistic (probability a positive outranks a
// negative, ties counted half) computed from sorted tie groups with integer
// arithmetic, so it matches naive O(n^2) pair counting bit for bit.  When a
// metric is undefined (a single class in the labels) it is reported as
// absent via std::optional rather than defaulting to a misleading number.

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

namespace vsmk::metrics {

// Binary AUC over raw scores.  labels[i] must be 0 or 1; entries with a
// negative label are skipped (masked).  Returns nullopt unless at least one
// positive and one negative survive.
std::optional<double> binary_auc(const std::vector<double>& scores,
                                 const std::vector<int>& labels);

// One-vs-rest AUC averaged (unweighted) over the classes present in
// `labels`.  `scores` holds n rows of K per-class scores, row-major.
// Entries with label < 0 are skipped.  Returns nullopt when no per-class
// AUC is defined (fewer than two classes present).
std::optional<double> macro_ovr_auc(const std::vector<double>& scores, std::size_t n,
                                    std::size_t k, const std::vector<int>& labels);

// Row-wise argmax with lowest-index tie break.
std::vector<int> argmax_rows(const std::vector<double>& scores, std::size_t n,
                             std::size_t k);

// Unweighted mean of per-class F1 over all K classes.  A class absent from
// both predictions and labels contributes 0 and, when `warnings` is given,
// a message.  Pairs with label < 0 are skipped.
double macro_f1(const std::vector<int>& preds, const std::vector<int>& labels,
                std::size_t k, std::vector<std::string>* warnings = nullptr);

// Arithmetic mean of the AUCs that are defined; nullopt when none are.
// Used as the checkpoint-selection score, so a single-task run degenerates
// to that task's AUC alone.
std::optional<double> combined_score(const std::vector<std::optional<double>>& parts);

}  // namespace vsmk::metrics
