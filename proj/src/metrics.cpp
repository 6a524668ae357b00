#include "vsmk/metrics.hpp"

#include <algorithm>
#include <stdexcept>

#include "vsmk/errors.hpp"

namespace vsmk::metrics {

std::optional<double> binary_auc(const std::vector<double>& scores,
                                 const std::vector<int>& labels) {
    if (scores.size() != labels.size())
        throw ShapeError("binary_auc: scores and labels differ in length");
    std::vector<std::pair<double, int>> pairs;
    pairs.reserve(scores.size());
    std::size_t npos = 0, nneg = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        const int y = labels[i];
        if (y < 0) continue;
        if (y > 1) throw DataError("binary_auc: label out of {0,1}");
        pairs.emplace_back(scores[i], y);
        (y == 1 ? npos : nneg) += 1;
    }
    if (npos == 0 || nneg == 0) return std::nullopt;
    std::sort(pairs.begin(), pairs.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });

    // Walk tie groups in ascending score order.  Each positive beats every
    // negative strictly below (weight 1) and halves every negative tied with
    // it, so accumulate twice the numerator to stay in integers.
    double numer2 = 0;
    double neg_below = 0;
    std::size_t i = 0;
    while (i < pairs.size()) {
        std::size_t j = i;
        double p = 0, m = 0;
        while (j < pairs.size() && pairs[j].first == pairs[i].first) {
            (pairs[j].second == 1 ? p : m) += 1;
            ++j;
        }
        numer2 += p * (2.0 * neg_below + m);
        neg_below += m;
        i = j;
    }
    return numer2 / (2.0 * double(npos) * double(nneg));
}

std::optional<double> macro_ovr_auc(const std::vector<double>& scores, std::size_t n,
                                    std::size_t k, const std::vector<int>& labels) {
    if (scores.size() != n * k) throw ShapeError("macro_ovr_auc: score matrix size mismatch");
    if (labels.size() != n) throw ShapeError("macro_ovr_auc: label count mismatch");
    double sum = 0;
    std::size_t defined = 0;
    for (std::size_t c = 0; c < k; ++c) {
        std::vector<double> s;
        std::vector<int> y;
        s.reserve(n);
        y.reserve(n);
        for (std::size_t i = 0; i < n; ++i) {
            if (labels[i] < 0) continue;
            if (static_cast<std::size_t>(labels[i]) >= k)
                throw DataError("macro_ovr_auc: label out of range");
            s.push_back(scores[i * k + c]);
            y.push_back(static_cast<std::size_t>(labels[i]) == c ? 1 : 0);
        }
        if (auto a = binary_auc(s, y)) {
            sum += *a;
            ++defined;
        }
    }
    if (defined == 0) return std::nullopt;
    return sum / double(defined);
}

std::vector<int> argmax_rows(const std::vector<double>& scores, std::size_t n,
                             std::size_t k) {
    if (scores.size() != n * k) throw ShapeError("argmax_rows: score matrix size mismatch");
    if (k == 0) throw ShapeError("argmax_rows: zero classes");
    std::vector<int> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double* row = scores.data() + i * k;
        std::size_t best = 0;
        for (std::size_t c = 1; c < k; ++c)
            if (row[c] > row[best]) best = c;
        out[i] = static_cast<int>(best);
    }
    return out;
}

double macro_f1(const std::vector<int>& preds, const std::vector<int>& labels,
                std::size_t k, std::vector<std::string>* warnings) {
    if (preds.size() != labels.size())
        throw ShapeError("macro_f1: preds and labels differ in length");
    if (k == 0) throw ShapeError("macro_f1: zero classes");
    std::vector<std::size_t> tp(k, 0), fp(k, 0), fn(k, 0);
    for (std::size_t i = 0; i < preds.size(); ++i) {
        if (labels[i] < 0) continue;
        const auto y = static_cast<std::size_t>(labels[i]);
        const auto p = static_cast<std::size_t>(preds[i]);
        if (y >= k || preds[i] < 0 || p >= k)
            throw DataError("macro_f1: class index out of range");
        if (p == y) {
            ++tp[y];
        } else {
            ++fp[p];
            ++fn[y];
        }
    }
    double sum = 0;
    for (std::size_t c = 0; c < k; ++c) {
        const std::size_t denom = 2 * tp[c] + fp[c] + fn[c];
        if (denom == 0) {
            if (warnings)
                warnings->push_back("class " + std::to_string(c) +
                                    " absent from predictions and labels; F1 set to 0");
            continue;  // contributes 0
        }
        sum += 2.0 * double(tp[c]) / double(denom);
    }
    return sum / double(k);
}

std::optional<double> combined_score(const std::vector<std::optional<double>>& parts) {
    double sum = 0;
    std::size_t defined = 0;
    for (const auto& p : parts)
        if (p) {
            sum += *p;
            ++defined;
        }
    if (defined == 0) return std::nullopt;
    return sum / double(defined);
}

}  // namespace vsmk::metrics
