#include "tmc/evaluation.hpp"

#include <algorithm>
#include <cmath>

#include "tmc/errors.hpp"

namespace tmc {

ConfusionMatrix confusion(const std::vector<double>& scores,
                          const std::vector<double>& labels, double threshold) {
    if (scores.empty()) throw DataError("confusion: empty input");
    if (scores.size() != labels.size())
        throw DataError("confusion: scores and labels differ in length");
    ConfusionMatrix cm;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (labels[i] != 0.0 && labels[i] != 1.0)
            throw DataError("confusion: non-binary label at index " + std::to_string(i));
        const bool pred = scores[i] >= threshold;
        const bool truth = labels[i] == 1.0;
        if (pred && truth)
            ++cm.tp;
        else if (!pred && !truth)
            ++cm.tn;
        else if (pred)
            ++cm.fp;
        else
            ++cm.fn;
    }
    return cm;
}

Metrics metrics(const ConfusionMatrix& cm) {
    Metrics m;
    if (cm.total() > 0)
        m.acc = static_cast<double>(cm.tp + cm.tn) / static_cast<double>(cm.total());
    if (cm.tp + cm.fn > 0)
        m.ss = static_cast<double>(cm.tp) / static_cast<double>(cm.tp + cm.fn);
    if (cm.tn + cm.fp > 0)
        m.sp = static_cast<double>(cm.tn) / static_cast<double>(cm.tn + cm.fp);
    return m;
}

double roc_auc(const std::vector<double>& scores, const std::vector<double>& labels) {
    if (scores.size() != labels.size())
        throw DataError("roc_auc: scores and labels differ in length");
    std::int64_t pos = 0, neg = 0;
    for (double l : labels) (l == 1.0 ? pos : neg) += 1;
    if (pos == 0 || neg == 0) throw DataError("roc_auc: both classes must be present");

    // Sweep thresholds over the sorted unique scores, accumulating trapezoids
    // in (FPR, TPR) space.
    std::vector<std::size_t> order(scores.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

    double auc = 0.0;
    double tp = 0, fp = 0, prev_tp = 0, prev_fp = 0;
    std::size_t i = 0;
    while (i < order.size()) {
        const double s = scores[order[i]];
        while (i < order.size() && scores[order[i]] == s) {
            (labels[order[i]] == 1.0 ? tp : fp) += 1;
            ++i;
        }
        auc += (fp - prev_fp) * (tp + prev_tp) / 2.0;
        prev_tp = tp;
        prev_fp = fp;
    }
    return auc / (static_cast<double>(pos) * static_cast<double>(neg));
}

std::vector<double> aggregate_windows(const std::vector<double>& scores, std::int64_t group,
                                      std::vector<std::string>* warnings) {
    if (group <= 0) throw ConfigError("aggregate_windows: group must be positive");
    const std::size_t g = static_cast<std::size_t>(group);
    const std::size_t whole = scores.size() / g;
    if (scores.size() % g != 0 && warnings)
        warnings->push_back("aggregate_windows: dropped " + std::to_string(scores.size() % g) +
                            " trailing scores not filling a group of " + std::to_string(g));
    std::vector<double> out;
    out.reserve(whole);
    for (std::size_t w = 0; w < whole; ++w) {
        double s = 0.0;
        for (std::size_t j = 0; j < g; ++j) s += scores[w * g + j];
        out.push_back(s / static_cast<double>(g));
    }
    return out;
}

double chisq1_sf(double x) { return std::erfc(std::sqrt(x / 2.0)); }

McNemarResult mcnemar(const std::vector<int>& preds_a, const std::vector<int>& preds_b,
                      const std::vector<int>& labels) {
    if (preds_a.size() != preds_b.size() || preds_a.size() != labels.size())
        throw DataError("mcnemar: input lengths differ");
    McNemarResult r;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const bool a_ok = preds_a[i] == labels[i];
        const bool b_ok = preds_b[i] == labels[i];
        if (a_ok && !b_ok) ++r.b;
        if (!a_ok && b_ok) ++r.c;
    }
    const std::int64_t n = r.b + r.c;
    if (n == 0) throw DataError("mcnemar: no discordant pairs, test undefined");

    const double diff = std::abs(static_cast<double>(r.b - r.c)) - 1.0;
    r.statistic = diff * diff / static_cast<double>(n);
    r.p_chisq = chisq1_sf(r.statistic);

    // Exact two-sided binomial: 2 * P(X <= min(b,c)) under X ~ Bin(n, 0.5).
    const std::int64_t k = std::min(r.b, r.c);
    double tail = 0.0;
    double log_half_n = static_cast<double>(n) * std::log(0.5);
    for (std::int64_t i = 0; i <= k; ++i) {
        double log_comb = std::lgamma(static_cast<double>(n) + 1.0) -
                          std::lgamma(static_cast<double>(i) + 1.0) -
                          std::lgamma(static_cast<double>(n - i) + 1.0);
        tail += std::exp(log_comb + log_half_n);
    }
    r.p_exact = std::min(1.0, 2.0 * tail);
    if (r.b == r.c) r.p_exact = 1.0;

    r.exact_used = n < 25;
    r.p_value = r.exact_used ? r.p_exact : r.p_chisq;
    return r;
}

}  // namespace tmc
