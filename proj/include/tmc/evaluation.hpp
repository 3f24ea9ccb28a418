#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace tmc {

struct ConfusionMatrix {
    std::int64_t tp = 0, tn = 0, fp = 0, fn = 0;
    std::int64_t total() const { return tp + tn + fp + fn; }
};

struct Metrics {
    std::optional<double> acc, ss, sp;
};

struct McNemarResult {
    std::int64_t b = 0;  // A correct, B wrong
    std::int64_t c = 0;  // A wrong, B correct
    double statistic = 0.0;  // continuity-corrected chi-square
    double p_chisq = 0.0;
    double p_exact = 0.0;  // two-sided exact binomial
    bool exact_used = false;  // true when b + c < 25
    double p_value = 0.0;     // the recommended p per the rule above
};

// score >= threshold predicts preictal (ties count as positive).
ConfusionMatrix confusion(const std::vector<double>& scores,
                          const std::vector<double>& labels, double threshold = 0.5);

Metrics metrics(const ConfusionMatrix& cm);

// Trapezoidal ROC area; equals P(score+ > score-) + 0.5 P(tie).
double roc_auc(const std::vector<double>& scores, const std::vector<double>& labels);

// Mean of consecutive groups; remainder dropped (warning appended if given).
std::vector<double> aggregate_windows(const std::vector<double>& scores, std::int64_t group,
                                      std::vector<std::string>* warnings = nullptr);

McNemarResult mcnemar(const std::vector<int>& preds_a, const std::vector<int>& preds_b,
                      const std::vector<int>& labels);

// chi-square(1 df) survival function.
double chisq1_sf(double x);

}  // namespace tmc
