#include "tmc/epoching.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "tmc/errors.hpp"
#include "tmc/rng.hpp"

namespace tmc {

namespace {

void check_sorted(const std::vector<SeizureAnnotation>& a) {
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i].onset >= a[i].offset)
            throw DataError("annotation " + std::to_string(i) + ": onset not before offset");
        if (i > 0 && a[i].onset < a[i - 1].offset)
            throw DataError("annotations unsorted or overlapping at index " + std::to_string(i));
    }
}

}  // namespace

std::vector<SeizureAnnotation> select_lead_seizures(
    const std::vector<SeizureAnnotation>& annotations, double gap_hours) {
    check_sorted(annotations);
    const double gap = gap_hours * 3600.0;
    std::vector<SeizureAnnotation> leads;
    for (std::size_t i = 0; i < annotations.size(); ++i) {
        if (i == 0 || annotations[i].onset - annotations[i - 1].offset >= gap)
            leads.push_back(annotations[i]);
    }
    return leads;
}

bool eligible_patient(const std::vector<SeizureAnnotation>& annotations,
                      std::int64_t channel_count, double gap_hours) {
    return channel_count == 23 &&
           select_lead_seizures(annotations, gap_hours).size() >= 3;
}

LabelResult label_spans(const std::vector<SeizureAnnotation>& annotations,
                        const LabelPolicy& policy,
                        const std::vector<FileSegment>& segments) {
    check_sorted(annotations);
    for (const auto& s : segments)
        if (s.start >= s.end)
            throw DataError("file segment '" + s.file_id + "' has nonpositive extent");

    const double sph = policy.sph_minutes * 60.0;
    const double pre = policy.preictal_minutes * 60.0;
    const double gap = policy.interictal_gap_hours * 3600.0;

    LabelResult res;
    auto emit = [&](double a, double b, SpanLabel label, int seizure) {
        // Intersect a timeline span with every recorded segment.
        bool any = false;
        for (const auto& seg : segments) {
            const double lo = std::max(a, seg.start);
            const double hi = std::min(b, seg.end);
            if (lo < hi) {
                res.spans.push_back({seg.file_id, lo, hi, label, seizure});
                any = true;
            }
        }
        return any;
    };

    // Preictal spans, truncated at the previous seizure's offset and merged
    // if a cluster of seizures produces overlap.
    std::vector<std::pair<double, double>> pres;
    std::vector<int> pre_src;
    for (std::size_t i = 0; i < annotations.size(); ++i) {
        const double onset = annotations[i].onset;
        double a = onset - sph - pre;
        const double b = onset - sph;
        if (i > 0) a = std::max(a, annotations[i - 1].offset);
        if (a >= b) {
            res.warnings.push_back("seizure " + std::to_string(i) +
                                   ": preictal span fully truncated by the previous seizure");
            continue;
        }
        if (!pres.empty() && a < pres.back().second) {
            pres.back().second = std::max(pres.back().second, b);
        } else {
            pres.emplace_back(a, b);
            pre_src.push_back(static_cast<int>(i));
        }
    }
    for (std::size_t i = 0; i < pres.size(); ++i) {
        if (!emit(pres[i].first, pres[i].second, SpanLabel::Preictal, pre_src[i]))
            res.warnings.push_back("seizure " + std::to_string(pre_src[i]) +
                                   ": preictal span [" + std::to_string(pres[i].first) + ", " +
                                   std::to_string(pres[i].second) +
                                   ") lies entirely outside recorded time");
    }

    // Interictal: recorded time at >= gap from every seizure. Build the
    // exclusion intervals [onset - gap, offset + gap] and take complements.
    double lo = -std::numeric_limits<double>::infinity();
    std::vector<std::pair<double, double>> keep;
    for (const auto& a : annotations) {
        const double excl_lo = a.onset - gap;
        if (lo < excl_lo) keep.emplace_back(lo, excl_lo);
        lo = std::max(lo, a.offset + gap);
    }
    keep.emplace_back(lo, std::numeric_limits<double>::infinity());
    for (const auto& [a, b] : keep) emit(a, b, SpanLabel::Interictal, -1);

    std::sort(res.spans.begin(), res.spans.end(),
              [](const LabeledSpan& x, const LabeledSpan& y) { return x.start < y.start; });
    return res;
}

std::vector<WindowRef> window_spans(const std::vector<LabeledSpan>& spans,
                                    const WindowSpec& spec) {
    if (spec.length_seconds <= 0) throw ConfigError("window length must be positive");
    if (spec.preictal_overlap_seconds < 0 ||
        spec.preictal_overlap_seconds >= spec.length_seconds)
        throw ConfigError("window overlap must lie in [0, length)");
    std::vector<WindowRef> out;
    for (const auto& span : spans) {
        const double len = spec.length_seconds;
        const double stride = span.label == SpanLabel::Preictal
                                  ? len - spec.preictal_overlap_seconds
                                  : len;
        const double extent = span.end - span.start;
        if (extent < len) continue;
        const auto count =
            static_cast<std::int64_t>(std::floor((extent - len) / stride + 1e-9)) + 1;
        for (std::int64_t i = 0; i < count; ++i)
            out.push_back({span.file_id, span.start + static_cast<double>(i) * stride,
                           span.label == SpanLabel::Preictal ? 1 : 0});
    }
    return out;
}

std::vector<WindowRef> balance(const std::vector<WindowRef>& samples, std::uint64_t seed) {
    std::vector<std::size_t> inter;
    std::size_t n_pre = 0;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        if (samples[i].label == 1)
            ++n_pre;
        else
            inter.push_back(i);
    }
    if (n_pre == 0) throw DataError("balance: no preictal samples");
    if (inter.size() <= n_pre) return samples;

    Rng rng(seed, 0xBA1A);
    rng.shuffle(inter);
    inter.resize(n_pre);
    std::sort(inter.begin(), inter.end());
    std::vector<WindowRef> out;
    out.reserve(2 * n_pre);
    std::size_t k = 0;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        if (samples[i].label == 1) {
            out.push_back(samples[i]);
        } else if (k < inter.size() && inter[k] == i) {
            out.push_back(samples[i]);
            ++k;
        }
    }
    return out;
}

SplitResult split(const std::vector<WindowRef>& samples, const SplitPlan& plan) {
    if (plan.folds < 2) throw ConfigError("split: folds must be >= 2");
    if (plan.train_fraction <= 0.0 || plan.train_fraction >= 1.0)
        throw ConfigError("split: train_fraction must lie in (0,1)");

    SplitResult res;
    res.folds.resize(static_cast<std::size_t>(plan.folds));
    Rng rng(plan.seed, 0x5147);
    // Fold assignment round-robins with a cursor shared across classes so
    // fold sizes stay even overall as well as within each class.
    std::size_t cursor = 0;
    for (int label = 0; label <= 1; ++label) {
        std::vector<std::size_t> idx;
        for (std::size_t i = 0; i < samples.size(); ++i)
            if (samples[i].label == label) idx.push_back(i);
        if (idx.size() < static_cast<std::size_t>(plan.folds))
            throw DataError("split: class " + std::to_string(label) + " has " +
                            std::to_string(idx.size()) + " samples, fewer than " +
                            std::to_string(plan.folds) + " folds");
        Rng r = rng.fork(static_cast<std::uint64_t>(label));
        r.shuffle(idx);
        const auto n_test = static_cast<std::size_t>(
            std::llround((1.0 - plan.train_fraction) * static_cast<double>(idx.size())));
        for (std::size_t i = 0; i < n_test; ++i) res.test.push_back(samples[idx[i]]);
        // Remaining samples round-robin into folds: per-class sizes differ by <= 1.
        for (std::size_t i = n_test; i < idx.size(); ++i)
            res.folds[cursor++ % static_cast<std::size_t>(plan.folds)].push_back(
                samples[idx[i]]);
    }
    return res;
}

std::string manifest_to_text(const SplitResult& s) {
    std::ostringstream os;
    os.precision(17);
    auto line = [&](const WindowRef& w, const char* part, int fold) {
        os << w.file_id << ' ' << w.start_second << ' ' << w.label << ' ' << part << ' '
           << fold << '\n';
    };
    for (const auto& w : s.test) line(w, "test", -1);
    for (std::size_t f = 0; f < s.folds.size(); ++f)
        for (const auto& w : s.folds[f]) line(w, "train", static_cast<int>(f));
    return os.str();
}

SplitResult manifest_from_text(const std::string& text) {
    SplitResult res;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::istringstream ls(line);
        WindowRef w;
        std::string part;
        int fold;
        if (!(ls >> w.file_id >> w.start_second >> w.label >> part >> fold))
            throw DataError("manifest line " + std::to_string(lineno) + ": malformed record");
        if (part == "test") {
            res.test.push_back(w);
        } else if (part == "train") {
            if (fold < 0) throw DataError("manifest line " + std::to_string(lineno) +
                                          ": train record without a fold");
            if (res.folds.size() <= static_cast<std::size_t>(fold))
                res.folds.resize(static_cast<std::size_t>(fold) + 1);
            res.folds[static_cast<std::size_t>(fold)].push_back(w);
        } else {
            throw DataError("manifest line " + std::to_string(lineno) + ": unknown split '" +
                            part + "'");
        }
    }
    return res;
}

std::vector<double> extract_window(const Recording& rec, const WindowRef& ref,
                                   const WindowSpec& spec) {
    const std::int64_t ws = spec.window_samples();
    const auto start = static_cast<std::int64_t>(
        std::llround((ref.start_second - rec.start_time) * rec.fs));
    if (start < 0 || start + ws > rec.samples())
        throw DataError("window at " + std::to_string(ref.start_second) +
                        " s falls outside recording '" + ref.file_id + "'");
    std::vector<double> out(static_cast<std::size_t>(rec.channels() * ws));
    for (std::int64_t c = 0; c < rec.channels(); ++c)
        for (std::int64_t i = 0; i < ws; ++i)
            out[static_cast<std::size_t>(c * ws + i)] =
                rec.data[static_cast<std::size_t>(c)][static_cast<std::size_t>(start + i)];
    return out;
}

}  // namespace tmc
