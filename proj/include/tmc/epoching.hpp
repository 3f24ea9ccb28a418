#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tmc/signal_io.hpp"

namespace tmc {

struct LabelPolicy {
    double preictal_minutes = 60.0;  // 30 or 60 match the protocol
    double sph_minutes = 5.0;
    double interictal_gap_hours = 4.0;
};

struct WindowSpec {
    double length_seconds = 20.0;  // 5 or 20
    double preictal_overlap_seconds = 5.0;
    double fs = 256.0;

    std::int64_t window_samples() const {
        return static_cast<std::int64_t>(length_seconds * fs);
    }
};

enum class SpanLabel : int { Interictal = 0, Preictal = 1 };

struct LabeledSpan {
    std::string file_id;
    double start = 0.0;  // timeline seconds
    double end = 0.0;
    SpanLabel label = SpanLabel::Interictal;
    int source_seizure = -1;  // annotation index for preictal spans
};

// One recorded file's extent on the patient timeline.
struct FileSegment {
    std::string file_id;
    double start = 0.0;
    double end = 0.0;
};

// A window reference: enough to re-extract the sample from its recording.
struct WindowRef {
    std::string file_id;
    double start_second = 0.0;  // timeline seconds
    int label = 0;              // 0 interictal, 1 preictal
};

struct SplitPlan {
    double train_fraction = 0.8;
    int folds = 5;
    std::uint64_t seed = 0;
};

struct LabelResult {
    std::vector<LabeledSpan> spans;
    std::vector<std::string> warnings;
};

struct SplitResult {
    std::vector<WindowRef> test;
    std::vector<std::vector<WindowRef>> folds;
};

// Seizures whose onset is at least gap_hours after the previous offset; the
// first seizure always qualifies. Annotations must be sorted, non-overlapping.
std::vector<SeizureAnnotation> select_lead_seizures(
    const std::vector<SeizureAnnotation>& annotations, double gap_hours);

bool eligible_patient(const std::vector<SeizureAnnotation>& annotations,
                      std::int64_t channel_count, double gap_hours = 4.0);

// Preictal span per seizure: [onset - sph - preictal, onset - sph), clipped
// to recorded time and truncated at the previous seizure's offset;
// interictal: recorded time at >= gap from every seizure. Spans are
// intersected with file segments so no span crosses a file boundary.
LabelResult label_spans(const std::vector<SeizureAnnotation>& annotations,
                        const LabelPolicy& policy,
                        const std::vector<FileSegment>& segments);

std::vector<WindowRef> window_spans(const std::vector<LabeledSpan>& spans,
                                    const WindowSpec& spec);

// Subsample interictal windows to the preictal count; original order kept.
std::vector<WindowRef> balance(const std::vector<WindowRef>& samples, std::uint64_t seed);

SplitResult split(const std::vector<WindowRef>& samples, const SplitPlan& plan);

// Line-record manifest: file_id start_second label split fold.
std::string manifest_to_text(const SplitResult& s);
SplitResult manifest_from_text(const std::string& text);

// Copy one window out of a recording as doubles, [channels * samples].
std::vector<double> extract_window(const Recording& rec, const WindowRef& ref,
                                   const WindowSpec& spec);

}  // namespace tmc
