#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "tmc/epoching.hpp"
#include "tmc/evaluation.hpp"
#include "tmc/models.hpp"
#include "tmc/signal_io.hpp"
#include "tmc/training.hpp"

namespace tmc {

struct EdfSource {
    struct File {
        std::string id;
        std::string path;
    };
    std::vector<File> files;
    std::string summary_path;
    std::string offsets_path;  // optional; missing means all files start at 0
    std::vector<std::string> channels;  // empty: default 23-label montage
};

struct ExperimentConfig {
    std::string patient = "synthetic";
    bool use_synth = true;
    SynthSpec synth;
    EdfSource edf;

    LabelPolicy policy;
    WindowSpec window;
    SplitPlan plan;
    ModelConfig model;
    TrainOptions train;

    // Deterministic stratified subsampling applied after the split; 0 keeps
    // everything. Bounds wall time on large span sets.
    std::int64_t max_train_samples = 0;
    std::int64_t max_val_samples = 0;
    std::int64_t max_test_samples = 0;

    bool allow_ineligible = false;
    std::string out_dir = "out";

    std::string to_json() const;
    static ExperimentConfig from_json(const std::string& text);
};

// Loaded and timeline-aligned input data.
struct PatientData {
    std::map<std::string, Recording> recordings;
    std::vector<SeizureAnnotation> annotations;  // timeline seconds, sorted
    std::vector<FileSegment> segments;
    std::vector<std::string> warnings;
};

struct EvalReportData {
    ConfusionMatrix cm;
    Metrics m;
    double auc = 0.0;
    double threshold = 0.5;
    std::vector<WindowRef> refs;  // test windows, report order
    std::vector<double> scores;

    std::string to_json() const;
    std::string scores_csv() const;
};

struct ExperimentResult {
    SplitResult splits;
    TrainResult training;
    EvalReportData report;
};

PatientData load_patient(const ExperimentConfig& cfg);

// Stratified deterministic subsample to at most max_n windows (0: keep all).
std::vector<WindowRef> subsample(const std::vector<WindowRef>& refs, std::int64_t max_n,
                                 std::uint64_t seed);

// The full pipeline: load -> label -> window -> balance -> split -> train
// (fold 0 = validation) -> evaluate on the held-out test set. Writes
// config.json, manifest.txt, history.txt, checkpoint.bin, report.json,
// scores.csv and warnings.txt under cfg.out_dir.
ExperimentResult run_experiment(const ExperimentConfig& cfg);

// Stages for the step-wise CLI commands.
SplitResult segment_patient(const ExperimentConfig& cfg, const PatientData& data,
                            std::vector<std::string>* warnings = nullptr);

// Pair two score files; when one run used 5-s windows and the other 20-s,
// the 5-s scores are averaged in groups of four first.
McNemarResult compare_reports(const std::string& csv_a, const std::string& csv_b,
                              double threshold = 0.5);

std::string mcnemar_to_json(const McNemarResult& r);

}  // namespace tmc
