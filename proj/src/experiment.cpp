#include "tmc/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <sstream>

#include <json.hpp>

#include "tmc/errors.hpp"
#include "tmc/rng.hpp"

namespace tmc {

using nlohmann::json;

namespace {

json policy_json(const LabelPolicy& p) {
    return {{"preictal_minutes", p.preictal_minutes},
            {"sph_minutes", p.sph_minutes},
            {"interictal_gap_hours", p.interictal_gap_hours}};
}

json window_json(const WindowSpec& w) {
    return {{"length_seconds", w.length_seconds},
            {"preictal_overlap_seconds", w.preictal_overlap_seconds},
            {"fs", w.fs}};
}

json plan_json(const SplitPlan& p) {
    return {{"train_fraction", p.train_fraction}, {"folds", p.folds}, {"seed", p.seed}};
}

json train_json(const TrainOptions& t) {
    return {{"epochs", t.epochs},         {"batch_size", t.batch_size},
            {"seed", t.seed},             {"lr0", t.lr0},
            {"decay_rate", t.decay_rate}, {"decay_interval", t.decay_interval},
            {"keep_best", t.keep_best}};
}

}  // namespace

std::string ExperimentConfig::to_json() const {
    json j;
    j["schema_version"] = 1;
    j["patient"] = patient;
    if (use_synth) {
        j["source"] = {{"type", "synth"},
                       {"duration", synth.duration},
                       {"num_channels", synth.num_channels},
                       {"seizure_times", synth.seizure_times},
                       {"signature_freq", synth.signature_freq},
                       {"signature_amplitude", synth.signature_amplitude},
                       {"preictal_minutes", synth.preictal_minutes},
                       {"sph_minutes", synth.sph_minutes},
                       {"ar", synth.ar},
                       {"noise_scale", synth.noise_scale},
                       {"seed", synth.seed}};
    } else {
        json files = json::array();
        for (const auto& f : edf.files) files.push_back({{"id", f.id}, {"path", f.path}});
        j["source"] = {{"type", "edf"},
                       {"files", files},
                       {"summary", edf.summary_path},
                       {"offsets", edf.offsets_path},
                       {"channels", edf.channels}};
    }
    j["policy"] = policy_json(policy);
    j["window"] = window_json(window);
    j["split"] = plan_json(plan);
    j["model"] = json::parse(model.to_json());
    j["train"] = train_json(train);
    j["max_train_samples"] = max_train_samples;
    j["max_val_samples"] = max_val_samples;
    j["max_test_samples"] = max_test_samples;
    j["allow_ineligible"] = allow_ineligible;
    j["out_dir"] = out_dir;
    return j.dump(2);
}

ExperimentConfig ExperimentConfig::from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("experiment config: invalid JSON: ") + e.what());
    }
    try {
        if (j.value("schema_version", 0) != 1)
            throw ConfigError("experiment config: unsupported schema_version");
        ExperimentConfig c;
        c.patient = j.value("patient", c.patient);
        const json& src = j.at("source");
        const std::string type = src.at("type").get<std::string>();
        if (type == "synth") {
            c.use_synth = true;
            c.synth.duration = src.at("duration").get<double>();
            c.synth.num_channels = src.value("num_channels", c.synth.num_channels);
            c.synth.seizure_times = src.value("seizure_times", c.synth.seizure_times);
            c.synth.signature_freq = src.value("signature_freq", c.synth.signature_freq);
            c.synth.signature_amplitude =
                src.value("signature_amplitude", c.synth.signature_amplitude);
            c.synth.preictal_minutes = src.value("preictal_minutes", c.synth.preictal_minutes);
            c.synth.sph_minutes = src.value("sph_minutes", c.synth.sph_minutes);
            c.synth.ar = src.value("ar", c.synth.ar);
            c.synth.noise_scale = src.value("noise_scale", c.synth.noise_scale);
            c.synth.seed = src.value("seed", c.synth.seed);
        } else if (type == "edf") {
            c.use_synth = false;
            for (const auto& f : src.at("files"))
                c.edf.files.push_back(
                    {f.at("id").get<std::string>(), f.at("path").get<std::string>()});
            c.edf.summary_path = src.at("summary").get<std::string>();
            c.edf.offsets_path = src.value("offsets", std::string());
            c.edf.channels = src.value("channels", std::vector<std::string>());
        } else {
            throw ConfigError("experiment config: unknown source type '" + type + "'");
        }
        if (j.contains("policy")) {
            const json& p = j["policy"];
            c.policy.preictal_minutes = p.value("preictal_minutes", c.policy.preictal_minutes);
            c.policy.sph_minutes = p.value("sph_minutes", c.policy.sph_minutes);
            c.policy.interictal_gap_hours =
                p.value("interictal_gap_hours", c.policy.interictal_gap_hours);
        }
        if (j.contains("window")) {
            const json& w = j["window"];
            c.window.length_seconds = w.value("length_seconds", c.window.length_seconds);
            c.window.preictal_overlap_seconds =
                w.value("preictal_overlap_seconds", c.window.preictal_overlap_seconds);
            c.window.fs = w.value("fs", c.window.fs);
        }
        if (j.contains("split")) {
            const json& p = j["split"];
            c.plan.train_fraction = p.value("train_fraction", c.plan.train_fraction);
            c.plan.folds = p.value("folds", c.plan.folds);
            c.plan.seed = p.value("seed", c.plan.seed);
        }
        if (j.contains("model")) c.model = ModelConfig::from_json(j["model"].dump());
        if (j.contains("train")) {
            const json& t = j["train"];
            c.train.epochs = t.value("epochs", c.train.epochs);
            c.train.batch_size = t.value("batch_size", c.train.batch_size);
            c.train.seed = t.value("seed", c.train.seed);
            c.train.lr0 = t.value("lr0", c.train.lr0);
            c.train.decay_rate = t.value("decay_rate", c.train.decay_rate);
            c.train.decay_interval = t.value("decay_interval", c.train.decay_interval);
            c.train.keep_best = t.value("keep_best", c.train.keep_best);
        }
        c.max_train_samples = j.value("max_train_samples", c.max_train_samples);
        c.max_val_samples = j.value("max_val_samples", c.max_val_samples);
        c.max_test_samples = j.value("max_test_samples", c.max_test_samples);
        c.allow_ineligible = j.value("allow_ineligible", c.allow_ineligible);
        c.out_dir = j.value("out_dir", c.out_dir);
        return c;
    } catch (const json::exception& e) {
        throw ConfigError(std::string("experiment config: ") + e.what());
    }
}

PatientData load_patient(const ExperimentConfig& cfg) {
    PatientData d;
    if (cfg.use_synth) {
        SynthSpec spec = cfg.synth;
        // The signature must occupy the same spans the labeler will mark.
        spec.preictal_minutes = cfg.policy.preictal_minutes;
        spec.sph_minutes = cfg.policy.sph_minutes;
        SynthResult r = synth_recording(spec);
        const std::string id = cfg.patient;
        for (auto& a : r.annotations) {
            a.file_id = id;
            d.annotations.push_back(a);
        }
        d.segments.push_back({id, 0.0, r.recording.duration()});
        d.warnings = std::move(r.warnings);
        d.recordings.emplace(id, std::move(r.recording));
        return d;
    }

    if (cfg.edf.files.empty()) throw ConfigError("experiment: no EDF files configured");
    const auto& selection =
        cfg.edf.channels.empty() ? default_channel_selection() : cfg.edf.channels;
    const auto summary = parse_summary(read_file(cfg.edf.summary_path));
    std::map<std::string, double> offsets;
    if (!cfg.edf.offsets_path.empty()) offsets = parse_offsets(read_file(cfg.edf.offsets_path));
    for (const auto& f : cfg.edf.files) {
        Recording rec = read_recording_file(f.path, selection);
        const double start = offsets.count(f.id) ? offsets.at(f.id) : 0.0;
        rec.start_time = start;
        d.segments.push_back({f.id, start, start + rec.duration()});
        auto it = summary.find(f.id);
        if (it != summary.end())
            for (const auto& a : it->second)
                d.annotations.push_back({f.id, a.onset + start, a.offset + start});
        d.recordings.emplace(f.id, std::move(rec));
    }
    std::sort(d.annotations.begin(), d.annotations.end(),
              [](const SeizureAnnotation& a, const SeizureAnnotation& b) {
                  return a.onset < b.onset;
              });
    std::sort(d.segments.begin(), d.segments.end(),
              [](const FileSegment& a, const FileSegment& b) { return a.start < b.start; });
    return d;
}

std::vector<WindowRef> subsample(const std::vector<WindowRef>& refs, std::int64_t max_n,
                                 std::uint64_t seed) {
    if (max_n <= 0 || static_cast<std::int64_t>(refs.size()) <= max_n) return refs;
    std::vector<std::size_t> keep;
    for (int label = 0; label <= 1; ++label) {
        std::vector<std::size_t> idx;
        for (std::size_t i = 0; i < refs.size(); ++i)
            if (refs[i].label == label) idx.push_back(i);
        Rng rng(seed, 0x5B5A + static_cast<std::uint64_t>(label));
        rng.shuffle(idx);
        const auto cap = static_cast<std::size_t>(max_n / 2);
        idx.resize(std::min(idx.size(), cap));
        keep.insert(keep.end(), idx.begin(), idx.end());
    }
    std::sort(keep.begin(), keep.end());
    std::vector<WindowRef> out;
    out.reserve(keep.size());
    for (std::size_t i : keep) out.push_back(refs[i]);
    return out;
}

SplitResult segment_patient(const ExperimentConfig& cfg, const PatientData& data,
                            std::vector<std::string>* warnings) {
    const auto channels = data.recordings.begin()->second.channels();
    if (!cfg.allow_ineligible &&
        !eligible_patient(data.annotations, channels, cfg.policy.interictal_gap_hours))
        throw ConfigError("patient '" + cfg.patient +
                          "' is ineligible (needs 23 channels and >= 3 lead seizures); "
                          "pass --allow-ineligible to proceed");
    LabelResult lab = label_spans(data.annotations, cfg.policy, data.segments);
    if (warnings)
        warnings->insert(warnings->end(), lab.warnings.begin(), lab.warnings.end());
    const auto wins = window_spans(lab.spans, cfg.window);
    const auto bal = balance(wins, cfg.plan.seed);
    SplitResult s = split(bal, cfg.plan);
    s.test = subsample(s.test, cfg.max_test_samples, cfg.plan.seed + 1);
    return s;
}

namespace {

WindowDataset materialize(const std::vector<WindowRef>& refs, const PatientData& data,
                          const WindowSpec& spec) {
    WindowDataset d;
    d.samples = spec.window_samples();
    d.channels = data.recordings.begin()->second.channels();
    for (const auto& r : refs) {
        auto it = data.recordings.find(r.file_id);
        if (it == data.recordings.end())
            throw DataError("manifest references unknown file '" + r.file_id + "'");
        const auto w = extract_window(it->second, r, spec);
        d.append(std::vector<float>(w.begin(), w.end()), static_cast<double>(r.label));
    }
    return d;
}

}  // namespace

std::string EvalReportData::to_json() const {
    json j;
    j["confusion"] = {{"tp", cm.tp}, {"tn", cm.tn}, {"fp", cm.fp}, {"fn", cm.fn}};
    j["acc"] = m.acc ? json(*m.acc) : json(nullptr);
    j["ss"] = m.ss ? json(*m.ss) : json(nullptr);
    j["sp"] = m.sp ? json(*m.sp) : json(nullptr);
    j["auc"] = auc;
    j["threshold"] = threshold;
    j["n_test"] = scores.size();
    return j.dump(2);
}

std::string EvalReportData::scores_csv() const {
    std::ostringstream os;
    os.precision(17);
    os << "file_id,start_second,label,score\n";
    for (std::size_t i = 0; i < scores.size(); ++i)
        os << refs[i].file_id << ',' << refs[i].start_second << ',' << refs[i].label << ','
           << scores[i] << '\n';
    return os.str();
}

ExperimentResult run_experiment(const ExperimentConfig& cfg) {
    namespace fs = std::filesystem;
    fs::create_directories(cfg.out_dir);
    const auto path = [&](const char* name) { return (fs::path(cfg.out_dir) / name).string(); };

    PatientData data = load_patient(cfg);
    std::vector<std::string> warnings = data.warnings;

    ExperimentResult res;
    res.splits = segment_patient(cfg, data, &warnings);

    ModelConfig mcfg = cfg.model;
    mcfg.channels = data.recordings.begin()->second.channels();
    mcfg.samples = cfg.window.window_samples();

    // Persist the exact configuration that produced this directory.
    ExperimentConfig stamped = cfg;
    stamped.model = mcfg;
    write_file(path("config.json"), stamped.to_json());
    write_file(path("manifest.txt"), manifest_to_text(res.splits));

    // Fold 0 is the validation split; the rest train.
    std::vector<WindowRef> train_refs;
    for (std::size_t f = 1; f < res.splits.folds.size(); ++f)
        train_refs.insert(train_refs.end(), res.splits.folds[f].begin(),
                          res.splits.folds[f].end());
    train_refs = subsample(train_refs, cfg.max_train_samples, cfg.plan.seed + 2);
    const auto val_refs =
        subsample(res.splits.folds.at(0), cfg.max_val_samples, cfg.plan.seed + 3);

    WindowDataset train_set = materialize(train_refs, data, cfg.window);
    WindowDataset val_set = materialize(val_refs, data, cfg.window);
    WindowDataset test_set = materialize(res.splits.test, data, cfg.window);

    auto model = build_model(mcfg);
    TrainOptions topts = cfg.train;
    topts.batch_size =
        std::min<std::int64_t>(topts.batch_size, static_cast<std::int64_t>(train_set.size()));
    res.training = train(*model, train_set, val_set, topts);
    write_file(path("history.txt"), history_to_text(res.training.history));
    auto entries = model->state();
    save_checkpoint(entries, path("checkpoint.bin"));

    res.report.refs = res.splits.test;
    res.report.scores = predict(*model, test_set, topts.batch_size);
    res.report.cm = confusion(res.report.scores, test_set.labels, res.report.threshold);
    res.report.m = metrics(res.report.cm);
    res.report.auc = roc_auc(res.report.scores, test_set.labels);
    write_file(path("report.json"), res.report.to_json());
    write_file(path("scores.csv"), res.report.scores_csv());

    std::ostringstream ws;
    for (const auto& w : warnings) ws << w << '\n';
    write_file(path("warnings.txt"), ws.str());
    return res;
}

namespace {

struct ScoreRows {
    std::vector<int> labels;
    std::vector<double> scores;
};

ScoreRows parse_scores_csv(const std::string& text) {
    ScoreRows r;
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line) || line.rfind("file_id,", 0) != 0)
        throw DataError("scores csv: missing header");
    int lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string file_id, start, label, score;
        if (!std::getline(ls, file_id, ',') || !std::getline(ls, start, ',') ||
            !std::getline(ls, label, ',') || !std::getline(ls, score, ','))
            throw DataError("scores csv line " + std::to_string(lineno) + ": malformed row");
        r.labels.push_back(std::stoi(label));
        r.scores.push_back(std::stod(score));
    }
    return r;
}

ScoreRows aggregate_rows(const ScoreRows& in, std::int64_t group) {
    ScoreRows out;
    out.scores = aggregate_windows(in.scores, group);
    for (std::size_t g = 0; g < out.scores.size(); ++g) {
        const int label = in.labels[g * static_cast<std::size_t>(group)];
        for (std::int64_t j = 1; j < group; ++j)
            if (in.labels[g * static_cast<std::size_t>(group) + static_cast<std::size_t>(j)] !=
                label)
                throw DataError("compare: a score group mixes labels; test sets unalignable");
        out.labels.push_back(label);
    }
    return out;
}

}  // namespace

McNemarResult compare_reports(const std::string& csv_a, const std::string& csv_b,
                              double threshold) {
    ScoreRows a = parse_scores_csv(csv_a);
    ScoreRows b = parse_scores_csv(csv_b);
    if (a.scores.size() == 4 * b.scores.size())
        a = aggregate_rows(a, 4);
    else if (b.scores.size() == 4 * a.scores.size())
        b = aggregate_rows(b, 4);
    if (a.scores.size() != b.scores.size())
        throw DataError("compare: test sets unalignable (" + std::to_string(a.scores.size()) +
                        " vs " + std::to_string(b.scores.size()) + " windows)");
    if (a.labels != b.labels)
        throw DataError("compare: reports disagree on test labels");
    std::vector<int> pa, pb;
    for (double s : a.scores) pa.push_back(s >= threshold ? 1 : 0);
    for (double s : b.scores) pb.push_back(s >= threshold ? 1 : 0);
    return mcnemar(pa, pb, a.labels);
}

std::string mcnemar_to_json(const McNemarResult& r) {
    json j;
    j["b"] = r.b;
    j["c"] = r.c;
    j["statistic"] = r.statistic;
    j["p_chisq"] = r.p_chisq;
    j["p_exact"] = r.p_exact;
    j["exact_used"] = r.exact_used;
    j["p_value"] = r.p_value;
    j["reject_at_0.05"] = r.p_value < 0.05;
    return j.dump(2);
}

}  // namespace tmc
