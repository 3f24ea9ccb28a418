#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace tmc {

struct SignalHeader {
    std::string label;
    std::string dimension;
    double physical_min = 0.0;
    double physical_max = 0.0;
    std::int64_t digital_min = 0;
    std::int64_t digital_max = 0;
    std::int64_t num_samples_per_record = 0;

    double gain() const {
        return (physical_max - physical_min) /
               static_cast<double>(digital_max - digital_min);
    }
};

struct RecordingHeader {
    std::string version;
    std::int64_t header_bytes = 0;
    std::int64_t num_records = 0;
    double record_duration = 0.0;
    std::vector<SignalHeader> signals;
};

// Multi-channel signal in physical units (microvolts). Rows are stored as
// float: recordings run to hours and double rows would double the footprint
// without helping 16-bit source data.
struct Recording {
    std::vector<std::vector<float>> data;  // [channel][sample]
    double fs = 256.0;
    std::vector<std::string> channel_labels;
    double start_time = 0.0;  // seconds on the patient timeline

    std::int64_t channels() const { return static_cast<std::int64_t>(data.size()); }
    std::int64_t samples() const {
        return data.empty() ? 0 : static_cast<std::int64_t>(data[0].size());
    }
    double duration() const { return static_cast<double>(samples()) / fs; }
};

struct SeizureAnnotation {
    std::string file_id;
    double onset = 0.0;   // seconds from file start
    double offset = 0.0;  // seconds from file start
};

struct SynthSpec {
    double duration = 0.0;  // seconds
    std::int64_t num_channels = 23;
    std::vector<double> seizure_times;  // onsets, seconds, strictly increasing
    double signature_freq = 14.0;       // Hz
    double signature_amplitude = 0.0;   // microvolts
    double preictal_minutes = 60.0;     // span hosting the signature
    double sph_minutes = 5.0;
    std::vector<double> ar = {0.9};  // AR noise coefficients
    double noise_scale = 10.0;       // innovation stddev, microvolts
    std::uint64_t seed = 0;
};

constexpr double kSynthIctalSeconds = 40.0;  // fixed synthetic seizure length

struct SynthResult {
    Recording recording;
    std::vector<SeizureAnnotation> annotations;
    std::vector<std::string> warnings;
};

RecordingHeader parse_edf_header(const std::string& bytes);

// Parse a whole EDF byte buffer. channel_selection names the labels to keep,
// in output row order; an empty selection keeps every signal in file order.
Recording read_recording(const std::string& bytes,
                         const std::vector<std::string>& channel_selection);
Recording read_recording_file(const std::string& path,
                              const std::vector<std::string>& channel_selection);

// Serialize to EDF: 1-second records, 16-bit samples, per-channel physical
// range fitted to the data. Trailing samples past the last whole record are
// dropped.
std::string write_edf(const Recording& rec);

std::map<std::string, std::vector<SeizureAnnotation>> parse_summary(const std::string& text);

// Sidecar mapping file_id -> start_time on the patient timeline.
std::map<std::string, double> parse_offsets(const std::string& text);

SynthResult synth_recording(const SynthSpec& spec);

// The conventional CHB-MIT 23-channel montage, used as the default selection.
const std::vector<std::string>& default_channel_selection();

std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& bytes);

}  // namespace tmc
