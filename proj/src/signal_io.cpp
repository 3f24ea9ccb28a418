#include "tmc/signal_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <regex>
#include <sstream>

#include "tmc/errors.hpp"
#include "tmc/rng.hpp"

namespace tmc {

namespace {

std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

std::string field(const std::string& bytes, std::size_t off, std::size_t len,
                  const char* what) {
    if (off + len > bytes.size())
        throw DataError(std::string("EDF header truncated at field '") + what + "'");
    return trim(bytes.substr(off, len));
}

std::int64_t int_field(const std::string& bytes, std::size_t off, std::size_t len,
                       const char* what) {
    const std::string s = field(bytes, off, len, what);
    try {
        std::size_t pos = 0;
        const std::int64_t v = std::stoll(s, &pos);
        if (pos != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw DataError(std::string("EDF header: non-numeric '") + what + "' field: \"" + s +
                        "\"");
    }
}

double real_field(const std::string& bytes, std::size_t off, std::size_t len,
                  const char* what) {
    const std::string s = field(bytes, off, len, what);
    try {
        std::size_t pos = 0;
        const double v = std::stod(s, &pos);
        if (pos != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw DataError(std::string("EDF header: non-numeric '") + what + "' field: \"" + s +
                        "\"");
    }
}

void put_field(std::string& out, const std::string& value, std::size_t len) {
    std::string v = value.substr(0, len);
    v.resize(len, ' ');
    out += v;
}

std::string fmt_real(double v, std::size_t len) {
    std::ostringstream os;
    os.precision(static_cast<int>(len) - 2);
    os << v;
    std::string s = os.str();
    while (s.size() > len && s.find('.') != std::string::npos) s.pop_back();
    return s;
}

}  // namespace

RecordingHeader parse_edf_header(const std::string& bytes) {
    if (bytes.size() < 256) throw DataError("EDF header: input shorter than 256 bytes");
    RecordingHeader h;
    h.version = field(bytes, 0, 8, "version");
    h.header_bytes = int_field(bytes, 184, 8, "header bytes");
    h.num_records = int_field(bytes, 236, 8, "number of records");
    h.record_duration = real_field(bytes, 244, 8, "record duration");
    const std::int64_t ns = int_field(bytes, 252, 4, "number of signals");
    if (ns < 0) throw DataError("EDF header: negative signal count");
    if (h.num_records < 0) throw DataError("EDF header: negative record count");
    const std::size_t need = 256 + static_cast<std::size_t>(ns) * 256;
    if (bytes.size() < need)
        throw DataError("EDF header truncated: signal subheaders need " + std::to_string(need) +
                        " bytes, have " + std::to_string(bytes.size()));
    const std::size_t n = static_cast<std::size_t>(ns);
    h.signals.resize(n);
    // Subheaders are stored field-major: all labels, then all transducers, ...
    std::size_t off = 256;
    for (std::size_t i = 0; i < n; ++i) h.signals[i].label = field(bytes, off + 16 * i, 16, "label");
    off += n * 16;   // labels
    off += n * 80;   // transducers
    for (std::size_t i = 0; i < n; ++i)
        h.signals[i].dimension = field(bytes, off + 8 * i, 8, "dimension");
    off += n * 8;
    for (std::size_t i = 0; i < n; ++i)
        h.signals[i].physical_min = real_field(bytes, off + 8 * i, 8, "physical min");
    off += n * 8;
    for (std::size_t i = 0; i < n; ++i)
        h.signals[i].physical_max = real_field(bytes, off + 8 * i, 8, "physical max");
    off += n * 8;
    for (std::size_t i = 0; i < n; ++i)
        h.signals[i].digital_min = int_field(bytes, off + 8 * i, 8, "digital min");
    off += n * 8;
    for (std::size_t i = 0; i < n; ++i)
        h.signals[i].digital_max = int_field(bytes, off + 8 * i, 8, "digital max");
    off += n * 8;
    off += n * 80;  // prefiltering
    for (std::size_t i = 0; i < n; ++i)
        h.signals[i].num_samples_per_record =
            int_field(bytes, off + 8 * i, 8, "samples per record");

    for (const auto& s : h.signals) {
        if (s.digital_min >= s.digital_max)
            throw DataError("EDF header: signal '" + s.label + "' has digital_min >= digital_max");
        if (s.physical_min == s.physical_max)
            throw DataError("EDF header: signal '" + s.label + "' has equal physical min/max");
        if (s.num_samples_per_record <= 0)
            throw DataError("EDF header: signal '" + s.label + "' has no samples per record");
    }
    return h;
}

Recording read_recording(const std::string& bytes,
                         const std::vector<std::string>& channel_selection) {
    const RecordingHeader h = parse_edf_header(bytes);

    std::vector<std::size_t> pick;
    if (channel_selection.empty()) {
        for (std::size_t i = 0; i < h.signals.size(); ++i) pick.push_back(i);
    } else {
        for (const auto& want : channel_selection) {
            const std::string w = trim(want);
            auto it = std::find_if(h.signals.begin(), h.signals.end(),
                                   [&](const SignalHeader& s) { return s.label == w; });
            if (it == h.signals.end())
                throw DataError("EDF: channel '" + w + "' not present in file");
            pick.push_back(static_cast<std::size_t>(it - h.signals.begin()));
        }
    }
    if (pick.empty()) throw DataError("EDF: no channels selected");

    std::int64_t record_size = 0;  // samples per record across all signals
    for (const auto& s : h.signals) record_size += s.num_samples_per_record;
    const std::size_t data_off = 256 + h.signals.size() * 256;
    const std::size_t need =
        data_off + static_cast<std::size_t>(h.num_records * record_size) * 2;
    if (bytes.size() < need)
        throw DataError("EDF: sample data inconsistent with header: need " +
                        std::to_string(need) + " bytes, have " + std::to_string(bytes.size()));

    const std::int64_t nspr0 = h.signals[pick[0]].num_samples_per_record;
    for (std::size_t p : pick)
        if (h.signals[p].num_samples_per_record != nspr0)
            throw DataError("EDF: selected channels disagree on sampling rate");
    if (h.record_duration <= 0.0) throw DataError("EDF: nonpositive record duration");
    const double fs = static_cast<double>(nspr0) / h.record_duration;

    // Per-signal sample offset inside one record.
    std::vector<std::int64_t> sig_off(h.signals.size(), 0);
    {
        std::int64_t acc = 0;
        for (std::size_t i = 0; i < h.signals.size(); ++i) {
            sig_off[i] = acc;
            acc += h.signals[i].num_samples_per_record;
        }
    }

    Recording rec;
    rec.fs = fs;
    const std::size_t total = static_cast<std::size_t>(h.num_records * nspr0);
    rec.data.assign(pick.size(), std::vector<float>(total));
    rec.channel_labels.reserve(pick.size());
    const auto* raw = reinterpret_cast<const unsigned char*>(bytes.data());
    for (std::size_t row = 0; row < pick.size(); ++row) {
        const SignalHeader& s = h.signals[pick[row]];
        rec.channel_labels.push_back(s.label);
        const double g = s.gain();
        for (std::int64_t r = 0; r < h.num_records; ++r) {
            const std::size_t base =
                data_off + static_cast<std::size_t>((r * record_size + sig_off[pick[row]]) * 2);
            float* out = rec.data[row].data() + r * s.num_samples_per_record;
            for (std::int64_t i = 0; i < s.num_samples_per_record; ++i) {
                const std::uint16_t u = static_cast<std::uint16_t>(raw[base + 2 * i]) |
                                        (static_cast<std::uint16_t>(raw[base + 2 * i + 1]) << 8);
                const std::int16_t d = static_cast<std::int16_t>(u);
                out[i] = static_cast<float>(
                    (static_cast<double>(d) - static_cast<double>(s.digital_min)) * g +
                    s.physical_min);
            }
        }
    }
    return rec;
}

Recording read_recording_file(const std::string& path,
                              const std::vector<std::string>& channel_selection) {
    return read_recording(read_file(path), channel_selection);
}

std::string write_edf(const Recording& rec) {
    if (rec.data.empty()) throw DataError("write_edf: empty recording");
    const std::int64_t nspr = static_cast<std::int64_t>(rec.fs);
    if (rec.fs <= 0 || static_cast<double>(nspr) != rec.fs)
        throw DataError("write_edf: sampling rate must be a positive integer");
    const std::int64_t num_records = rec.samples() / nspr;
    const std::size_t nc = rec.data.size();

    // Fit each channel's physical range to its data.
    std::vector<double> pmin(nc), pmax(nc);
    for (std::size_t c = 0; c < nc; ++c) {
        double lo = rec.data[c].empty() ? 0.0 : rec.data[c][0];
        double hi = lo;
        for (float v : rec.data[c]) {
            lo = std::min(lo, static_cast<double>(v));
            hi = std::max(hi, static_cast<double>(v));
        }
        if (lo == hi) hi = lo + 1.0;
        pmin[c] = lo;
        pmax[c] = hi;
    }
    constexpr std::int64_t dmin = -32768, dmax = 32767;

    std::string out;
    out.reserve(256 + nc * 256 + static_cast<std::size_t>(num_records * nspr) * nc * 2);
    put_field(out, "0", 8);
    put_field(out, "synthetic", 80);
    put_field(out, "synthetic", 80);
    put_field(out, "01.01.00", 8);
    put_field(out, "00.00.00", 8);
    put_field(out, std::to_string(256 + nc * 256), 8);
    put_field(out, "", 44);
    put_field(out, std::to_string(num_records), 8);
    put_field(out, "1", 8);
    put_field(out, std::to_string(nc), 4);

    for (std::size_t c = 0; c < nc; ++c)
        put_field(out, c < rec.channel_labels.size() ? rec.channel_labels[c] : "", 16);
    for (std::size_t c = 0; c < nc; ++c) put_field(out, "", 80);
    for (std::size_t c = 0; c < nc; ++c) put_field(out, "uV", 8);
    for (std::size_t c = 0; c < nc; ++c) put_field(out, fmt_real(pmin[c], 8), 8);
    for (std::size_t c = 0; c < nc; ++c) put_field(out, fmt_real(pmax[c], 8), 8);
    for (std::size_t c = 0; c < nc; ++c) put_field(out, std::to_string(dmin), 8);
    for (std::size_t c = 0; c < nc; ++c) put_field(out, std::to_string(dmax), 8);
    for (std::size_t c = 0; c < nc; ++c) put_field(out, "", 80);
    for (std::size_t c = 0; c < nc; ++c) put_field(out, std::to_string(nspr), 8);
    for (std::size_t c = 0; c < nc; ++c) put_field(out, "", 32);

    // fmt_real may have rounded the stored physical range; recompute the
    // effective gain from the header text so round trips stay within one step.
    std::vector<double> eff_min(nc), eff_max(nc);
    for (std::size_t c = 0; c < nc; ++c) {
        eff_min[c] = std::stod(fmt_real(pmin[c], 8));
        eff_max[c] = std::stod(fmt_real(pmax[c], 8));
        if (eff_min[c] == eff_max[c]) eff_max[c] = eff_min[c] + 1.0;
    }

    for (std::int64_t r = 0; r < num_records; ++r) {
        for (std::size_t c = 0; c < nc; ++c) {
            const double g = (eff_max[c] - eff_min[c]) / static_cast<double>(dmax - dmin);
            for (std::int64_t i = 0; i < nspr; ++i) {
                const double v = rec.data[c][static_cast<std::size_t>(r * nspr + i)];
                double d = std::round((v - eff_min[c]) / g) + static_cast<double>(dmin);
                d = std::clamp(d, static_cast<double>(dmin), static_cast<double>(dmax));
                const std::int16_t q = static_cast<std::int16_t>(d);
                const std::uint16_t u = static_cast<std::uint16_t>(q);
                out.push_back(static_cast<char>(u & 0xff));
                out.push_back(static_cast<char>((u >> 8) & 0xff));
            }
        }
    }
    return out;
}

std::map<std::string, std::vector<SeizureAnnotation>> parse_summary(const std::string& text) {
    static const std::regex file_re(R"(^File Name:\s*(\S+?)(\.edf)?\s*$)");
    static const std::regex count_re(R"(^Number of Seizures in File:\s*(\d+)\s*$)");
    static const std::regex start_re(
        R"(^Seizure(?:\s+\d+)?\s+Start Time:\s*(\d+(?:\.\d+)?)\s*seconds\s*$)");
    static const std::regex end_re(
        R"(^Seizure(?:\s+\d+)?\s+End Time:\s*(\d+(?:\.\d+)?)\s*seconds\s*$)");

    std::map<std::string, std::vector<SeizureAnnotation>> out;
    std::istringstream in(text);
    std::string line, cur_file;
    double pending_start = -1.0;
    int lineno = 0;
    auto err = [&](const std::string& msg) {
        throw DataError("summary line " + std::to_string(lineno) + ": " + msg);
    };
    while (std::getline(in, line)) {
        ++lineno;
        line = trim(line);
        std::smatch m;
        if (std::regex_match(line, m, file_re)) {
            if (pending_start >= 0.0) err("file block starts with an unclosed seizure");
            cur_file = m[1];
            out[cur_file];  // zero-seizure files still get an entry
        } else if (std::regex_match(line, m, count_re)) {
            if (cur_file.empty()) err("seizure count outside any file block");
        } else if (std::regex_match(line, m, start_re)) {
            if (cur_file.empty()) err("seizure line outside any file block");
            if (pending_start >= 0.0) err("two start times without an end time");
            pending_start = std::stod(m[1]);
        } else if (std::regex_match(line, m, end_re)) {
            if (cur_file.empty()) err("seizure line outside any file block");
            if (pending_start < 0.0) err("end time without a start time");
            const double e = std::stod(m[1]);
            if (e <= pending_start) err("seizure end not after start");
            out[cur_file].push_back({cur_file, pending_start, e});
            pending_start = -1.0;
        }
    }
    if (pending_start >= 0.0)
        throw DataError("summary: unclosed seizure at end of input");
    return out;
}

std::map<std::string, double> parse_offsets(const std::string& text) {
    std::map<std::string, double> out;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        line = trim(line);
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ls(line);
        std::string id;
        double start;
        if (!(ls >> id >> start))
            throw DataError("offsets line " + std::to_string(lineno) + ": expected '<file_id> <seconds>'");
        out[id] = start;
    }
    return out;
}

SynthResult synth_recording(const SynthSpec& spec) {
    if (spec.duration <= 0.0) throw ConfigError("synth: nonpositive duration");
    if (spec.num_channels <= 0) throw ConfigError("synth: nonpositive channel count");
    for (std::size_t i = 1; i < spec.seizure_times.size(); ++i)
        if (spec.seizure_times[i] <= spec.seizure_times[i - 1])
            throw ConfigError("synth: seizure_times must be strictly increasing");
    if (!spec.seizure_times.empty() &&
        spec.seizure_times.back() + kSynthIctalSeconds > spec.duration)
        throw ConfigError("synth: duration does not cover the last seizure");

    const double fs = 256.0;
    const std::size_t n = static_cast<std::size_t>(std::llround(spec.duration * fs));
    SynthResult res;
    res.recording.fs = fs;
    res.recording.start_time = 0.0;
    res.recording.data.assign(static_cast<std::size_t>(spec.num_channels),
                              std::vector<float>(n));
    for (std::int64_t c = 0; c < spec.num_channels; ++c)
        res.recording.channel_labels.push_back("SYN" + std::to_string(c));

    // Preictal spans on the same rule the labeler uses, truncated at the
    // previous synthetic seizure's offset.
    const double sph = spec.sph_minutes * 60.0;
    const double pre = spec.preictal_minutes * 60.0;
    std::vector<std::pair<double, double>> sig_spans;
    double prev_off = 0.0;
    for (std::size_t i = 0; i < spec.seizure_times.size(); ++i) {
        const double t = spec.seizure_times[i];
        res.annotations.push_back({"", t, t + kSynthIctalSeconds});
        double a = std::max(0.0, std::max(prev_off, t - sph - pre));
        double b = std::max(0.0, t - sph);
        if (t - sph - pre < 0.0)
            res.warnings.push_back("seizure at " + std::to_string(t) +
                                   " s: preictal span clipped to [" + std::to_string(a) + ", " +
                                   std::to_string(b) + ")");
        if (a < b) sig_spans.emplace_back(a, b);
        prev_off = t + kSynthIctalSeconds;
    }

    Rng base(spec.seed);
    const std::size_t p = spec.ar.size();
    for (std::int64_t c = 0; c < spec.num_channels; ++c) {
        Rng rng = base.fork(static_cast<std::uint64_t>(c));
        auto& row = res.recording.data[static_cast<std::size_t>(c)];
        std::vector<double> hist(p, 0.0);
        for (std::size_t t = 0; t < n; ++t) {
            double x = spec.noise_scale * rng.normal();
            for (std::size_t k = 0; k < p; ++k) x += spec.ar[k] * hist[k];
            for (std::size_t k = p; k-- > 1;) hist[k] = hist[k - 1];
            if (p > 0) hist[0] = x;
            row[t] = static_cast<float>(x);
        }
    }
    if (spec.signature_amplitude != 0.0) {
        for (const auto& [a, b] : sig_spans) {
            const std::size_t i0 = static_cast<std::size_t>(std::llround(a * fs));
            const std::size_t i1 =
                std::min(n, static_cast<std::size_t>(std::llround(b * fs)));
            for (std::int64_t c = 0; c < spec.num_channels; ++c) {
                auto& row = res.recording.data[static_cast<std::size_t>(c)];
                for (std::size_t t = i0; t < i1; ++t)
                    row[t] += static_cast<float>(
                        spec.signature_amplitude *
                        std::sin(2.0 * 3.14159265358979323846 * spec.signature_freq *
                                 (static_cast<double>(t) / fs)));
            }
        }
    }
    return res;
}

const std::vector<std::string>& default_channel_selection() {
    static const std::vector<std::string> labels = {
        "FP1-F7", "F7-T7",  "T7-P7",  "P7-O1",  "FP1-F3", "F3-C3",  "C3-P3",  "P3-O1",
        "FP2-F4", "F4-C4",  "C4-P4",  "P4-O2",  "FP2-F8", "F8-T8",  "T8-P8",  "P8-O2",
        "FZ-CZ",  "CZ-PZ",  "P7-T7",  "T7-FT9", "FT9-FT10", "FT10-T8", "T8-P8-1"};
    return labels;
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open file: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const std::string& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write file: " + path);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("write failed: " + path);
}

}  // namespace tmc
