#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "tmc/errors.hpp"
#include "tmc/rng.hpp"
#include "tmc/signal_io.hpp"

using namespace tmc;

namespace {

void put(std::string& out, const std::string& v, std::size_t len) {
    std::string s = v.substr(0, len);
    s.resize(len, ' ');
    out += s;
}

// Build EDF bytes by hand, independent of write_edf.
std::string make_edf(const std::vector<std::string>& labels, std::int64_t num_records,
                     std::int64_t nspr, double pmin, double pmax, std::int64_t dmin,
                     std::int64_t dmax, const std::vector<std::int16_t>& samples) {
    const std::size_t nc = labels.size();
    std::string b;
    put(b, "0", 8);
    put(b, "p", 80);
    put(b, "r", 80);
    put(b, "01.01.00", 8);
    put(b, "00.00.00", 8);
    put(b, std::to_string(256 + nc * 256), 8);
    put(b, "", 44);
    put(b, std::to_string(num_records), 8);
    put(b, "1", 8);
    put(b, std::to_string(nc) + " ", 4);  // trailing space: whitespace tolerance
    for (const auto& l : labels) put(b, l, 16);
    for (std::size_t c = 0; c < nc; ++c) put(b, "", 80);
    for (std::size_t c = 0; c < nc; ++c) put(b, "uV", 8);
    for (std::size_t c = 0; c < nc; ++c) put(b, std::to_string(pmin), 8);
    for (std::size_t c = 0; c < nc; ++c) put(b, std::to_string(pmax), 8);
    for (std::size_t c = 0; c < nc; ++c) put(b, std::to_string(dmin), 8);
    for (std::size_t c = 0; c < nc; ++c) put(b, std::to_string(dmax), 8);
    for (std::size_t c = 0; c < nc; ++c) put(b, "", 80);
    for (std::size_t c = 0; c < nc; ++c) put(b, std::to_string(nspr), 8);
    for (std::size_t c = 0; c < nc; ++c) put(b, "", 32);
    for (std::int16_t s : samples) {
        const auto u = static_cast<std::uint16_t>(s);
        b.push_back(static_cast<char>(u & 0xff));
        b.push_back(static_cast<char>((u >> 8) & 0xff));
    }
    return b;
}

// Welch's two-sample t statistic.
double welch_t(const std::vector<double>& a, const std::vector<double>& b) {
    auto stats = [](const std::vector<double>& v) {
        double m = 0;
        for (double x : v) m += x;
        m /= static_cast<double>(v.size());
        double s2 = 0;
        for (double x : v) s2 += (x - m) * (x - m);
        s2 /= static_cast<double>(v.size() - 1);
        return std::pair<double, double>(m, s2);
    };
    auto [ma, va] = stats(a);
    auto [mb, vb] = stats(b);
    return (ma - mb) / std::sqrt(va / static_cast<double>(a.size()) +
                                 vb / static_cast<double>(b.size()));
}

// Mean power of 5-second windows drawn from [start, start+count*5) seconds.
std::vector<double> window_powers(const Recording& rec, double start, int count) {
    std::vector<double> out;
    const auto ws = static_cast<std::size_t>(5 * rec.fs);
    for (int w = 0; w < count; ++w) {
        const auto i0 = static_cast<std::size_t>((start + 5.0 * w) * rec.fs);
        double p = 0;
        for (std::size_t i = 0; i < ws; ++i) {
            const double v = rec.data[0][i0 + i];
            p += v * v;
        }
        out.push_back(p / static_cast<double>(ws));
    }
    return out;
}

}  // namespace

TEST_CASE("header field echo and whitespace tolerance") {
    const auto bytes = make_edf({"C1"}, 10, 256, -100.0, 100.0, -32768, 32767,
                                std::vector<std::int16_t>(2560, 0));
    const RecordingHeader h = parse_edf_header(bytes);
    REQUIRE(h.signals.size() == 1);
    CHECK(h.signals[0].num_samples_per_record == 256);
    CHECK(h.num_records == 10);
    CHECK(h.record_duration == doctest::Approx(1.0));
    CHECK(h.signals[0].label == "C1");
}

TEST_CASE("scaling gain from physical and digital ranges") {
    const auto bytes = make_edf({"C1"}, 1, 2, -3276.8, 3276.7, -32768, 32767,
                                {0, 0});
    const RecordingHeader h = parse_edf_header(bytes);
    // gain = (3276.7 - (-3276.8)) / (32767 - (-32768)) = 6553.5/65535 = 0.1
    CHECK(h.signals[0].gain() == doctest::Approx(0.1).epsilon(1e-12));
}

TEST_CASE("digital endpoints map to physical endpoints, zero to zero") {
    const auto bytes = make_edf({"C1"}, 1, 4, -3276.8, 3276.7, -32768, 32767,
                                {-32768, 32767, 0, 100});
    const Recording r = read_recording(bytes, {});
    CHECK(r.data[0][0] == doctest::Approx(-3276.8));
    CHECK(r.data[0][1] == doctest::Approx(3276.7));
    // symmetric 16-bit range: digital 0 sits 32768 steps above physical_min
    CHECK(r.data[0][2] == doctest::Approx(-3276.8 + 32768 * 0.1).epsilon(1e-6));
    CHECK(std::abs(r.data[0][2]) < 1e-3);
}

TEST_CASE("channel selection keeps 23 of 24 and permutes rows") {
    std::vector<std::string> labels;
    for (int i = 0; i < 24; ++i) labels.push_back("CH" + std::to_string(i));
    std::vector<std::int16_t> samples;
    for (int r = 0; r < 2; ++r)
        for (int c = 0; c < 24; ++c)
            for (int i = 0; i < 4; ++i) samples.push_back(static_cast<std::int16_t>(c));
    const auto bytes = make_edf(labels, 2, 4, -100, 100, -32768, 32767, samples);

    std::vector<std::string> sel(labels.begin(), labels.begin() + 23);
    const Recording r = read_recording(bytes, sel);
    CHECK(r.channels() == 23);
    CHECK(r.samples() == 8);
    CHECK(r.channel_labels[5] == "CH5");

    std::vector<std::string> rev(sel.rbegin(), sel.rend());
    const Recording r2 = read_recording(bytes, rev);
    for (int c = 0; c < 23; ++c)
        for (int i = 0; i < 8; ++i) CHECK(r2.data[22 - c][i] == r.data[c][i]);

    CHECK_THROWS_AS((void)read_recording(bytes, {"NOPE"}), DataError);
}

TEST_CASE("truncated and malformed headers raise") {
    CHECK_THROWS_AS((void)parse_edf_header(std::string(100, ' ')), DataError);
    auto bytes = make_edf({"C1"}, 1, 4, -100, 100, -32768, 32767,
                          {0, 0, 0, 0});
    // corrupt the record-count field
    for (int i = 236; i < 244; ++i) bytes[static_cast<std::size_t>(i)] = 'x';
    CHECK_THROWS_AS((void)parse_edf_header(bytes), DataError);
    // digital_min >= digital_max
    auto bad = make_edf({"C1"}, 1, 4, -100, 100, 5, 5, {0, 0, 0, 0});
    CHECK_THROWS_AS((void)parse_edf_header(bad), DataError);
    // sample payload shorter than the header claims
    auto shorty = make_edf({"C1"}, 2, 4, -100, 100, -32768, 32767, {0, 0, 0, 0});
    CHECK_THROWS_AS((void)read_recording(shorty, {}), DataError);
}

TEST_CASE("edf round trip within one quantization step") {
    SynthSpec spec;
    spec.duration = 10.0;
    spec.num_channels = 3;
    spec.seed = 5;
    const Recording orig = synth_recording(spec).recording;
    const std::string bytes = write_edf(orig);
    const RecordingHeader h = parse_edf_header(bytes);
    const Recording back = read_recording(bytes, {});
    REQUIRE(back.channels() == 3);
    REQUIRE(back.samples() == orig.samples());
    for (int c = 0; c < 3; ++c) {
        const double step = h.signals[static_cast<std::size_t>(c)].gain();
        for (std::int64_t i = 0; i < orig.samples(); ++i) {
            const double d = std::abs(static_cast<double>(orig.data[c][i]) -
                                      static_cast<double>(back.data[c][i]));
            REQUIRE(d <= step);
        }
    }
}

TEST_CASE("summary parsing: single annotation, zero-seizure file, 7 total") {
    const std::string text =
        "File Name: chb01_03.edf\n"
        "Number of Seizures in File: 1\n"
        "Seizure Start Time: 2996 seconds\n"
        "Seizure End Time: 3036 seconds\n"
        "\n"
        "File Name: chb01_05.edf\n"
        "Number of Seizures in File: 0\n"
        "\n"
        "File Name: chb01_15.edf\n"
        "Number of Seizures in File: 2\n"
        "Seizure 1 Start Time: 1732 seconds\n"
        "Seizure 1 End Time: 1772 seconds\n"
        "Seizure 2 Start Time: 3000 seconds\n"
        "Seizure 2 End Time: 3090 seconds\n"
        "\n"
        "File Name: chb01_16.edf\n"
        "Number of Seizures in File: 4\n"
        "Seizure 1 Start Time: 100 seconds\n"
        "Seizure 1 End Time: 140 seconds\n"
        "Seizure 2 Start Time: 5000 seconds\n"
        "Seizure 2 End Time: 5050 seconds\n"
        "Seizure 3 Start Time: 9000 seconds\n"
        "Seizure 3 End Time: 9040 seconds\n"
        "Seizure 4 Start Time: 12000 seconds\n"
        "Seizure 4 End Time: 12100 seconds\n";
    const auto m = parse_summary(text);
    REQUIRE(m.count("chb01_03") == 1);
    REQUIRE(m.at("chb01_03").size() == 1);
    CHECK(m.at("chb01_03")[0].onset == doctest::Approx(2996));
    CHECK(m.at("chb01_03")[0].offset == doctest::Approx(3036));
    CHECK(m.at("chb01_05").empty());
    std::size_t total = 0;
    for (const auto& [id, v] : m) total += v.size();
    CHECK(total == 7);
}

TEST_CASE("summary parsing errors carry line positions") {
    CHECK_THROWS_WITH_AS(
        (void)parse_summary("Seizure Start Time: 5 seconds\n"),
        doctest::Contains("line 1"), DataError);
    CHECK_THROWS_WITH_AS(
        (void)parse_summary("File Name: a.edf\n"
                            "Seizure Start Time: 50 seconds\n"
                            "Seizure End Time: 40 seconds\n"),
        doctest::Contains("line 3"), DataError);
    CHECK_THROWS_AS((void)parse_summary("File Name: a.edf\n"
                                        "Seizure Start Time: 1 seconds\n"),
                    DataError);
}

TEST_CASE("offset sidecar") {
    const auto m = parse_offsets("# comment\nchb01_03 0\nchb01_04 3600.5\n");
    CHECK(m.at("chb01_03") == doctest::Approx(0.0));
    CHECK(m.at("chb01_04") == doctest::Approx(3600.5));
    CHECK_THROWS_AS((void)parse_offsets("justoneword\n"), DataError);
}

TEST_CASE("synth determinism and empty spec") {
    SynthSpec spec;
    spec.duration = 8.0;
    spec.num_channels = 2;
    spec.seed = 42;
    const auto a = synth_recording(spec);
    const auto b = synth_recording(spec);
    CHECK(a.annotations.empty());
    CHECK(a.recording.data == b.recording.data);

    spec.seed = 43;
    const auto c = synth_recording(spec);
    CHECK(a.recording.data != c.recording.data);
}

TEST_CASE("synth annotations and clipping warnings") {
    SynthSpec spec;
    spec.duration = 900.0;
    spec.num_channels = 1;
    spec.preictal_minutes = 5.0;
    spec.sph_minutes = 1.0;
    spec.seizure_times = {100.0, 800.0};
    spec.seed = 1;
    const auto r = synth_recording(spec);
    REQUIRE(r.annotations.size() == 2);
    CHECK(r.annotations[0].onset == doctest::Approx(100.0));
    CHECK(r.annotations[0].offset == doctest::Approx(140.0));
    // first preictal span [100-60-300, 40) starts before 0 -> reported
    CHECK(r.warnings.size() == 1);

    spec.seizure_times = {880.0};
    CHECK_THROWS_AS((void)synth_recording(spec), ConfigError);
    spec.seizure_times = {100.0, 100.0};
    CHECK_THROWS_AS((void)synth_recording(spec), ConfigError);
}

TEST_CASE("zero-amplitude signature leaves classes spectrally equal") {
    SynthSpec spec;
    spec.duration = 900.0;
    spec.num_channels = 1;
    spec.preictal_minutes = 5.0;
    spec.sph_minutes = 1.0;
    spec.seizure_times = {400.0};  // preictal span [40, 340)
    spec.signature_amplitude = 0.0;
    spec.seed = 7;
    const auto r = synth_recording(spec);
    const auto pre = window_powers(r.recording, 40.0, 50);
    const auto inter = window_powers(r.recording, 590.0, 50);
    // two-sided alpha = 0.01 at ~98 df
    CHECK(std::abs(welch_t(pre, inter)) < 2.63);

    // positive control: a strong signature must be detected
    spec.signature_amplitude = 30.0;
    const auto r2 = synth_recording(spec);
    const auto pre2 = window_powers(r2.recording, 40.0, 50);
    const auto inter2 = window_powers(r2.recording, 590.0, 50);
    CHECK(std::abs(welch_t(pre2, inter2)) > 2.63);
}

TEST_CASE("default channel selection lists 23 labels") {
    CHECK(default_channel_selection().size() == 23);
}
