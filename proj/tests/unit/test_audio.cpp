#include <cmath>
#include <complex>
#include <filesystem>
#include <fstream>
#include <numbers>

#include "audio/frontend.hpp"
#include "doctest.h"

using namespace csts;
using namespace csts::audio;
namespace fs = std::filesystem;

namespace {

AudioTrack sine(double freq, double rate, double seconds, double amp = 0.5) {
    AudioTrack t;
    t.sample_rate = rate;
    const auto n = static_cast<std::size_t>(std::llround(rate * seconds));
    t.samples.resize(n);
    for (std::size_t i = 0; i < n; ++i)
        t.samples[i] = amp * std::sin(2.0 * std::numbers::pi * freq * static_cast<double>(i) / rate);
    return t;
}

fs::path temp_dir() {
    auto p = fs::temp_directory_path() / "csts_test_audio";
    fs::create_directories(p);
    return p;
}

} // namespace

TEST_CASE("resample halves the rate and keeps shape of signals") {
    AudioTrack t{std::vector<double>(48001, 0.25), 48000.0};
    auto r = resample(t, 24000.0);
    CHECK((r.samples.size() == 24000 || r.samples.size() == 24001));
    for (double v : r.samples) CHECK(v == 0.25);

    auto s = resample(sine(440.0, 48000.0, 0.5), 24000.0);
    double worst = 0.0;
    for (std::size_t i = 0; i < s.samples.size(); ++i) {
        const double ref = 0.5 * std::sin(2.0 * std::numbers::pi * 440.0 * static_cast<double>(i) / 24000.0);
        worst = std::max(worst, std::abs(ref - s.samples[i]));
    }
    CHECK(worst < 1e-2);
    // Upsampling a sine stays close to the analytic sine as well.
    auto up = resample(sine(440.0, 16000.0, 0.25), 24000.0);
    worst = 0.0;
    for (std::size_t i = 0; i + 2 < up.samples.size(); ++i) {
        const double ref = 0.5 * std::sin(2.0 * std::numbers::pi * 440.0 * static_cast<double>(i) / 24000.0);
        worst = std::max(worst, std::abs(ref - up.samples[i]));
    }
    CHECK(worst < 1e-2);
    CHECK_THROWS_AS(resample(AudioTrack{{}, 48000.0}, 24000.0), ContractError);
}

TEST_CASE("window_segments lengths, reflection and ordering") {
    AudioTrack ramp;
    ramp.sample_rate = 24000.0;
    ramp.samples.resize(24000 * 5);
    for (std::size_t i = 0; i < ramp.samples.size(); ++i) ramp.samples[i] = static_cast<double>(i);

    auto w0 = window_segments(ramp, {0.0}, 1.28);
    REQUIRE(w0.size() == 1);
    CHECK(w0[0].size() == 30720);
    // Left half mirrors the start of the track around sample 0.
    CHECK(w0[0][15360] == 0.0);
    CHECK(w0[0][15359] == 1.0);
    CHECK(w0[0][0] == 15360.0);

    auto mid = window_segments(ramp, {2.5}, 1.28);
    const double start = 2.5 * 24000 - 15360;
    for (std::size_t j = 0; j < mid[0].size(); ++j) CHECK(mid[0][j] == start + static_cast<double>(j));

    std::vector<double> times;
    for (int i = 0; i < 8; ++i) times.push_back(3.0 * i / 7.0);
    auto ws = window_segments(ramp, times, 1.28);
    CHECK(ws.size() == 8);
    for (std::size_t i = 1; i < ws.size(); ++i) CHECK(ws[i][20000] > ws[i - 1][20000]);

    CHECK_THROWS_AS(window_segments(ramp, {5.0 + 1.3}, 1.28), RangeError);
    CHECK_NOTHROW(window_segments(ramp, {5.0 + 1.2}, 1.28));
}

TEST_CASE("log_spectrogram: silence, tone bin and shape") {
    SpectrogramConfig cfg;
    std::vector<double> zeros(30720, 0.0);
    auto z = log_spectrogram(zeros, cfg);
    CHECK(z.shape() == Shape{256, 256});
    for (double v : z.data()) CHECK(v == 0.0);

    auto tone = sine(1000.0, 24000.0, 1.28);
    auto s = log_spectrogram(tone.samples, cfg);
    // Column 100 is interior; find the dominant row.
    Index best = 0;
    for (Index b = 1; b < 256; ++b)
        if (s[b * 256 + 100] > s[best * 256 + 100]) best = b;
    CHECK(best + 1 == 21);
    CHECK(std::lround(1000.0 / (24000.0 / 512.0)) == 21);

    // Shape holds for other window lengths.
    auto short_tone = sine(1000.0, 24000.0, 0.5);
    CHECK(log_spectrogram(short_tone.samples, cfg).shape() == Shape{256, 256});
    CHECK_THROWS_AS(log_spectrogram(std::vector<double>(100, 0.0), cfg), ContractError);
}

TEST_CASE("log_spectrogram column equals naive DFT of the Hann-windowed frame") {
    SpectrogramConfig cfg;
    auto tone = sine(1000.0, 24000.0, 1.28);
    for (std::size_t i = 0; i < tone.samples.size(); ++i) tone.samples[i] += 0.1 * std::sin(0.013 * static_cast<double>(i * i % 977));
    auto s = log_spectrogram(tone.samples, cfg);
    // 255 raw frames are padded to 256 with offset 0, so column c is frame c.
    const Index frame = 37;
    std::vector<double> x(512, 0.0);
    for (Index i = 0; i < 240; ++i) {
        const double w = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / 240.0);
        x[static_cast<std::size_t>(i)] = tone.samples[static_cast<std::size_t>(frame * 120 + i)] * w;
    }
    double worst = 0.0;
    for (Index k = 1; k <= 256; ++k) {
        std::complex<double> acc = 0.0;
        for (Index n = 0; n < 512; ++n)
            acc += x[static_cast<std::size_t>(n)] * std::polar(1.0, -2.0 * std::numbers::pi * static_cast<double>(k * n) / 512.0);
        worst = std::max(worst, std::abs(std::log1p(std::abs(acc)) - s[(k - 1) * 256 + frame]));
    }
    CHECK(worst < 1e-9);
    // Last column is the zero pad.
    for (Index b = 0; b < 256; ++b) CHECK(s[b * 256 + 255] == 0.0);
}

TEST_CASE("spectrogram energy monotonicity and determinism") {
    SpectrogramConfig cfg;
    auto tone = sine(700.0, 24000.0, 1.28, 0.3);
    auto a = log_spectrogram(tone.samples, cfg);
    auto b = log_spectrogram(tone.samples, cfg);
    CHECK(std::equal(a.data().begin(), a.data().end(), b.data().begin()));
    // Power-of-two scaling is exact in floating point, so the ordering is exact.
    std::vector<double> doubled = tone.samples;
    for (double& v : doubled) v *= 2.0;
    auto d = log_spectrogram(doubled, cfg);
    for (Index i = 0; i < a.numel(); ++i) CHECK(d[i] >= a[i]);
    // Other factors hold up to FFT roundoff in near-empty bins.
    std::vector<double> louder = tone.samples;
    for (double& v : louder) v *= 1.7;
    auto c = log_spectrogram(louder, cfg);
    for (Index i = 0; i < a.numel(); ++i) CHECK(c[i] >= a[i] - 1e-12);
}

TEST_CASE("spectrogram_stack: one window per frame") {
    auto tone = sine(440.0, 48000.0, 5.0);
    std::vector<double> times;
    for (int i = 0; i < 8; ++i) times.push_back(3.0 * i / 7.0);
    auto stack = spectrogram_stack(tone, times);
    CHECK(stack.values.shape() == Shape{8, 256, 256});
    CHECK(stack.frame_times.size() == 8);
    CHECK(stack.window_seconds == 1.28);
}

TEST_CASE("WAV round trip and stereo mix-down") {
    const auto dir = temp_dir();
    std::vector<double> left(1000), right(1000);
    for (int i = 0; i < 1000; ++i) {
        left[static_cast<std::size_t>(i)] = 0.5;
        right[static_cast<std::size_t>(i)] = -0.25;
    }
    write_wav((dir / "stereo.wav").string(), {left, right}, 16000);
    auto t = read_wav((dir / "stereo.wav").string());
    CHECK(t.sample_rate == 16000.0);
    REQUIRE(t.samples.size() == 1000);
    CHECK(std::abs(t.samples[10] - 0.125) < 1e-4);

    // 8-bit PCM is rejected.
    std::ofstream os(dir / "u8.wav", std::ios::binary);
    const unsigned char hdr[] = {'R', 'I', 'F', 'F', 40, 0, 0, 0, 'W', 'A', 'V', 'E', 'f', 'm', 't', ' ', 16, 0, 0, 0,
                                 1, 0, 1, 0, 0x40, 0x1f, 0, 0, 0x40, 0x1f, 0, 0, 1, 0, 8, 0, 'd', 'a', 't', 'a', 4, 0, 0, 0,
                                 128, 128, 128, 128};
    os.write(reinterpret_cast<const char*>(hdr), sizeof(hdr));
    os.close();
    CHECK_THROWS_AS(read_wav((dir / "u8.wav").string()), FormatError);
    CHECK_THROWS_AS(read_wav((dir / "missing.wav").string()), IoError);
}
