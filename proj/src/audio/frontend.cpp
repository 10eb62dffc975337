#include "audio/frontend.hpp"

#include <fftw3.h>

#include <cmath>
#include <map>
#include <mutex>
#include <numbers>

#include "common/errors.hpp"

namespace csts::audio {

namespace {

// FFTW planning is not thread-safe; plans are created once per size under a
// lock and then executed concurrently on caller-owned buffers.
class RealFft {
public:
    explicit RealFft(Index n) : n_(n) {
        in_ = fftw_alloc_real(static_cast<std::size_t>(n));
        out_ = fftw_alloc_complex(static_cast<std::size_t>(n / 2 + 1));
        plan_ = plan_for(n);
    }
    ~RealFft() {
        fftw_free(in_);
        fftw_free(out_);
    }
    RealFft(const RealFft&) = delete;
    RealFft& operator=(const RealFft&) = delete;

    double* input() { return in_; }
    void execute() { fftw_execute_dft_r2c(plan_, in_, out_); }
    double magnitude(Index k) const { return std::hypot(out_[k][0], out_[k][1]); }

private:
    static fftw_plan plan_for(Index n) {
        static std::mutex mu;
        static std::map<Index, fftw_plan> plans;
        std::lock_guard<std::mutex> lock(mu);
        auto it = plans.find(n);
        if (it != plans.end()) return it->second;
        double* in = fftw_alloc_real(static_cast<std::size_t>(n));
        fftw_complex* out = fftw_alloc_complex(static_cast<std::size_t>(n / 2 + 1));
        fftw_plan p = fftw_plan_dft_r2c_1d(static_cast<int>(n), in, out, FFTW_ESTIMATE);
        fftw_free(in);
        fftw_free(out);
        plans.emplace(n, p);
        return p;
    }

    Index n_;
    double* in_ = nullptr;
    fftw_complex* out_ = nullptr;
    fftw_plan plan_ = nullptr;
};

// Periodic reflection without edge repetition: -1 -> 1, n -> n-2.
Index reflect_index(Index j, Index n) {
    if (n == 1) return 0;
    const Index period = 2 * (n - 1);
    Index m = j % period;
    if (m < 0) m += period;
    return m < n ? m : period - m;
}

} // namespace

Index SpectrogramConfig::window_samples() const {
    return static_cast<Index>(std::llround(window_seconds * sample_rate));
}

AudioTrack resample(const AudioTrack& track, double target_rate) {
    if (track.samples.empty()) throw ContractError("resample: empty track");
    if (!(target_rate > 0.0)) throw ContractError("resample: target rate must be positive");
    if (!(track.sample_rate > 0.0)) throw ContractError("resample: source rate must be positive");
    if (track.sample_rate == target_rate) return track;
    const auto n_in = static_cast<Index>(track.samples.size());
    const double ratio = track.sample_rate / target_rate;
    Index n_out = static_cast<Index>(std::floor(static_cast<double>(n_in) / ratio));
    if (n_out < 1) n_out = 1;
    AudioTrack out;
    out.sample_rate = target_rate;
    out.samples.resize(static_cast<std::size_t>(n_out));
    for (Index i = 0; i < n_out; ++i) {
        const double pos = static_cast<double>(i) * ratio;
        const auto i0 = static_cast<Index>(std::floor(pos));
        const double frac = pos - static_cast<double>(i0);
        const double a = track.samples[static_cast<std::size_t>(std::min(i0, n_in - 1))];
        const double b = track.samples[static_cast<std::size_t>(std::min(i0 + 1, n_in - 1))];
        out.samples[static_cast<std::size_t>(i)] = a + frac * (b - a);
    }
    return out;
}

std::vector<std::vector<double>> window_segments(const AudioTrack& track, const std::vector<double>& frame_times,
                                                 double window_seconds) {
    if (!(window_seconds > 0.0)) throw ContractError("window_segments: window length must be positive");
    if (track.samples.empty()) throw ContractError("window_segments: empty track");
    const auto n = static_cast<Index>(track.samples.size());
    const Index len = static_cast<Index>(std::llround(window_seconds * track.sample_rate));
    const double duration = track.duration();
    std::vector<std::vector<double>> windows;
    windows.reserve(frame_times.size());
    for (double t : frame_times) {
        if (t > duration + window_seconds || t < -window_seconds)
            throw RangeError("window_segments: frame time " + std::to_string(t) + " s is more than " +
                             std::to_string(window_seconds) + " s outside the " + std::to_string(duration) +
                             " s track");
        const Index centre = static_cast<Index>(std::llround(t * track.sample_rate));
        const Index start = centre - len / 2;
        std::vector<double> w(static_cast<std::size_t>(len));
        for (Index j = 0; j < len; ++j) w[static_cast<std::size_t>(j)] = track.samples[static_cast<std::size_t>(reflect_index(start + j, n))];
        windows.push_back(std::move(w));
    }
    return windows;
}

Tensor log_spectrogram(const std::vector<double>& window, const SpectrogramConfig& cfg) {
    const auto len = static_cast<Index>(window.size());
    if (len < cfg.stft_window)
        throw ContractError("log_spectrogram: window of " + std::to_string(len) +
                            " samples is shorter than one STFT window (" + std::to_string(cfg.stft_window) + ")");
    if (cfg.n_bins > cfg.n_fft / 2 || cfg.stft_window > cfg.n_fft)
        throw ConfigError("log_spectrogram: n_fft too small for the requested bins/window");
    const Index raw_frames = (len - cfg.stft_window) / cfg.hop + 1;
    // Centre pad (zeros) or crop to exactly n_columns.
    const Index offset = (cfg.n_columns - raw_frames) / 2;

    std::vector<double> hann(static_cast<std::size_t>(cfg.stft_window));
    for (Index i = 0; i < cfg.stft_window; ++i)
        hann[static_cast<std::size_t>(i)] =
            0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(cfg.stft_window));

    std::vector<double> out(static_cast<std::size_t>(cfg.n_bins * cfg.n_columns), 0.0);
    RealFft fft(cfg.n_fft);
    for (Index col = 0; col < cfg.n_columns; ++col) {
        const Index frame = col - offset;
        if (frame < 0 || frame >= raw_frames) continue;
        double* buf = fft.input();
        const Index start = frame * cfg.hop;
        for (Index i = 0; i < cfg.n_fft; ++i)
            buf[i] = i < cfg.stft_window ? window[static_cast<std::size_t>(start + i)] * hann[static_cast<std::size_t>(i)] : 0.0;
        fft.execute();
        for (Index b = 0; b < cfg.n_bins; ++b)
            out[static_cast<std::size_t>(b * cfg.n_columns + col)] = std::log1p(fft.magnitude(b + 1));
    }
    return Tensor::from_data({cfg.n_bins, cfg.n_columns}, std::move(out));
}

SpectrogramStack spectrogram_stack(const AudioTrack& track, const std::vector<double>& frame_times,
                                   const SpectrogramConfig& cfg) {
    const AudioTrack resampled = resample(track, cfg.sample_rate);
    const auto windows = window_segments(resampled, frame_times, cfg.window_seconds);
    SpectrogramStack stack;
    stack.window_seconds = cfg.window_seconds;
    stack.frame_times = frame_times;
    const auto t = static_cast<Index>(windows.size());
    if (t == 0) throw ContractError("spectrogram_stack: no frame times");
    std::vector<double> values;
    values.reserve(static_cast<std::size_t>(t * cfg.n_bins * cfg.n_columns));
    for (const auto& w : windows) {
        Tensor s = log_spectrogram(w, cfg);
        values.insert(values.end(), s.data().begin(), s.data().end());
    }
    stack.values = Tensor::from_data({t, cfg.n_bins, cfg.n_columns}, std::move(values));
    return stack;
}

} // namespace csts::audio
