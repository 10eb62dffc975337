#pragma once

#include <vector>

#include "audio/wav.hpp"
#include "tensor/tensor.hpp"

namespace csts::audio {

// Parameters of the per-frame log-spectrogram. Defaults: 24 kHz audio,
// 1.28 s windows, 10 ms Hann STFT window with 5 ms hop, 256 bands.
struct SpectrogramConfig {
    double sample_rate = 24000.0;
    double window_seconds = 1.28;
    Index stft_window = 240;
    Index hop = 120;
    Index n_fft = 512;
    Index n_bins = 256;     // FFT bins 1..n_bins (DC dropped)
    Index n_columns = 256;  // STFT frames, centre padded or cropped

    Index window_samples() const;
};

// Per-frame spectrograms for one clip.
struct SpectrogramStack {
    Tensor values;  // [T_in, n_bins, n_columns], log(1 + |STFT|)
    double window_seconds = 0.0;
    std::vector<double> frame_times;
};

// Linear-interpolation resampling.
AudioTrack resample(const AudioTrack& track, double target_rate);

// One window of round(dt_w * rate) samples centred on each frame time;
// regions outside the track are filled by reflection.
std::vector<std::vector<double>> window_segments(const AudioTrack& track, const std::vector<double>& frame_times,
                                                 double window_seconds);

// [n_bins, n_columns] log-magnitude spectrogram of one window.
Tensor log_spectrogram(const std::vector<double>& window, const SpectrogramConfig& cfg = {});

// resample -> window_segments -> log_spectrogram for every frame time.
SpectrogramStack spectrogram_stack(const AudioTrack& track, const std::vector<double>& frame_times,
                                   const SpectrogramConfig& cfg = {});

} // namespace csts::audio
