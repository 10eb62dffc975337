#pragma once

#include <string>
#include <vector>

namespace csts::audio {

// Mono waveform with samples nominally in [-1, 1].
struct AudioTrack {
    std::vector<double> samples;
    double sample_rate = 0.0;

    double duration() const { return sample_rate > 0 ? static_cast<double>(samples.size()) / sample_rate : 0.0; }
};

// Reads 16-bit PCM WAV (any channel count); channels are mean-mixed to mono.
// Other encodings raise FormatError.
AudioTrack read_wav(const std::string& path);

// Writes interleaved 16-bit PCM. `channels` holds one vector per channel.
void write_wav(const std::string& path, const std::vector<std::vector<double>>& channels, int sample_rate);
void write_wav(const std::string& path, const AudioTrack& track);

} // namespace csts::audio
