#pragma once

#include <cstdint>
#include <string>

#include "tensor/tensor.hpp"

namespace csts::data {

// Synthetic egocentric clips: a bright target blob the gaze follows, dimmer
// distractor blobs, and an audio tone burst during the observation window
// whose frequency (and stereo pan) announces which side the target drifts
// to once the anticipation window starts. With probability cue_validity the
// tone names the true side; otherwise it names the other one.
struct SynthOptions {
    Index clips = 200;
    std::uint64_t seed = 0;
    double fps = 10.0;
    double duration = 5.0;
    double anchor = 3.0;  // start of the anticipation window
    Index width = 64, height = 64;
    int sample_rate = 16000;
    double cue_validity = 0.9;
    Index distractors = 2;
    double test_fraction = 0.2;  // every k-th clip goes to the test split
    double missing_gaze = 0.02;  // per-frame probability of a dropped label
    double left_tone_hz = 1200.0;
    double right_tone_hz = 4000.0;
    bool packed = false;
};

// Per-clip ground truth of the planted cue, also written as cue.json.
struct SynthClipInfo {
    std::string id;
    int drift_side = 0;  // -1 left, +1 right
    int tone_side = 0;
    std::string split;
};

// Writes <out>/manifest.json plus one directory per clip holding frames,
// audio.wav, gaze.csv and cue.json. Byte-identical for a given seed.
std::vector<SynthClipInfo> synth_generate(const std::string& out_dir, const SynthOptions& opt);

} // namespace csts::data
