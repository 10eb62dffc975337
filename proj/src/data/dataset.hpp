#pragma once

#include <string>
#include <vector>

#include "audio/frontend.hpp"
#include "data/image.hpp"
#include "model/losses.hpp"

namespace csts::data {

struct ClipManifest {
    std::string id;
    std::string frames;  // directory of per-frame PNGs or a packed file
    bool packed = false;
    std::string audio;
    double fps = 0.0;
    Index n_frames = 0;
    std::vector<model::GazePoint> gaze;  // one per original frame
    std::string split;                   // "train" or "test"
};

// Reads a JSON array of clip records. Relative paths resolve against the
// manifest's directory. Every record is checked before anything is returned;
// all problems are reported together, each prefixed with its clip id.
std::vector<ClipManifest> load_manifest(const std::string& path);

std::vector<ClipManifest> filter_split(const std::vector<ClipManifest>& clips, const std::string& split);

// gaze CSV: header frame_index,x,y,valid then one row per labelled frame.
std::vector<model::GazePoint> read_gaze_csv(const std::string& path, Index n_frames);
void write_gaze_csv(const std::string& path, const std::vector<model::GazePoint>& gaze);

struct SamplingConfig {
    double observation_seconds = 3.0;
    double anticipation_seconds = 2.0;
    Index input_frames = 8;
    Index target_frames = 8;
    Index image_height = 256;
    Index image_width = 256;
    audio::SpectrogramConfig spectrogram;
};

// k indices spread uniformly over [first, first + count): first + round(i (count-1)/(k-1)).
std::vector<Index> uniform_indices(Index first, Index count, Index k);

struct ClipSample {
    Tensor frames;        // [T_in, H, W, 3]
    Tensor spectrograms;  // [T_in, bins, columns]
    std::vector<model::GazePoint> gaze;  // T_out future frames
    std::string clip_id;
    double anchor = 0.0;
    std::vector<Index> input_indices, target_indices;
    std::vector<double> input_times, target_times;
};

// Observation window [t - tau_o, t), anticipation window [t, t + tau_a).
ClipSample load_clip(const ClipManifest& clip, double anchor, const SamplingConfig& cfg);

// One original frame of a clip, as stored.
Image read_frame(const ClipManifest& clip, Index index);

// Same index arithmetic without touching the files.
void sample_indices(const ClipManifest& clip, double anchor, const SamplingConfig& cfg,
                    std::vector<Index>& input, std::vector<Index>& target);

} // namespace csts::data
