#pragma once

#include <string>
#include <vector>

#include "json.hpp"
#include "model/losses.hpp"

namespace csts::eval {

constexpr double kDefaultGamma = 0.5;

// Pixel counts behind precision and recall for one frame.
struct FrameCounts {
    Index hits = 0;       // |P ∩ G|
    Index predicted = 0;  // |P|
    Index truth = 0;      // |G|

    double precision() const { return predicted > 0 ? static_cast<double>(hits) / static_cast<double>(predicted) : 0.0; }
    double recall() const { return truth > 0 ? static_cast<double>(hits) / static_cast<double>(truth) : 0.0; }
    FrameCounts& operator+=(const FrameCounts& o) {
        hits += o.hits;
        predicted += o.predicted;
        truth += o.truth;
        return *this;
    }
};

double f1_score(double precision, double recall);

// G = the kernel x kernel support around the gaze pixel (border clipped),
// P = pixels with pred >= gamma * max(pred). `pred` is one [H, W] frame.
FrameCounts binarize_and_score(std::span<const double> pred, Index height, Index width, const model::GazePoint& gaze,
                               double gamma = kDefaultGamma, Index kernel = model::kGaussianKernel);

struct FrameMetrics {
    Index future_index = 0;
    double f1 = 0.0, recall = 0.0, precision = 0.0;
    Index n_frames = 0;
};

struct EvalReport {
    double f1 = 0.0, recall = 0.0, precision = 0.0;
    std::vector<FrameMetrics> per_frame;
    Index n_frames = 0;

    nlohmann::json to_json() const;
    std::string table() const;
    std::string per_frame_csv() const;
};

// Micro-averages pixel counts over frames, overall and per future index.
class Aggregator {
public:
    explicit Aggregator(Index t_out) : per_frame_(static_cast<std::size_t>(t_out)), frames_(static_cast<std::size_t>(t_out), 0) {}

    void add(Index future_index, const FrameCounts& c);
    // Scores every valid frame of a [T_out, H, W] prediction.
    void add_prediction(const Tensor& probs, const std::vector<model::GazePoint>& gaze, double gamma = kDefaultGamma);
    EvalReport report() const;

private:
    FrameCounts total_;
    Index n_ = 0;
    std::vector<FrameCounts> per_frame_;
    std::vector<Index> frames_;
};

} // namespace csts::eval
