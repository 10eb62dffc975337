#include "eval/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>

namespace csts::eval {

double f1_score(double precision, double recall) {
    return precision + recall > 0.0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
}

FrameCounts binarize_and_score(std::span<const double> pred, Index height, Index width, const model::GazePoint& gaze,
                               double gamma, Index kernel) {
    if (static_cast<Index>(pred.size()) != height * width)
        throw DimensionError("binarize_and_score: map of " + std::to_string(pred.size()) + " values is not " +
                             std::to_string(height) + "x" + std::to_string(width));
    if (!(gaze.x >= 0.0 && gaze.x <= 1.0 && gaze.y >= 0.0 && gaze.y <= 1.0))
        throw ContractError("binarize_and_score: gaze outside [0, 1]");
    const Index cx = model::gaze_pixel(gaze.x, width), cy = model::gaze_pixel(gaze.y, height);
    const Index half = kernel / 2;
    const double mx = *std::max_element(pred.begin(), pred.end());
    const double threshold = gamma * mx;
    FrameCounts c;
    for (Index y = 0; y < height; ++y)
        for (Index x = 0; x < width; ++x) {
            const bool in_truth = std::abs(x - cx) <= half && std::abs(y - cy) <= half;
            const bool in_pred = mx > 0.0 && pred[static_cast<std::size_t>(y * width + x)] >= threshold;
            c.truth += in_truth;
            c.predicted += in_pred;
            c.hits += in_truth && in_pred;
        }
    return c;
}

void Aggregator::add(Index future_index, const FrameCounts& c) {
    if (future_index < 0 || future_index >= static_cast<Index>(per_frame_.size()))
        throw RangeError("aggregate: future index " + std::to_string(future_index) + " outside [0, " +
                         std::to_string(per_frame_.size()) + ")");
    total_ += c;
    ++n_;
    per_frame_[static_cast<std::size_t>(future_index)] += c;
    ++frames_[static_cast<std::size_t>(future_index)];
}

void Aggregator::add_prediction(const Tensor& probs, const std::vector<model::GazePoint>& gaze, double gamma) {
    if (probs.rank() != 3 || probs.size(0) != static_cast<Index>(gaze.size()))
        throw DimensionError("aggregate: prediction " + shape_str(probs.shape()) + " does not match " +
                             std::to_string(gaze.size()) + " gaze labels");
    const Index h = probs.size(1), w = probs.size(2);
    for (Index f = 0; f < probs.size(0); ++f) {
        if (!gaze[static_cast<std::size_t>(f)].valid) continue;
        add(f, binarize_and_score(probs.data().subspan(static_cast<std::size_t>(f * h * w), static_cast<std::size_t>(h * w)),
                                  h, w, gaze[static_cast<std::size_t>(f)], gamma));
    }
}

EvalReport Aggregator::report() const {
    if (n_ == 0) throw EvaluationError("evaluation: no valid frames to score");
    EvalReport r;
    r.precision = total_.precision();
    r.recall = total_.recall();
    r.f1 = f1_score(r.precision, r.recall);
    r.n_frames = n_;
    for (std::size_t i = 0; i < per_frame_.size(); ++i) {
        FrameMetrics m;
        m.future_index = static_cast<Index>(i);
        m.precision = per_frame_[i].precision();
        m.recall = per_frame_[i].recall();
        m.f1 = f1_score(m.precision, m.recall);
        m.n_frames = frames_[i];
        r.per_frame.push_back(m);
    }
    return r;
}

nlohmann::json EvalReport::to_json() const {
    nlohmann::json frames = nlohmann::json::array();
    for (const auto& m : per_frame)
        frames.push_back({{"future_index", m.future_index}, {"f1", m.f1}, {"recall", m.recall},
                          {"precision", m.precision}, {"n_frames", m.n_frames}});
    return {{"f1", f1}, {"recall", recall}, {"precision", precision}, {"n_frames", n_frames}, {"per_frame", frames}};
}

std::string EvalReport::table() const {
    std::ostringstream os;
    char line[128];
    std::snprintf(line, sizeof line, "%-8s %8s %8s %8s %8s\n", "frame", "f1", "recall", "prec", "n");
    os << line;
    for (const auto& m : per_frame) {
        std::snprintf(line, sizeof line, "%-8lld %8.4f %8.4f %8.4f %8lld\n", static_cast<long long>(m.future_index), m.f1,
                      m.recall, m.precision, static_cast<long long>(m.n_frames));
        os << line;
    }
    std::snprintf(line, sizeof line, "%-8s %8.4f %8.4f %8.4f %8lld\n", "all", f1, recall, precision,
                  static_cast<long long>(n_frames));
    os << line;
    return os.str();
}

std::string EvalReport::per_frame_csv() const {
    std::ostringstream os;
    os << "future_index,f1,recall,precision,n_frames\n";
    char line[160];
    for (const auto& m : per_frame) {
        std::snprintf(line, sizeof line, "%lld,%.17g,%.17g,%.17g,%lld\n", static_cast<long long>(m.future_index), m.f1,
                      m.recall, m.precision, static_cast<long long>(m.n_frames));
        os << line;
    }
    return os.str();
}

} // namespace csts::eval
