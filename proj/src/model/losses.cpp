#include "model/losses.hpp"

#include <algorithm>
#include <cmath>

namespace csts::model {

namespace {

void check_frames_normalised(const Tensor& t, const char* what) {
    const Index frames = t.size(0);
    const Index plane = t.numel() / frames;
    for (Index f = 0; f < frames; ++f) {
        double s = 0.0;
        for (Index i = 0; i < plane; ++i) s += t[f * plane + i];
        if (std::abs(s - 1.0) > 1e-3)
            throw ContractError(std::string("kld_loss: ") + what + " frame " + std::to_string(f) + " sums to " +
                                std::to_string(s) + ", not 1");
    }
}

} // namespace

Index gaze_pixel(double u, Index extent) {
    const auto p = static_cast<Index>(std::floor(u * static_cast<double>(extent)));
    return std::clamp<Index>(p, 0, extent - 1);
}

GazeHeatmapStack gaussian_target(const std::vector<GazePoint>& gaze, Index height, Index width, Index kernel,
                                 double sigma) {
    if (height <= 0 || width <= 0) throw ContractError("gaussian_target: image extent must be positive");
    if (kernel <= 0 || kernel % 2 == 0) throw ContractError("gaussian_target: kernel size must be odd");
    if (!(sigma > 0.0)) throw ContractError("gaussian_target: sigma must be positive");
    const Index frames = static_cast<Index>(gaze.size());
    const Index plane = height * width;
    const Index half = kernel / 2;
    std::vector<double> data(static_cast<std::size_t>(frames * plane), 0.0);
    GazeHeatmapStack out;
    for (Index f = 0; f < frames; ++f) {
        const auto& g = gaze[static_cast<std::size_t>(f)];
        double* frame = data.data() + f * plane;
        out.valid.push_back(g.valid);
        if (!g.valid) {
            std::fill(frame, frame + plane, 1.0 / static_cast<double>(plane));
            continue;
        }
        if (!(g.x >= 0.0 && g.x <= 1.0 && g.y >= 0.0 && g.y <= 1.0))
            throw ContractError("gaussian_target: gaze (" + std::to_string(g.x) + ", " + std::to_string(g.y) +
                                ") of frame " + std::to_string(f) + " is outside [0, 1]");
        const Index cx = gaze_pixel(g.x, width), cy = gaze_pixel(g.y, height);
        double total = 0.0;
        for (Index dy = -half; dy <= half; ++dy) {
            const Index y = cy + dy;
            if (y < 0 || y >= height) continue;
            for (Index dx = -half; dx <= half; ++dx) {
                const Index x = cx + dx;
                if (x < 0 || x >= width) continue;
                const double v = std::exp(-static_cast<double>(dx * dx + dy * dy) / (2.0 * sigma * sigma));
                frame[y * width + x] = v;
                total += v;
            }
        }
        for (Index i = 0; i < plane; ++i) frame[i] /= total;
    }
    out.probs = Tensor::from_data({frames, height, width}, std::move(data));
    return out;
}

Tensor kld_loss(const Tensor& pred, const GazeHeatmapStack& target) {
    if (pred.shape() != target.probs.shape())
        throw DimensionError("kld_loss: prediction " + shape_str(pred.shape()) + " vs target " +
                             shape_str(target.probs.shape()));
    check_frames_normalised(pred, "prediction");
    check_frames_normalised(target.probs, "target");
    const Index frames = pred.size(0);
    const Index plane = pred.numel() / frames;
    Index valid = 0;
    for (Index f = 0; f < frames; ++f)
        if (target.valid.empty() || target.valid[static_cast<std::size_t>(f)]) ++valid;
    if (valid == 0) return Tensor::zeros({1});
    // Weights t / n_valid on valid frames, zero elsewhere; the entropy term
    // sum t log t is a constant.
    std::vector<double> w(static_cast<std::size_t>(pred.numel()), 0.0);
    double entropy = 0.0;
    for (Index f = 0; f < frames; ++f) {
        if (!target.valid.empty() && !target.valid[static_cast<std::size_t>(f)]) continue;
        for (Index i = 0; i < plane; ++i) {
            const double t = target.probs[f * plane + i];
            w[static_cast<std::size_t>(f * plane + i)] = t / static_cast<double>(valid);
            if (t > 0.0) entropy += t * std::log(t) / static_cast<double>(valid);
        }
    }
    Tensor weights = Tensor::from_data(pred.shape(), std::move(w));
    Tensor cross = sum(mul(weights, log(add_scalar(pred, 1e-12))));
    return add_scalar(neg(cross), entropy);
}

Tensor info_nce(const Tensor& w_v, const Tensor& w_a, double temperature) {
    if (!(temperature > 0.0)) throw ConfigError("info_nce: temperature must be positive");
    if (w_v.rank() != 2 || w_v.shape() != w_a.shape())
        throw DimensionError("info_nce: embeddings " + shape_str(w_v.shape()) + " and " + shape_str(w_a.shape()) +
                             " must both be [n, D']");
    const Index n = w_v.size(0), d = w_v.size(1);
    for (const Tensor* w : {&w_v, &w_a})
        for (Index i = 0; i < n; ++i) {
            double s = 0.0;
            for (Index j = 0; j < d; ++j) s += (*w)[i * d + j] * (*w)[i * d + j];
            if (std::abs(std::sqrt(s) - 1.0) > 1e-6)
                throw ContractError("info_nce: row " + std::to_string(i) + " is not unit norm (" +
                                    std::to_string(std::sqrt(s)) + ")");
        }
    std::vector<double> eye(static_cast<std::size_t>(n * n), 0.0);
    for (Index i = 0; i < n; ++i) eye[static_cast<std::size_t>(i * n + i)] = 1.0 / static_cast<double>(n);
    const Tensor diag = Tensor::from_data({n, n}, std::move(eye));
    Tensor sim = mul_scalar(matmul(w_v, transpose(w_a, 0, 1)), 1.0 / temperature);
    Tensor v2a = neg(sum(mul(log_softmax_last(sim), diag)));
    Tensor a2v = neg(sum(mul(log_softmax_last(transpose(sim, 0, 1)), diag)));
    return add(v2a, a2v);
}

Tensor total_loss(const Tensor& kld, const Tensor& cntr, double alpha) {
    if (!(alpha >= 0.0)) throw ContractError("total_loss: alpha must be non-negative");
    if (!cntr.defined() || alpha == 0.0) return kld;
    return add(kld, mul_scalar(cntr, alpha));
}

} // namespace csts::model
