#pragma once

#include <optional>
#include <vector>

#include "tensor/ops.hpp"

namespace csts::model {

struct GazePoint {
    double x = 0.5, y = 0.5;  // normalised image coordinates
    bool valid = true;
};

struct GazeHeatmapStack {
    Tensor probs;  // [T_out, H, W]
    std::vector<double> frame_times;
    std::vector<bool> valid;
};

constexpr Index kGaussianKernel = 19;
constexpr double kGaussianSigma = 3.0;

// Pixel index of a normalised coordinate: floor(u * extent), clamped.
Index gaze_pixel(double u, Index extent);

// Truncated Gaussian stamped at each gaze pixel, clipped at the borders and
// renormalised. Frames without gaze get a uniform map and valid = false.
GazeHeatmapStack gaussian_target(const std::vector<GazePoint>& gaze, Index height, Index width,
                                 Index kernel = kGaussianKernel, double sigma = kGaussianSigma);

// Mean over valid frames of KL(target || pred + 1e-12).
Tensor kld_loss(const Tensor& pred, const GazeHeatmapStack& target);

// Symmetric InfoNCE over n matched pairs of unit vectors [n, D'].
Tensor info_nce(const Tensor& w_v, const Tensor& w_a, double temperature);

// kld + alpha * cntr; an undefined cntr counts as zero.
Tensor total_loss(const Tensor& kld, const Tensor& cntr, double alpha);

} // namespace csts::model
