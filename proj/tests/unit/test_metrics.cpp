#include <cmath>

#include "doctest.h"
#include "eval/metrics.hpp"
#include "support/test_util.hpp"

using namespace csts;
using namespace csts::eval;
using csts::model::GazePoint;
using csts::model::gaussian_target;

namespace {

std::span<const double> frame(const Tensor& t, Index f) {
    const Index plane = t.size(1) * t.size(2);
    return t.data().subspan(static_cast<std::size_t>(f * plane), static_cast<std::size_t>(plane));
}

} // namespace

TEST_CASE("uniform prediction on an interior gaze") {
    const std::vector<double> uniform(4096, 1.0 / 4096.0);
    const GazePoint g{0.5, 0.4, true};
    FrameCounts c = binarize_and_score(uniform, 64, 64, g);
    // Oracle: count the 19x19 window by hand.
    Index truth = 0;
    const Index cx = 32, cy = static_cast<Index>(std::floor(0.4 * 64));
    for (Index y = 0; y < 64; ++y)
        for (Index x = 0; x < 64; ++x) truth += std::abs(x - cx) <= 9 && std::abs(y - cy) <= 9;
    CHECK(truth == 361);
    CHECK(c.truth == truth);
    CHECK(c.predicted == 4096);
    CHECK(std::abs(c.precision() - 361.0 / 4096.0) < 1e-9);
    CHECK(std::abs(c.precision() - 0.088134765625) < 1e-9);
    CHECK(c.recall() == 1.0);
}

TEST_CASE("perfect prediction fixed point and containment") {
    auto t = gaussian_target({{0.5, 0.5, true}}, 64, 64);
    auto pred = frame(t.probs, 0);
    double mx = 0.0, mn = 1e300;
    for (double v : pred) {
        mx = std::max(mx, v);
        if (v > 0.0) mn = std::min(mn, v);
    }
    FrameCounts c = binarize_and_score(pred, 64, 64, {0.5, 0.5, true}, mn / mx);
    CHECK(c.precision() == 1.0);
    CHECK(c.recall() == 1.0);
    CHECK(f1_score(c.precision(), c.recall()) == 1.0);

    // Small gamma: P contains G, so recall is 1.
    FrameCounts low = binarize_and_score(pred, 64, 64, {0.5, 0.5, true}, 1e-6);
    CHECK(low.recall() == 1.0);

    Aggregator agg(1);
    agg.add(0, c);
    CHECK(agg.report().f1 == 1.0);
}

TEST_CASE("disjoint prediction scores zero; empty prediction has zero precision") {
    auto t = gaussian_target({{0.1, 0.1, true}}, 64, 64);
    FrameCounts c = binarize_and_score(frame(t.probs, 0), 64, 64, {0.9, 0.9, true});
    CHECK(c.precision() == 0.0);
    CHECK(c.recall() == 0.0);
    CHECK(f1_score(0.0, 0.0) == 0.0);
    const std::vector<double> zeros(64, 0.0);
    FrameCounts z = binarize_and_score(zeros, 8, 8, {0.5, 0.5, true});
    CHECK(z.predicted == 0);
    CHECK(z.precision() == 0.0);
}

TEST_CASE("aggregation is micro-averaged over pixel counts") {
    Aggregator agg(8);
    agg.add(0, {361, 361, 361});  // p = r = 1
    agg.add(1, {0, 100, 361});    // p = r = 0
    EvalReport r = agg.report();
    const double p = 361.0 / 461.0, rc = 361.0 / 722.0;
    CHECK(std::abs(r.precision - p) < 1e-15);
    CHECK(std::abs(r.recall - rc) < 1e-15);
    CHECK(std::abs(r.f1 - 2 * p * rc / (p + rc)) < 1e-9);
    CHECK(std::abs(r.f1 - 0.5) > 0.05);  // not the mean of per-frame F1s
    CHECK(r.per_frame.size() == 8);
    CHECK(r.per_frame[0].f1 == 1.0);
    CHECK(r.per_frame[1].f1 == 0.0);
    CHECK(r.n_frames == 2);
    CHECK_THROWS_AS(agg.add(8, {}), RangeError);
    CHECK_THROWS_AS(Aggregator(8).report(), EvaluationError);

    const auto j = r.to_json();
    CHECK(j["per_frame"].size() == 8);
    CHECK(r.table().find("all") != std::string::npos);
    CHECK(r.per_frame_csv().rfind("future_index,f1", 0) == 0);
}

TEST_CASE("add_prediction skips frames without gaze") {
    auto t = gaussian_target({{0.5, 0.5, true}, {0.2, 0.2, true}}, 32, 32);
    Aggregator agg(2);
    agg.add_prediction(t.probs, {{0.5, 0.5, true}, {0.2, 0.2, false}});
    EvalReport r = agg.report();
    CHECK(r.n_frames == 1);
    CHECK(r.per_frame[1].n_frames == 0);
}

TEST_CASE("metric properties on random maps") {
    Rng rng(5);
    for (int trial = 0; trial < 40; ++trial) {
        Tensor pred = csts::testing::random_tensor(rng, {1, 32, 32}, 0.0, 1.0);
        const GazePoint g{rng.uniform(), rng.uniform(), true};
        double prev_recall = 2.0;
        for (double gamma : {0.0, 0.2, 0.4, 0.5, 0.7, 0.9, 1.0}) {
            FrameCounts c = binarize_and_score(pred.data(), 32, 32, g, gamma);
            CHECK(c.recall() <= prev_recall);
            prev_recall = c.recall();
            for (double v : {c.precision(), c.recall(), f1_score(c.precision(), c.recall())}) {
                CHECK(v >= 0.0);
                CHECK(v <= 1.0);
            }
        }
    }
    // Translation consistency away from borders.
    Tensor pred = csts::testing::random_tensor(rng, {1, 64, 64}, 0.0, 1.0);
    std::vector<double> shifted(4096, 0.0);
    for (Index y = 0; y < 64; ++y)
        for (Index x = 0; x < 64; ++x) {
            const Index sy = y + 5, sx = x + 7;
            if (sy < 64 && sx < 64) shifted[static_cast<std::size_t>(sy * 64 + sx)] = pred[y * 64 + x];
        }
    // Restrict the original to the region that survives the shift.
    std::vector<double> cropped(4096, 0.0);
    for (Index y = 0; y < 59; ++y)
        for (Index x = 0; x < 57; ++x) cropped[static_cast<std::size_t>(y * 64 + x)] = pred[y * 64 + x];
    const GazePoint g{20.5 / 64.0, 22.5 / 64.0, true};
    const GazePoint gs{27.5 / 64.0, 27.5 / 64.0, true};
    FrameCounts a = binarize_and_score(cropped, 64, 64, g);
    FrameCounts b = binarize_and_score(shifted, 64, 64, gs);
    CHECK(a.hits == b.hits);
    CHECK(a.predicted == b.predicted);
    CHECK(a.truth == b.truth);
}
