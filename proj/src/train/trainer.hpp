#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "data/dataset.hpp"
#include "eval/metrics.hpp"
#include "model/model.hpp"
#include "train/config.hpp"
#include "train/optimizer.hpp"

namespace csts::train {

// A loaded clip kept compactly in memory (f32 payloads).
struct Sample {
    std::string clip_id;
    Shape frame_shape, spec_shape;
    std::vector<float> frames, spectrograms;
    std::vector<model::GazePoint> gaze;

    static Sample from_clip(const data::ClipSample& clip);
    model::ModelInput input() const;
};

struct Dataset {
    std::vector<Sample> train, test;
};

data::SamplingConfig sampling_for(const TrainConfig& cfg);

// Loads both splits of a manifest; clips are read in parallel, results keep
// manifest order.
Dataset load_dataset(const std::string& manifest, const TrainConfig& cfg, unsigned threads = 1);

struct StepRecord {
    Index step = 0, epoch = 0;
    double lr = 0.0, kld = 0.0, cntr = 0.0, total = 0.0, grad_norm = 0.0;

    nlohmann::json to_json() const;
};

struct TrainResult {
    std::vector<StepRecord> steps;
    std::vector<std::pair<Index, eval::EvalReport>> evals;  // (step, report)
    std::optional<eval::EvalReport> final_report;
    std::string checkpoint;
};

struct TrainOptions {
    std::string out_dir;  // empty: nothing is written
    std::function<void(const StepRecord&)> on_step;
};

struct BatchLoss {
    Tensor kld, cntr, total;  // cntr undefined without a contrastive head
};

// Objective of one batch: mean per-sample KLD plus alpha * InfoNCE over the
// batch's contrastive embeddings. Records on the active tape, if any.
BatchLoss batch_loss(const model::CstsModel& m, const TrainConfig& cfg, const std::vector<const Sample*>& batch);

// Test-split evaluation: micro-averaged F1 over every valid future frame.
eval::EvalReport evaluate(const model::CstsModel& m, const std::vector<Sample>& samples, double gamma);

class Trainer {
public:
    explicit Trainer(TrainConfig cfg);

    // Runs cfg.epochs passes over data.train in seeded shuffled order,
    // stepping AdamW under the cosine schedule. A non-finite loss aborts
    // with the step, epoch and clip ids involved.
    TrainResult fit(const Dataset& data, const TrainOptions& opts = {});

    // Forward + backward of one batch; gradients are left in the parameters.
    StepRecord compute_gradients(const std::vector<const Sample*>& batch);

    const TrainConfig& config() const { return cfg_; }
    model::CstsModel& model() { return *model_; }
    AdamW& optimizer() { return opt_; }

private:
    TrainConfig cfg_;
    std::unique_ptr<model::CstsModel> model_;
    AdamW opt_;
};

// Checkpoint with the resolved model config, training config and optimizer state.
void save_training_checkpoint(const std::string& path, const Trainer& t, Index step);
// Rebuilds a model from the config stored in a checkpoint and loads its weights.
std::unique_ptr<model::CstsModel> load_model(const std::string& checkpoint);

// Thread-scoped precision mode.
class PrecisionScope {
public:
    explicit PrecisionScope(Precision p) : previous_(precision()) { set_precision(p); }
    ~PrecisionScope() { set_precision(previous_); }
    PrecisionScope(const PrecisionScope&) = delete;
    PrecisionScope& operator=(const PrecisionScope&) = delete;

private:
    Precision previous_;
};

} // namespace csts::train
