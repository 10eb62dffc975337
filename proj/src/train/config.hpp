#pragma once

#include <cstdint>
#include <string>

#include "json.hpp"
#include "model/config.hpp"
#include "tensor/tensor.hpp"

namespace csts::train {

struct TrainConfig {
    model::ModelConfig model = model::ModelConfig::desk();
    Index epochs = 15;
    Index batch_size = 8;
    double lr = 1e-4;
    double weight_decay = 0.05;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double alpha = 0.05;        // contrastive weight; 0 drops the contrastive head
    double temperature = 0.05;
    std::uint64_t seed = 0;
    Precision precision = Precision::f64;
    Index eval_every = 0;       // steps between test evaluations; 0 = only at the end
    bool clip_grad = false;     // clip the global gradient norm at 1.0
    double anchor = 3.0;        // anchor time within each clip, seconds
    double observation_seconds = 3.0;
    double anticipation_seconds = 2.0;
    double gamma = 0.5;         // binarisation threshold for evaluation
    Index train_limit = 0;      // use only the first k training clips; 0 = all

    // Full recipe (full-scale model).
    static TrainConfig full();

    // The model configuration actually built: the contrastive head exists
    // only when the strategy has audio and alpha > 0.
    model::ModelConfig resolved_model() const;
    void validate() const;
};

nlohmann::json to_json(const TrainConfig& cfg);
// Unspecified fields keep their defaults; unknown keys are rejected.
// Top-level "strategy" / "variant" override the ones inside "model".
TrainConfig train_config_from_json(const nlohmann::json& j);
TrainConfig load_train_config(const std::string& path);

// Worker thread cap from CSTS_THREADS (default: hardware concurrency, >= 1).
unsigned worker_threads();

} // namespace csts::train
