#pragma once

#include <string>
#include <vector>

#include "json.hpp"
#include "tensor/gradcheck.hpp"
#include "train/config.hpp"

namespace csts::verify {

struct ModelGradcheckOptions {
    double tolerance = 1e-4;
    double h = 1e-5;
    Index probes_per_tensor = 3;  // largest-|grad| components of each checked tensor
    Index batch = 2;
    double perturb = 0.05;        // std of the noise added to every parameter first
    std::uint64_t seed = 0;
    Index max_params = 100000;
};

struct ParamCheck {
    std::string model, param;
    double max_rel_error = 0.0, analytic = 0.0, numeric = 0.0;
    bool zero_gradient = false;
};

struct ModuleCheck {
    std::string model, module, worst_param;
    double max_rel_error = 0.0;
};

struct ModelGradcheckReport {
    double tolerance = 0.0;
    std::vector<std::pair<std::string, Index>> models;  // (label, parameter count)
    std::vector<ParamCheck> params;
    std::vector<ModuleCheck> modules;
    bool passed = true;
    std::string offending;              // "<model>: <param>" of the worst violation
    std::vector<OpCheck> ops;           // every primitive checked in isolation
    std::vector<OpCheck> suspect_ops;   // primitives failing their own check
    std::string note;

    nlohmann::json to_json() const;
    std::string table() const;
};

// One labelled model configuration to check.
struct GradcheckTarget {
    std::string label;
    train::TrainConfig config;
    // 0: every parameter tensor; k: the k tensors with the largest gradient
    // norm in each module.
    Index tensors_per_module = 0;
};

// The CSTS model (every tensor), then every other fusion strategy and
// contrastive placement (a per-module sample). Together these reach every
// differentiable module.
std::vector<GradcheckTarget> all_gradcheck_targets(const train::TrainConfig& base);

// Central-difference check of the total training loss with respect to a
// sample of every parameter tensor of each target, in f64. Parameters are
// first perturbed so zero-initialised tensors do not hide paths. The op-level
// suite also runs; it names the primitives whose backward is wrong, and it
// catches faults that cancel inside a model (an op applied twice in a chain).
ModelGradcheckReport run_model_gradcheck(const std::vector<GradcheckTarget>& targets,
                                         const ModelGradcheckOptions& opts = {});

// Module key of a parameter name: its first two dotted components.
std::string module_of(const std::string& param);

} // namespace csts::verify
