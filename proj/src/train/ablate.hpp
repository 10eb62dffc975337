#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "train/trainer.hpp"

namespace csts::train {

struct AblationCell {
    std::string name;   // unique, e.g. "CSTS/seed1"
    std::string group;  // row label shared across seeds, e.g. "CSTS"
    TrainConfig config;
};

struct AblationRow {
    std::string name, group;
    nlohmann::json config;  // full training config of the cell
    bool ok = false;
    std::string error;
    std::optional<eval::EvalReport> report;
    Index steps = 0;
    double final_kld = 0.0;
};

struct GroupSummary {
    std::string group;
    Index runs = 0, failures = 0;
    double mean_f1 = 0.0, min_f1 = 0.0, max_f1 = 0.0;
};

struct AblationResult {
    std::vector<AblationRow> rows;

    std::vector<GroupSummary> summary() const;  // groups in first-appearance order
    std::optional<GroupSummary> group(const std::string& name) const;
    nlohmann::json to_json() const;
    std::string csv() const;
    std::string table() const;
};

// Named grids over a base config, each cell repeated per seed:
//   table1       Vision only, S-fusion, T-fusion, STS, CSTS
//   table2       Linear, Bilinear, Concat, VanillaSA, STS
//   contrastive  STS with each contrastive placement
//   trend        CSTS, STS, Vision only and the four joint baselines
//   single       the base config itself
// STS and the joint baselines train without the contrastive term; CSTS and
// the contrastive grid use base.alpha (0.05 when the base has none).
std::vector<AblationCell> ablation_grid(const std::string& name, const TrainConfig& base,
                                        const std::vector<std::uint64_t>& seeds);
std::vector<std::string> grid_names();

// A grid from JSON: an array of {"name": ..., <TrainConfig overrides>} or an
// object {"cells": [...], "seeds": [...]}. Overrides apply on top of base.
std::vector<AblationCell> ablation_grid_from_json(const nlohmann::json& j, const TrainConfig& base,
                                                  const std::vector<std::uint64_t>& seeds);

struct AblationOptions {
    unsigned threads = 1;
    std::string out_dir;  // per-cell logs under <out>/cells/<name>; tables at the top
    std::function<void(const AblationRow&)> on_cell;
};

// Trains and evaluates every cell on the shared dataset. A failing cell is
// recorded with its error and the grid continues. Rows keep grid order.
AblationResult run_ablation(const std::vector<AblationCell>& cells, const Dataset& data, const AblationOptions& opts = {});

} // namespace csts::train
