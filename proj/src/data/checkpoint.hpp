#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "model/layers.hpp"

namespace csts::data {

// AdamW moments in parameter order.
struct OptimizerState {
    std::uint64_t step = 0;
    std::vector<std::vector<double>> m, v;
};

// Binary layout, little-endian:
//   "CSTSCKPT" | u32 version | u64 len + config JSON | u64 step | u32 count
//   per tensor: u32 len + name | u8 dtype (1 = f64) | u32 rank | u64 dims | payload
//   u8 has_optimizer [| u64 adam step | m payloads | v payloads]
struct Checkpoint {
    nlohmann::json config;
    std::uint64_t step = 0;
    std::vector<model::NamedParam> tensors;
    std::optional<OptimizerState> optimizer;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

// Snapshot of a parameter store (values are copied).
std::vector<model::NamedParam> snapshot(const model::ParamStore& ps);

// Copies checkpoint values into the store. Names must match exactly;
// otherwise a ValidationError lists the extra and missing names.
void restore(model::ParamStore& ps, const Checkpoint& ckpt);

} // namespace csts::data
