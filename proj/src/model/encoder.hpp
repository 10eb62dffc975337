#pragma once

#include "model/config.hpp"
#include "model/layers.hpp"
#include "model/trace.hpp"

namespace csts::model {

struct EncoderOutput {
    Tensor embedding;            // [T, H, W, embed_dim] after positional terms
    std::vector<Tensor> stages;  // [T, H_s, W_s, dim_s] per stage
    Tensor tokens;               // [T, H*W, D], last stage flattened per frame
    Dims3 grid;                  // token grid of `tokens`
};

// Mean over non-overlapping (pt, ph, pw) cells of a [T, H, W, C] volume.
Tensor mean_pool3(const Tensor& x, Dims3 cell);

class Encoder {
public:
    Encoder() = default;
    Encoder(const EncoderConfig& cfg, ParamStore& ps, const std::string& name, Rng& rng);

    // input: [T_in, H, W, C] (a [T_in, H, W] input is taken as C = 1).
    EncoderOutput operator()(const Tensor& input, ShapeTrace* trace = nullptr) const;
    const EncoderConfig& config() const { return cfg_; }

private:
    struct Stage {
        std::vector<TransformerBlock> blocks;
        Linear proj;  // weight undefined when the width is unchanged
    };
    EncoderConfig cfg_;
    std::string name_;
    Linear embed_;
    Tensor pos_time_, pos_space_;
    std::vector<Stage> stages_;
};

} // namespace csts::model
