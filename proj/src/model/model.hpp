#pragma once

#include <cstdint>
#include <memory>

#include "model/config.hpp"
#include "model/decoder.hpp"
#include "model/encoder.hpp"
#include "model/fusion.hpp"
#include "model/losses.hpp"

namespace csts::model {

struct ModelInput {
    Tensor frames;        // [T_in, H, W, 3] in [0, 1]
    Tensor spectrograms;  // [T_in, F, S]; unused by vision_only
};

struct ForwardOptions {
    bool capture_attention = false;
    ShapeTrace* trace = nullptr;
};

struct ModelOutput {
    EncoderOutput video;
    EncoderOutput audio;  // empty for vision_only
    FusionBundle bundle;
    Tensor decoder_input;
    DecoderOutput heat;
    Tensor w_v, w_a;  // [1, D'] when the contrastive head is enabled
};

// Maps two token sets to unit vectors in the shared space: mean over all
// tokens, linear map, L2 normalisation.
struct ContrastiveHead {
    Linear f1, f2;

    static ContrastiveHead make(ParamStore& ps, Index dim, Index out_dim, Rng& rng);
    std::pair<Tensor, Tensor> operator()(const Tensor& vec_v, const Tensor& vec_a) const;
};

// The token sets each contrastive placement compares.
std::pair<Tensor, Tensor> contrastive_inputs(ContrastiveVariant variant, const ModelOutput& out);

class CstsModel {
public:
    CstsModel(const ModelConfig& cfg, std::uint64_t seed);

    ModelOutput forward(const ModelInput& in, const ForwardOptions& opts = {}) const;

    const ModelConfig& config() const { return cfg_; }
    ParamStore& params() { return params_; }
    const ParamStore& params() const { return params_; }

private:
    ModelConfig cfg_;
    ParamStore params_;
    Encoder video_, audio_;
    SeparableFusion separable_;
    BaselineFusion baseline_;
    Decoder decoder_;
    ContrastiveHead head_;
};

// Shapes of every traced intermediate computed from the configuration alone,
// with the same names the forward pass records.
ShapeTrace plan_shapes(const ModelConfig& cfg);

} // namespace csts::model
