#pragma once

#include "model/config.hpp"
#include "model/encoder.hpp"
#include "model/layers.hpp"
#include "model/trace.hpp"

namespace csts::model {

struct DecoderOutput {
    Tensor logits;  // [T_out, H_dec, W_dec]
    Tensor probs;   // [T_out, H_img, W_img], each frame sums to 1
};

// Per-frame softmax over the image plane of [T, H, W] logits.
Tensor spatial_softmax(const Tensor& logits);

// [T, H, W, rt*r*r] -> [T*rt, H*r, W*r, 1]; channel (a*r + b)*r + c of
// token (t, h, w) lands at (t*rt + a, h*r + b, w*r + c).
Tensor depth_to_space(const Tensor& x, Index rt, Index r);

// Mirrors the video encoder: one block per stage in reverse order. Each
// block projects channels, upsamples (nearest) to the skip grid, adds the
// skip feature and runs a transformer block. If the head does not supply
// the full time factor, the last block first interpolates linearly in time
// and adds a per-frame embedding. A bias-free head gives a rt x r x r
// block of logits per token; the logits are trilinearly resized to the
// image and normalised per frame.
class Decoder {
public:
    Decoder() = default;
    Decoder(const ModelConfig& cfg, ParamStore& ps, Rng& rng);
    DecoderOutput operator()(const Tensor& fused, const EncoderOutput& video, ShapeTrace* trace = nullptr) const;

private:
    struct Block {
        Linear proj;
        TransformerBlock block;
    };
    ModelConfig cfg_;
    std::vector<Block> blocks_;
    Tensor pos_time_;  // [T_last, 1, 1, C], only when the last block interpolates time
    Linear head_;
};

} // namespace csts::model
