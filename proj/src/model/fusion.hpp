#pragma once

#include "model/config.hpp"
#include "model/layers.hpp"
#include "model/trace.hpp"

namespace csts::model {

// Outputs of the fusion stage. Members that the active strategy does not
// produce stay undefined.
struct FusionBundle {
    Tensor u_s;   // [T, N+1, D], audio token last in each frame
    Tensor u_t;   // [2T, 1, D], visual rows first
    Tensor u_vs;  // [T, N, D]
    Tensor u_as;  // [T, 1, D]
    Tensor u_vt;  // [T, 1, D]
    Tensor u_at;  // [T, 1, D]
    Tensor u_v;   // [T, N, D]
    Tensor u_a;   // [T, M, D]
    Tensor spatial_attention;  // [heads, T(N+1), T(N+1)] when captured
};

// Learned map from the M tokens of each frame to one token: [T, M, D] ->
// [T, 1, D]. Equivalent to a convolution whose kernel covers the full grid.
struct TokenPool {
    Linear map;  // [M*D, D]
    Index tokens = 0;

    static TokenPool make(ParamStore& ps, const std::string& name, Index tokens, Index dim, Rng& rng);
    Tensor operator()(const Tensor& x) const;
};

// In-frame attention: every frame's N visual tokens plus its audio token
// attend only among themselves.
Tensor spatial_fusion(const TransformerBlock& block, const Tensor& visual, const Tensor& z_as,
                      Tensor* capture = nullptr);

// Cross-frame attention over [z_vt; z_at].
Tensor temporal_fusion(const TransformerBlock& block, const Tensor& z_vt, const Tensor& z_at);

// Splits u_s / u_t into their views and forms u_v, u_a. Either of u_s, u_t
// may be undefined, in which case the dependent outputs are left undefined.
void merge_reweight(FusionBundle& b, const Tensor& visual, const Tensor& audio);

// Audio-query attention over the visual keys of every frame, averaged over
// heads and renormalised: [T, H, W].
Tensor spatial_correlation_map(const Tensor& attention, Index frames, Dims3 grid);

// Visual tokens and audio tokens interleaved per frame, [T, N+M, D], through
// one block; returns the visual rows. `mask` is optional.
Tensor vanilla_sa_fuse(const TransformerBlock& block, const Tensor& visual, const Tensor& audio,
                       const Tensor& mask = Tensor());

// The four joint-fusion comparators sharing one decoder.
class BaselineFusion {
public:
    BaselineFusion() = default;
    BaselineFusion(const ModelConfig& cfg, ParamStore& ps, Rng& rng);
    Tensor operator()(const Tensor& visual, const Tensor& audio) const;

private:
    FusionStrategy strategy_ = FusionStrategy::linear;
    Linear fc1_, fc2_;                           // linear
    Linear reduce_v_, reduce_a_, expand_;        // bilinear token-length maps
    Tensor bil_weight_, bil_bias_;               // bilinear [D, D*D], [D]
    Index bil_tokens_ = 0;
    TransformerBlock block_;                     // vanilla_sa
};

// The spatial and temporal fusion branches of the separable model.
class SeparableFusion {
public:
    SeparableFusion() = default;
    SeparableFusion(const ModelConfig& cfg, ParamStore& ps, Rng& rng);
    FusionBundle operator()(const Tensor& visual, const Tensor& audio, bool capture, ShapeTrace* trace) const;

    const TransformerBlock& spatial_block() const { return spatial_block_; }
    const TransformerBlock& temporal_block() const { return temporal_block_; }
    const TokenPool& audio_spatial_pool() const { return conv1_; }

private:
    bool spatial_ = false, temporal_ = false;
    TokenPool conv1_, conv2_, conv3_;
    TransformerBlock spatial_block_, temporal_block_;
};

} // namespace csts::model
