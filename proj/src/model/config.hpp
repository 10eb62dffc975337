#pragma once

#include <string>
#include <vector>

#include "json.hpp"
#include "tensor/ops.hpp"

namespace csts::model {

enum class FusionStrategy { vision_only, s_fusion, t_fusion, sts, linear, bilinear, concat, vanilla_sa };
enum class ContrastiveVariant { post, vanilla, spatial, temporal, cross };

FusionStrategy parse_strategy(const std::string& name);
const char* strategy_name(FusionStrategy s);
ContrastiveVariant parse_variant(const std::string& name);
const char* variant_name(ContrastiveVariant v);

bool uses_audio(FusionStrategy s);
bool uses_spatial_fusion(FusionStrategy s);
bool uses_temporal_fusion(FusionStrategy s);
bool is_joint_baseline(FusionStrategy s);

struct StageConfig {
    Index depth = 1;
    Index dim_out = 0;
    bool pool = false;
};

// One transformer encoder: strided patch embedding then stages. A stage is
// optional 2x2 pooling, `depth` blocks at the incoming width, then a linear
// projection to dim_out.
struct EncoderConfig {
    Dims3 input;  // T_in, H, W of the input volume
    Index in_channels = 3;
    Dims3 input_pool;  // fixed mean-pool applied before patch embedding
    Dims3 patch_kernel;
    Dims3 patch_stride;
    Dims3 patch_padding{0, 0, 0};
    Index embed_dim = 8;
    std::vector<StageConfig> stages;
    Index heads = 1;
    double mlp_ratio = 4.0;
    bool positional = true;

    Dims3 embed_grid() const;
    Dims3 stage_grid(std::size_t stage) const;
    Index stage_in_dim(std::size_t stage) const;
    Index stage_dim(std::size_t stage) const;
    Dims3 output_grid() const { return stage_grid(stages.size() - 1); }
    Index output_dim() const { return stage_dim(stages.size() - 1); }
    void validate(const std::string& name) const;
};

struct FusionConfig {
    Index heads = 1;
    double mlp_ratio = 4.0;
    // Token length the Bilinear baseline reduces to; 0 means T*N.
    Index bilinear_tokens = 0;
};

struct DecoderConfig {
    Index heads = 1;
    double mlp_ratio = 2.0;
    // The head emits a head_time x r x r block of logits per token
    // (depth-to-space), r = head_subgrid; 1 x 1 x 1 is a plain 1-channel
    // head. Whatever time factor the head does not supply, the last block
    // makes up by interpolation.
    Index head_subgrid = 1;
    Index head_time = 1;
};

struct ModelConfig {
    EncoderConfig video;
    EncoderConfig audio;
    FusionConfig fusion;
    DecoderConfig decoder;
    Index contrastive_dim = 16;
    Index t_out = 8;
    FusionStrategy strategy = FusionStrategy::sts;
    ContrastiveVariant variant = ContrastiveVariant::post;
    bool contrastive = true;

    static ModelConfig desk();
    static ModelConfig full();

    Index tokens_per_frame() const;        // N = H * W of the video output grid
    Index audio_tokens_per_frame() const;  // M
    Index dim() const;                     // D
    Index decoder_in_dim() const;          // D, or 2D for Concat
    Dims3 image() const { return video.input; }
    void validate() const;
};

nlohmann::json to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const nlohmann::json& j);

} // namespace csts::model
