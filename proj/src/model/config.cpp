#include "model/config.hpp"

#include <array>

#include "common/errors.hpp"

namespace csts::model {

namespace {

constexpr std::array<std::pair<FusionStrategy, const char*>, 8> kStrategies{{
    {FusionStrategy::vision_only, "vision_only"},
    {FusionStrategy::s_fusion, "s_fusion"},
    {FusionStrategy::t_fusion, "t_fusion"},
    {FusionStrategy::sts, "sts"},
    {FusionStrategy::linear, "linear"},
    {FusionStrategy::bilinear, "bilinear"},
    {FusionStrategy::concat, "concat"},
    {FusionStrategy::vanilla_sa, "vanilla_sa"},
}};

constexpr std::array<std::pair<ContrastiveVariant, const char*>, 5> kVariants{{
    {ContrastiveVariant::post, "post"},
    {ContrastiveVariant::vanilla, "vanilla"},
    {ContrastiveVariant::spatial, "spatial"},
    {ContrastiveVariant::temporal, "temporal"},
    {ContrastiveVariant::cross, "cross"},
}};

std::string dims_str(Dims3 d) {
    return std::to_string(d.t) + "x" + std::to_string(d.h) + "x" + std::to_string(d.w);
}

nlohmann::json dims_json(Dims3 d) { return nlohmann::json::array({d.t, d.h, d.w}); }

Dims3 dims_from(const nlohmann::json& j, const char* key) {
    if (!j.is_array() || j.size() != 3) throw ConfigError(std::string("config: ") + key + " must be [t, h, w]");
    return {j[0].get<Index>(), j[1].get<Index>(), j[2].get<Index>()};
}

nlohmann::json encoder_json(const EncoderConfig& e) {
    nlohmann::json stages = nlohmann::json::array();
    for (const auto& s : e.stages) stages.push_back({{"depth", s.depth}, {"dim_out", s.dim_out}, {"pool", s.pool}});
    return {{"input", dims_json(e.input)},
            {"in_channels", e.in_channels},
            {"input_pool", dims_json(e.input_pool)},
            {"patch_kernel", dims_json(e.patch_kernel)},
            {"patch_stride", dims_json(e.patch_stride)},
            {"patch_padding", dims_json(e.patch_padding)},
            {"embed_dim", e.embed_dim},
            {"stages", stages},
            {"heads", e.heads},
            {"mlp_ratio", e.mlp_ratio},
            {"positional", e.positional}};
}

EncoderConfig encoder_from(const nlohmann::json& j, EncoderConfig e) {
    if (!j.is_object()) throw ConfigError("config: encoder section must be an object");
    for (auto it = j.begin(); it != j.end(); ++it) {
        const std::string& k = it.key();
        const auto& v = it.value();
        if (k == "input") e.input = dims_from(v, "input");
        else if (k == "in_channels") e.in_channels = v.get<Index>();
        else if (k == "input_pool") e.input_pool = dims_from(v, "input_pool");
        else if (k == "patch_kernel") e.patch_kernel = dims_from(v, "patch_kernel");
        else if (k == "patch_stride") e.patch_stride = dims_from(v, "patch_stride");
        else if (k == "patch_padding") e.patch_padding = dims_from(v, "patch_padding");
        else if (k == "embed_dim") e.embed_dim = v.get<Index>();
        else if (k == "heads") e.heads = v.get<Index>();
        else if (k == "mlp_ratio") e.mlp_ratio = v.get<double>();
        else if (k == "positional") e.positional = v.get<bool>();
        else if (k == "stages") {
            e.stages.clear();
            for (const auto& s : v)
                e.stages.push_back({s.at("depth").get<Index>(), s.at("dim_out").get<Index>(), s.value("pool", false)});
        } else {
            throw ConfigError("config: unknown encoder key '" + k + "'");
        }
    }
    return e;
}

void require(bool ok, const std::string& msg) {
    if (!ok) throw ConfigError(msg);
}

} // namespace

FusionStrategy parse_strategy(const std::string& name) {
    for (const auto& [s, n] : kStrategies)
        if (name == n) return s;
    throw ConfigError("unknown fusion strategy '" + name +
                      "' (expected vision_only, s_fusion, t_fusion, sts, linear, bilinear, concat, vanilla_sa)");
}

const char* strategy_name(FusionStrategy s) {
    for (const auto& [v, n] : kStrategies)
        if (v == s) return n;
    return "?";
}

ContrastiveVariant parse_variant(const std::string& name) {
    for (const auto& [v, n] : kVariants)
        if (name == n) return v;
    throw ConfigError("unknown contrastive variant '" + name + "' (expected post, vanilla, spatial, temporal, cross)");
}

const char* variant_name(ContrastiveVariant v) {
    for (const auto& [x, n] : kVariants)
        if (x == v) return n;
    return "?";
}

bool uses_audio(FusionStrategy s) { return s != FusionStrategy::vision_only; }
bool uses_spatial_fusion(FusionStrategy s) { return s == FusionStrategy::s_fusion || s == FusionStrategy::sts; }
bool uses_temporal_fusion(FusionStrategy s) { return s == FusionStrategy::t_fusion || s == FusionStrategy::sts; }
bool is_joint_baseline(FusionStrategy s) {
    return s == FusionStrategy::linear || s == FusionStrategy::bilinear || s == FusionStrategy::concat ||
           s == FusionStrategy::vanilla_sa;
}

Dims3 EncoderConfig::embed_grid() const {
    const Dims3 pooled{input.t / input_pool.t, input.h / input_pool.h, input.w / input_pool.w};
    return patch_grid(pooled, patch_kernel, patch_stride, patch_padding);
}

Dims3 EncoderConfig::stage_grid(std::size_t stage) const {
    Dims3 g = embed_grid();
    for (std::size_t s = 0; s <= stage && s < stages.size(); ++s)
        if (stages[s].pool) g = {g.t, g.h / 2, g.w / 2};
    return g;
}

Index EncoderConfig::stage_in_dim(std::size_t stage) const {
    return stage == 0 ? embed_dim : stages[stage - 1].dim_out;
}

Index EncoderConfig::stage_dim(std::size_t stage) const { return stages.at(stage).dim_out; }

void EncoderConfig::validate(const std::string& name) const {
    require(!stages.empty(), name + ": at least one stage is required");
    require(in_channels > 0 && embed_dim > 0 && heads > 0 && mlp_ratio > 0.0,
            name + ": channels, embed_dim, heads and mlp_ratio must be positive");
    require(input_pool.t > 0 && input_pool.h > 0 && input_pool.w > 0, name + ": input_pool must be positive");
    if (input.t % input_pool.t || input.h % input_pool.h || input.w % input_pool.w)
        throw DimensionError(name + ": input " + dims_str(input) + " is not divisible by input_pool " +
                             dims_str(input_pool));
    const Dims3 pooled{input.t / input_pool.t, input.h / input_pool.h, input.w / input_pool.w};
    if (pooled.t % patch_stride.t || pooled.h % patch_stride.h || pooled.w % patch_stride.w)
        throw DimensionError(name + ": input " + dims_str(pooled) + " must be divisible by the patch stride " +
                             dims_str(patch_stride));
    Dims3 g = embed_grid();
    for (std::size_t s = 0; s < stages.size(); ++s) {
        const auto& st = stages[s];
        require(st.depth >= 0 && st.dim_out > 0, name + ": stage " + std::to_string(s) + " has invalid depth/dim");
        if (st.pool) {
            if (g.h % 2 || g.w % 2)
                throw DimensionError(name + ": stage " + std::to_string(s) + " pools a " + dims_str(g) +
                                     " grid; height and width must be even");
            g = {g.t, g.h / 2, g.w / 2};
        }
        if (st.depth > 0 && stage_in_dim(s) % heads)
            throw ConfigError(name + ": " + std::to_string(heads) + " heads do not divide stage width " +
                              std::to_string(stage_in_dim(s)));
    }
}

ModelConfig ModelConfig::desk() {
    ModelConfig c;
    c.video.input = {8, 64, 64};
    c.video.in_channels = 3;
    c.video.input_pool = {1, 1, 1};
    c.video.patch_kernel = {2, 8, 8};
    c.video.patch_stride = {2, 8, 8};
    c.video.patch_padding = {0, 0, 0};
    c.video.embed_dim = 16;
    c.video.stages = {{1, 16, false}, {1, 32, true}};
    c.video.heads = 2;
    c.video.mlp_ratio = 2.0;

    c.audio = c.video;
    c.audio.input = {8, 256, 256};
    c.audio.in_channels = 1;
    c.audio.input_pool = {1, 4, 4};
    c.audio.embed_dim = 8;

    c.fusion = {1, 4.0, 0};
    c.decoder = {1, 2.0, 4, 2};
    c.contrastive_dim = 16;
    c.t_out = 8;
    return c;
}

ModelConfig ModelConfig::full() {
    ModelConfig c;
    c.video.input = {8, 256, 256};
    c.video.in_channels = 3;
    c.video.input_pool = {1, 1, 1};
    c.video.patch_kernel = {3, 7, 7};
    c.video.patch_stride = {2, 4, 4};
    c.video.patch_padding = {1, 3, 3};
    c.video.embed_dim = 96;
    c.video.stages = {{1, 96, false}, {2, 192, true}, {11, 384, true}, {2, 768, true}};
    c.video.heads = 1;
    c.video.mlp_ratio = 4.0;

    c.audio = c.video;
    c.audio.in_channels = 1;
    c.audio.stages = {{1, 96, false}, {1, 192, true}, {1, 384, true}, {1, 768, true}};

    c.fusion = {1, 4.0, 0};
    c.decoder = {1, 4.0, 1, 1};
    c.contrastive_dim = 256;
    c.t_out = 8;
    return c;
}

Index ModelConfig::tokens_per_frame() const {
    const Dims3 g = video.output_grid();
    return g.h * g.w;
}

Index ModelConfig::audio_tokens_per_frame() const {
    const Dims3 g = audio.output_grid();
    return g.h * g.w;
}

Index ModelConfig::dim() const { return video.output_dim(); }

Index ModelConfig::decoder_in_dim() const { return strategy == FusionStrategy::concat ? 2 * dim() : dim(); }

void ModelConfig::validate() const {
    video.validate("video encoder");
    const Dims3 vg = video.output_grid();
    require(t_out > 0 && t_out % vg.t == 0,
            "t_out " + std::to_string(t_out) + " must be a multiple of the token time extent " + std::to_string(vg.t));
    require(fusion.heads > 0 && decoder.heads > 0, "fusion/decoder heads must be positive");
    require(decoder.head_subgrid > 0 && decoder.head_time > 0, "decoder head_subgrid and head_time must be positive");
    require(t_out % decoder.head_time == 0, "t_out must be a multiple of decoder head_time");
    if (dim() % fusion.heads) throw ConfigError("fusion heads do not divide D=" + std::to_string(dim()));
    for (std::size_t s = 0; s < video.stages.size(); ++s)
        if (video.stage_dim(s) % decoder.heads) throw ConfigError("decoder heads do not divide a stage width");
    if (video.embed_dim % decoder.heads) throw ConfigError("decoder heads do not divide the embedding width");
    if (strategy == FusionStrategy::vision_only) {
        require(!contrastive, "vision_only has no audio path; the contrastive head must be disabled");
        return;
    }
    audio.validate("audio encoder");
    const Dims3 ag = audio.output_grid();
    if (ag.t != vg.t) throw DimensionError("audio token time extent " + std::to_string(ag.t) +
                                           " differs from the video's " + std::to_string(vg.t));
    if (audio.output_dim() != dim())
        throw DimensionError("audio D=" + std::to_string(audio.output_dim()) + " differs from video D=" +
                             std::to_string(dim()));
    if ((strategy == FusionStrategy::linear || strategy == FusionStrategy::concat) &&
        audio_tokens_per_frame() != tokens_per_frame())
        throw ConfigError(std::string(strategy_name(strategy)) + " fusion needs M == N, got M=" +
                          std::to_string(audio_tokens_per_frame()) + " N=" + std::to_string(tokens_per_frame()));
    require(fusion.bilinear_tokens >= 0, "bilinear_tokens must be non-negative");
    if (!contrastive) return;
    require(contrastive_dim > 0, "contrastive_dim must be positive");
    const bool spatial = uses_spatial_fusion(strategy);
    const bool temporal = uses_temporal_fusion(strategy);
    bool ok = true;
    switch (variant) {
    case ContrastiveVariant::vanilla: ok = true; break;
    case ContrastiveVariant::spatial: ok = spatial; break;
    case ContrastiveVariant::temporal: ok = temporal; break;
    case ContrastiveVariant::cross:
    case ContrastiveVariant::post: ok = spatial && temporal; break;
    }
    if (!ok)
        throw ConfigError(std::string("contrastive variant '") + variant_name(variant) +
                          "' needs fusion outputs that strategy '" + strategy_name(strategy) + "' does not produce");
}

nlohmann::json to_json(const ModelConfig& c) {
    return {{"video", encoder_json(c.video)},
            {"audio", encoder_json(c.audio)},
            {"fusion", {{"heads", c.fusion.heads}, {"mlp_ratio", c.fusion.mlp_ratio},
                        {"bilinear_tokens", c.fusion.bilinear_tokens}}},
            {"decoder", {{"heads", c.decoder.heads}, {"mlp_ratio", c.decoder.mlp_ratio}, {"head_subgrid", c.decoder.head_subgrid},
                         {"head_time", c.decoder.head_time}}},
            {"contrastive_dim", c.contrastive_dim},
            {"t_out", c.t_out},
            {"strategy", strategy_name(c.strategy)},
            {"variant", variant_name(c.variant)},
            {"contrastive", c.contrastive}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ConfigError("model config must be a JSON object");
    ModelConfig c = j.value("preset", std::string("desk")) == "full" ? ModelConfig::full() : ModelConfig::desk();
    if (j.contains("preset") && j["preset"] != "desk" && j["preset"] != "full")
        throw ConfigError("unknown preset " + j["preset"].dump());
    try {
        for (auto it = j.begin(); it != j.end(); ++it) {
            const std::string& k = it.key();
            const auto& v = it.value();
            if (k == "preset") continue;
            if (k == "video") c.video = encoder_from(v, c.video);
            else if (k == "audio") c.audio = encoder_from(v, c.audio);
            else if (k == "fusion") {
                c.fusion.heads = v.value("heads", c.fusion.heads);
                c.fusion.mlp_ratio = v.value("mlp_ratio", c.fusion.mlp_ratio);
                c.fusion.bilinear_tokens = v.value("bilinear_tokens", c.fusion.bilinear_tokens);
            } else if (k == "decoder") {
                c.decoder.heads = v.value("heads", c.decoder.heads);
                c.decoder.mlp_ratio = v.value("mlp_ratio", c.decoder.mlp_ratio);
                c.decoder.head_subgrid = v.value("head_subgrid", c.decoder.head_subgrid);
                c.decoder.head_time = v.value("head_time", c.decoder.head_time);
            } else if (k == "contrastive_dim") c.contrastive_dim = v.get<Index>();
            else if (k == "t_out") c.t_out = v.get<Index>();
            else if (k == "strategy") c.strategy = parse_strategy(v.get<std::string>());
            else if (k == "variant") c.variant = parse_variant(v.get<std::string>());
            else if (k == "contrastive") c.contrastive = v.get<bool>();
            else throw ConfigError("unknown model config key '" + k + "'");
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("model config: ") + e.what());
    }
    return c;
}

} // namespace csts::model
