#include "model/model.hpp"

namespace csts::model {

ContrastiveHead ContrastiveHead::make(ParamStore& ps, Index dim, Index out_dim, Rng& rng) {
    return {Linear::make(ps, "contrastive.f1", dim, out_dim, rng), Linear::make(ps, "contrastive.f2", dim, out_dim, rng)};
}

std::pair<Tensor, Tensor> ContrastiveHead::operator()(const Tensor& vec_v, const Tensor& vec_a) const {
    auto pooled = [](const Tensor& x) {
        const Index d = x.size(-1);
        return mean(reshape(x, {x.numel() / d, d}), 0, true);
    };
    return {l2_normalize_last(f1(pooled(vec_v))), l2_normalize_last(f2(pooled(vec_a)))};
}

std::pair<Tensor, Tensor> contrastive_inputs(ContrastiveVariant variant, const ModelOutput& out) {
    const auto& b = out.bundle;
    std::pair<Tensor, Tensor> r;
    switch (variant) {
    case ContrastiveVariant::post: r = {b.u_v, b.u_a}; break;
    case ContrastiveVariant::vanilla: r = {out.video.tokens, out.audio.tokens}; break;
    case ContrastiveVariant::spatial: r = {b.u_vs, b.u_as}; break;
    case ContrastiveVariant::temporal: r = {b.u_vt, b.u_at}; break;
    case ContrastiveVariant::cross:
        if (b.u_as.defined() && b.u_at.defined()) r = {b.u_v, mul(b.u_as, b.u_at)};
        break;
    }
    if (!r.first.defined() || !r.second.defined())
        throw ConfigError(std::string("contrastive variant '") + variant_name(variant) +
                          "' needs fusion outputs this model did not produce");
    return r;
}

CstsModel::CstsModel(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    Rng rng(seed);
    video_ = Encoder(cfg_.video, params_, "video", rng);
    if (uses_audio(cfg_.strategy)) audio_ = Encoder(cfg_.audio, params_, "audio", rng);
    if (uses_spatial_fusion(cfg_.strategy) || uses_temporal_fusion(cfg_.strategy))
        separable_ = SeparableFusion(cfg_, params_, rng);
    if (is_joint_baseline(cfg_.strategy)) baseline_ = BaselineFusion(cfg_, params_, rng);
    decoder_ = Decoder(cfg_, params_, rng);
    if (cfg_.contrastive) head_ = ContrastiveHead::make(params_, cfg_.dim(), cfg_.contrastive_dim, rng);
}

ModelOutput CstsModel::forward(const ModelInput& in, const ForwardOptions& opts) const {
    ModelOutput out;
    out.video = video_(in.frames, opts.trace);
    const FusionStrategy s = cfg_.strategy;
    if (uses_audio(s)) {
        if (!in.spectrograms.defined()) throw ContractError("model: strategy needs spectrograms but none were given");
        out.audio = audio_(in.spectrograms, opts.trace);
    }
    switch (s) {
    case FusionStrategy::vision_only:
        out.decoder_input = out.video.tokens;
        break;
    case FusionStrategy::s_fusion:
    case FusionStrategy::t_fusion:
    case FusionStrategy::sts:
        out.bundle = separable_(out.video.tokens, out.audio.tokens, opts.capture_attention, opts.trace);
        out.decoder_input = s == FusionStrategy::s_fusion ? out.bundle.u_vs : out.bundle.u_v;
        break;
    default:
        out.decoder_input = baseline_(out.video.tokens, out.audio.tokens);
        trace(opts.trace, "fusion.baseline", out.decoder_input.shape());
        break;
    }
    out.heat = decoder_(out.decoder_input, out.video, opts.trace);
    if (cfg_.contrastive) {
        auto [vv, va] = contrastive_inputs(cfg_.variant, out);
        std::tie(out.w_v, out.w_a) = head_(vv, va);
        trace(opts.trace, "contrastive.w_v", out.w_v.shape());
        trace(opts.trace, "contrastive.w_a", out.w_a.shape());
    }
    return out;
}

ShapeTrace plan_shapes(const ModelConfig& cfg) {
    cfg.validate();
    ShapeTrace t;
    auto encoder = [&](const EncoderConfig& e, const std::string& name) {
        const Dims3 g = e.embed_grid();
        t.add(name + ".embedding", {g.t, g.h, g.w, e.embed_dim});
        for (std::size_t s = 0; s < e.stages.size(); ++s) {
            const Dims3 sg = e.stage_grid(s);
            t.add(name + ".stage" + std::to_string(s), {sg.t, sg.h, sg.w, e.stage_dim(s)});
        }
        const Dims3 og = e.output_grid();
        t.add(name + ".tokens", {og.t, og.h * og.w, e.output_dim()});
    };
    encoder(cfg.video, "video");
    const Index tt = cfg.video.output_grid().t, n = cfg.tokens_per_frame(), d = cfg.dim();
    if (uses_audio(cfg.strategy)) encoder(cfg.audio, "audio");
    const Index m = uses_audio(cfg.strategy) ? cfg.audio_tokens_per_frame() : 0;
    if (uses_spatial_fusion(cfg.strategy)) {
        t.add("fusion.conv1", {tt, 1, d});
        t.add("fusion.in_frame", {tt, n + 1, d});
    }
    if (uses_temporal_fusion(cfg.strategy)) {
        t.add("fusion.conv2", {tt, 1, d});
        t.add("fusion.conv3", {tt, 1, d});
        t.add("fusion.cross_frame", {2 * tt, 1, d});
        t.add("fusion.u_v", {tt, n, d});
        t.add("fusion.u_a", {tt, m, d});
    }
    if (is_joint_baseline(cfg.strategy)) t.add("fusion.baseline", {tt, n, cfg.decoder_in_dim()});
    const auto& v = cfg.video;
    const std::size_t stages = v.stages.size();
    Dims3 grid{};
    for (std::size_t k = 0; k < stages; ++k) {
        const std::size_t s = stages - 1 - k;
        grid = s == 0 ? v.embed_grid() : v.stage_grid(s - 1);
        const Index c = s == 0 ? v.embed_dim : v.stage_dim(s - 1);
        const Index time = k + 1 == stages ? cfg.t_out / cfg.decoder.head_time : grid.t;
        t.add("decoder.block" + std::to_string(k), {time, grid.h, grid.w, c});
    }
    const Index r = cfg.decoder.head_subgrid;
    t.add("decoder.head", {cfg.t_out, grid.h * r, grid.w * r, 1});
    t.add("output", {cfg.t_out, cfg.image().h, cfg.image().w});
    if (cfg.contrastive) {
        t.add("contrastive.w_v", {1, cfg.contrastive_dim});
        t.add("contrastive.w_a", {1, cfg.contrastive_dim});
    }
    return t;
}

} // namespace csts::model
