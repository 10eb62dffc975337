#include "model/fusion.hpp"

namespace csts::model {

namespace {

void require_rank3(const Tensor& x, const char* what) {
    if (x.rank() != 3) throw DimensionError(std::string(what) + " must be [T, tokens, D], got " + shape_str(x.shape()));
}

} // namespace

TokenPool TokenPool::make(ParamStore& ps, const std::string& name, Index tokens, Index dim, Rng& rng) {
    TokenPool p;
    p.map = Linear::make(ps, name, tokens * dim, dim, rng);
    p.tokens = tokens;
    return p;
}

Tensor TokenPool::operator()(const Tensor& x) const {
    require_rank3(x, "token pool input");
    if (x.size(1) != tokens)
        throw DimensionError("token pool expects " + std::to_string(tokens) + " tokens per frame, got " +
                             shape_str(x.shape()));
    const Index t = x.size(0), d = x.size(2);
    return reshape(map(reshape(x, {t, tokens * d})), {t, 1, map.weight.size(1)});
}

Tensor spatial_fusion(const TransformerBlock& block, const Tensor& visual, const Tensor& z_as, Tensor* capture) {
    require_rank3(visual, "visual tokens");
    require_rank3(z_as, "z_as");
    const Index t = visual.size(0), n = visual.size(1), d = visual.size(2);
    if (z_as.shape() != Shape{t, 1, d})
        throw DimensionError("spatial fusion: z_as " + shape_str(z_as.shape()) + " does not fit visual " +
                             shape_str(visual.shape()));
    Tensor z = reshape(concat({visual, z_as}, 1), {t * (n + 1), d});
    Tensor mask = t > 1 ? block_diagonal_mask(t, n + 1) : Tensor();
    return reshape(block(z, mask, capture), {t, n + 1, d});
}

Tensor temporal_fusion(const TransformerBlock& block, const Tensor& z_vt, const Tensor& z_at) {
    require_rank3(z_vt, "z_vt");
    if (z_vt.shape() != z_at.shape() || z_vt.size(1) != 1)
        throw DimensionError("temporal fusion: z_vt " + shape_str(z_vt.shape()) + " and z_at " +
                             shape_str(z_at.shape()) + " must both be [T, 1, D]");
    const Index t = z_vt.size(0), d = z_vt.size(2);
    Tensor z = reshape(concat({z_vt, z_at}, 0), {2 * t, d});
    return reshape(block(z), {2 * t, 1, d});
}

void merge_reweight(FusionBundle& b, const Tensor& visual, const Tensor& audio) {
    const Index t = visual.size(0), n = visual.size(1);
    if (b.u_s.defined()) {
        b.u_vs = slice(b.u_s, 1, 0, n);
        b.u_as = slice(b.u_s, 1, n, 1);
    }
    if (b.u_t.defined()) {
        b.u_vt = slice(b.u_t, 0, 0, t);
        b.u_at = slice(b.u_t, 0, t, t);
        b.u_a = mul(audio, b.u_at);
        b.u_v = mul(b.u_vs.defined() ? b.u_vs : visual, b.u_vt);
    }
}

Tensor spatial_correlation_map(const Tensor& attention, Index frames, Dims3 grid) {
    if (!attention.defined())
        throw StateError("spatial correlation map: attention weights were not captured for this forward pass");
    const Index n = grid.h * grid.w;
    const Index len = frames * (n + 1);
    if (attention.rank() != 3 || attention.size(1) != len || attention.size(2) != len)
        throw DimensionError("spatial correlation map: attention " + shape_str(attention.shape()) + " does not fit " +
                             std::to_string(frames) + " frames of " + std::to_string(n) + "+1 tokens");
    const Index heads = attention.size(0);
    std::vector<double> out(static_cast<std::size_t>(frames * n), 0.0);
    for (Index f = 0; f < frames; ++f) {
        const Index row = f * (n + 1) + n;
        double total = 0.0;
        for (Index j = 0; j < n; ++j) {
            double acc = 0.0;
            for (Index h = 0; h < heads; ++h) acc += attention[(h * len + row) * len + f * (n + 1) + j];
            out[static_cast<std::size_t>(f * n + j)] = acc / static_cast<double>(heads);
            total += acc / static_cast<double>(heads);
        }
        if (total > 0.0)
            for (Index j = 0; j < n; ++j) out[static_cast<std::size_t>(f * n + j)] /= total;
    }
    return Tensor::from_data({frames, grid.h, grid.w}, std::move(out));
}

Tensor vanilla_sa_fuse(const TransformerBlock& block, const Tensor& visual, const Tensor& audio, const Tensor& mask) {
    require_rank3(visual, "visual tokens");
    require_rank3(audio, "audio tokens");
    const Index t = visual.size(0), n = visual.size(1), m = audio.size(1), d = visual.size(2);
    if (audio.size(0) != t || audio.size(2) != d)
        throw DimensionError("vanilla SA: audio " + shape_str(audio.shape()) + " does not fit visual " +
                             shape_str(visual.shape()));
    Tensor z = reshape(concat({visual, audio}, 1), {t * (n + m), d});
    Tensor u = reshape(block(z, mask), {t, n + m, d});
    return slice(u, 1, 0, n);
}

BaselineFusion::BaselineFusion(const ModelConfig& cfg, ParamStore& ps, Rng& rng) : strategy_(cfg.strategy) {
    const Index d = cfg.dim();
    const Index t = cfg.video.output_grid().t;
    const Index n = cfg.tokens_per_frame(), m = cfg.audio_tokens_per_frame();
    switch (strategy_) {
    case FusionStrategy::linear:
        fc1_ = Linear::make(ps, "fusion.linear.fc1", 2 * d, d, rng);
        fc2_ = Linear::make(ps, "fusion.linear.fc2", d, d, rng);
        break;
    case FusionStrategy::bilinear:
        bil_tokens_ = cfg.fusion.bilinear_tokens > 0 ? cfg.fusion.bilinear_tokens : t * n;
        reduce_v_ = Linear::make(ps, "fusion.bilinear.reduce_v", t * n, bil_tokens_, rng);
        reduce_a_ = Linear::make(ps, "fusion.bilinear.reduce_a", t * m, bil_tokens_, rng);
        bil_weight_ = ps.xavier("fusion.bilinear.weight", {d, d * d}, 2 * d, d, rng);
        bil_bias_ = ps.constant("fusion.bilinear.bias", {d}, 0.0);
        if (bil_tokens_ != t * n) expand_ = Linear::make(ps, "fusion.bilinear.expand", bil_tokens_, t * n, rng);
        break;
    case FusionStrategy::concat:
        break;
    case FusionStrategy::vanilla_sa:
        block_ = TransformerBlock::make(ps, "fusion.vanilla_sa", d, cfg.fusion.heads, cfg.fusion.mlp_ratio, rng);
        break;
    default:
        throw ConfigError(std::string("'") + strategy_name(strategy_) + "' is not a joint-fusion baseline");
    }
}

Tensor BaselineFusion::operator()(const Tensor& visual, const Tensor& audio) const {
    require_rank3(visual, "visual tokens");
    require_rank3(audio, "audio tokens");
    const Index t = visual.size(0), n = visual.size(1), d = visual.size(2), m = audio.size(1);
    switch (strategy_) {
    case FusionStrategy::linear:
    case FusionStrategy::concat: {
        if (m != n)
            throw DimensionError(std::string(strategy_name(strategy_)) + " fusion needs as many audio as visual tokens (" +
                                 std::to_string(m) + " vs " + std::to_string(n) + ")");
        Tensor cat = concat({visual, audio}, 2);
        if (strategy_ == FusionStrategy::concat) return cat;
        return fc2_(gelu(fc1_(cat)));
    }
    case FusionStrategy::bilinear: {
        auto shrink = [&](const Tensor& x, const Linear& map) {
            Tensor flat = reshape(x, {x.size(0) * x.size(1), d});
            return transpose(map(transpose(flat, 0, 1)), 0, 1);  // [L_b, D]
        };
        Tensor xv = shrink(visual, reduce_v_);
        Tensor xa = shrink(audio, reduce_a_);
        const Index lb = xv.size(0);
        // out[l, o] = sum_ij xv[l, i] W[i, o, j] xa[l, j] + b[o]
        Tensor left = reshape(linear(xv, bil_weight_), {lb, d, d});
        Tensor out = add(sum(mul(left, reshape(xa, {lb, 1, d})), 2), bil_bias_);
        if (expand_.weight.defined()) out = transpose(expand_(transpose(out, 0, 1)), 0, 1);
        return reshape(out, {t, n, d});
    }
    case FusionStrategy::vanilla_sa:
        return vanilla_sa_fuse(block_, visual, audio);
    default:
        throw ConfigError("unsupported baseline fusion");
    }
}

SeparableFusion::SeparableFusion(const ModelConfig& cfg, ParamStore& ps, Rng& rng)
    : spatial_(uses_spatial_fusion(cfg.strategy)), temporal_(uses_temporal_fusion(cfg.strategy)) {
    const Index d = cfg.dim();
    if (spatial_) {
        conv1_ = TokenPool::make(ps, "fusion.conv1", cfg.audio_tokens_per_frame(), d, rng);
        spatial_block_ = TransformerBlock::make(ps, "fusion.spatial", d, cfg.fusion.heads, cfg.fusion.mlp_ratio, rng);
    }
    if (temporal_) {
        conv2_ = TokenPool::make(ps, "fusion.conv2", cfg.tokens_per_frame(), d, rng);
        conv3_ = TokenPool::make(ps, "fusion.conv3", cfg.audio_tokens_per_frame(), d, rng);
        temporal_block_ = TransformerBlock::make(ps, "fusion.temporal", d, cfg.fusion.heads, cfg.fusion.mlp_ratio, rng);
    }
}

FusionBundle SeparableFusion::operator()(const Tensor& visual, const Tensor& audio, bool capture,
                                         ShapeTrace* tr) const {
    FusionBundle b;
    if (spatial_) {
        Tensor z_as = conv1_(audio);
        trace(tr, "fusion.conv1", z_as.shape());
        b.u_s = spatial_fusion(spatial_block_, visual, z_as, capture ? &b.spatial_attention : nullptr);
        trace(tr, "fusion.in_frame", b.u_s.shape());
    }
    if (temporal_) {
        Tensor z_vt = conv2_(visual);
        Tensor z_at = conv3_(audio);
        trace(tr, "fusion.conv2", z_vt.shape());
        trace(tr, "fusion.conv3", z_at.shape());
        b.u_t = temporal_fusion(temporal_block_, z_vt, z_at);
        trace(tr, "fusion.cross_frame", b.u_t.shape());
    }
    merge_reweight(b, visual, audio);
    if (b.u_v.defined()) trace(tr, "fusion.u_v", b.u_v.shape());
    if (b.u_a.defined()) trace(tr, "fusion.u_a", b.u_a.shape());
    return b;
}

} // namespace csts::model
