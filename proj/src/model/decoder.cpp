#include "model/decoder.hpp"

namespace csts::model {

Tensor spatial_softmax(const Tensor& logits) {
    if (logits.rank() != 3) throw DimensionError("spatial softmax expects [T, H, W], got " + shape_str(logits.shape()));
    const Index t = logits.size(0), h = logits.size(1), w = logits.size(2);
    return reshape(softmax_last(reshape(logits, {t, h * w})), {t, h, w});
}

Tensor depth_to_space(const Tensor& x, Index rt, Index r) {
    if (x.rank() != 4 || x.size(3) != rt * r * r)
        throw DimensionError("depth_to_space expects [T, H, W, " + std::to_string(rt * r * r) + "], got " + shape_str(x.shape()));
    const Shape g = x.shape();
    if (rt * r == 1) return x;
    return reshape(permute(reshape(x, {g[0], g[1], g[2], rt, r, r}), {0, 3, 1, 4, 2, 5}), {g[0] * rt, g[1] * r, g[2] * r, 1});
}

Decoder::Decoder(const ModelConfig& cfg, ParamStore& ps, Rng& rng) : cfg_(cfg) {
    const auto& enc = cfg.video;
    const auto stages = enc.stages.size();
    Index c_in = cfg.decoder_in_dim();
    for (std::size_t k = 0; k < stages; ++k) {
        const std::size_t s = stages - 1 - k;
        const Index c_out = s == 0 ? enc.embed_dim : enc.stage_dim(s - 1);
        const std::string name = "decoder.block" + std::to_string(k);
        Block b;
        b.proj = Linear::make(ps, name + ".proj", c_in, c_out, rng);
        b.block = TransformerBlock::make(ps, name, c_out, cfg.decoder.heads, cfg.decoder.mlp_ratio, rng);
        blocks_.push_back(std::move(b));
        c_in = c_out;
    }
    const Index t_last = cfg.t_out / cfg.decoder.head_time;
    if (t_last != enc.embed_grid().t) pos_time_ = ps.xavier("decoder.pos_time", {t_last, 1, 1, c_in}, t_last, c_in, rng);
    const Index r = cfg.decoder.head_subgrid;
    // Zero head: training starts from uniform maps.
    head_.weight = ps.constant("decoder.head.weight", {c_in, cfg.decoder.head_time * r * r}, 0.0);
}

DecoderOutput Decoder::operator()(const Tensor& fused, const EncoderOutput& video, ShapeTrace* tr) const {
    const std::size_t stages = video.stages.size();
    if (fused.rank() != 3 || fused.size(1) != video.grid.h * video.grid.w)
        throw DimensionError("decoder input " + shape_str(fused.shape()) + " does not fit the " +
                             std::to_string(video.grid.h) + "x" + std::to_string(video.grid.w) + " token grid");
    Tensor x = reshape(fused, {video.grid.t, video.grid.h, video.grid.w, fused.size(2)});
    for (std::size_t k = 0; k < blocks_.size(); ++k) {
        const std::size_t s = stages - 1 - k;
        const Tensor& skip = s == 0 ? video.embedding : video.stages[s - 1];
        const std::string name = "decoder.block" + std::to_string(k);
        x = blocks_[k].proj(x);
        for (int axis : {1, 2}) {
            const Index from = x.size(axis), to = skip.size(axis);
            if (to % from) throw DimensionError(name + ": cannot upsample " + shape_str(x.shape()) + " onto skip " + shape_str(skip.shape()));
            if (to != from) x = repeat_axis(x, axis, to / from);
        }
        if (x.shape() != skip.shape())
            throw DimensionError(name + ": features " + shape_str(x.shape()) + " do not match skip " +
                                 shape_str(skip.shape()));
        x = add(x, skip);
        // Linear (not nearest) in time: repeated frames would be identical
        // tokens, which attention cannot tell apart.
        const Index t_last = cfg_.t_out / cfg_.decoder.head_time;
        if (k + 1 == blocks_.size() && t_last != x.size(0)) x = add(interp_linear_axis(x, 0, t_last), pos_time_);
        const Shape g = x.shape();
        x = reshape(blocks_[k].block(reshape(x, {g[0] * g[1] * g[2], g[3]})), g);
        trace(tr, name, x.shape());
    }
    Tensor logits = depth_to_space(head_(x), cfg_.decoder.head_time, cfg_.decoder.head_subgrid);
    trace(tr, "decoder.head", logits.shape());
    const Dims3 img = cfg_.image();
    Tensor up = trilinear_resize(logits, {cfg_.t_out, img.h, img.w});
    DecoderOutput out;
    out.logits = reshape(logits, {logits.size(0), logits.size(1), logits.size(2)});
    out.probs = spatial_softmax(reshape(up, {cfg_.t_out, img.h, img.w}));
    trace(tr, "output", out.probs.shape());
    return out;
}

} // namespace csts::model
