#include "model/encoder.hpp"

namespace csts::model {

Tensor mean_pool3(const Tensor& x, Dims3 cell) {
    if (x.rank() != 4) throw DimensionError("mean_pool3 expects [T, H, W, C], got " + shape_str(x.shape()));
    if (cell == Dims3{1, 1, 1}) return x;
    const Index t = x.size(0), h = x.size(1), w = x.size(2), c = x.size(3);
    if (t % cell.t || h % cell.h || w % cell.w)
        throw DimensionError("mean_pool3: " + shape_str(x.shape()) + " is not divisible by the pooling cell");
    Tensor r = reshape(x, {t / cell.t, cell.t, h / cell.h, cell.h, w / cell.w, cell.w, c});
    r = mean(r, 5);
    r = mean(r, 3);
    return mean(r, 1);
}

Encoder::Encoder(const EncoderConfig& cfg, ParamStore& ps, const std::string& name, Rng& rng)
    : cfg_(cfg), name_(name) {
    cfg_.validate(name);
    const Index features = cfg.patch_kernel.t * cfg.patch_kernel.h * cfg.patch_kernel.w * cfg.in_channels;
    embed_ = Linear::make(ps, name + ".embed", features, cfg.embed_dim, rng);
    const Dims3 g = cfg.embed_grid();
    if (cfg.positional) {
        pos_time_ = ps.xavier(name + ".pos_time", {g.t, 1, 1, cfg.embed_dim}, g.t, cfg.embed_dim, rng);
        pos_space_ = ps.xavier(name + ".pos_space", {1, g.h, g.w, cfg.embed_dim}, g.h * g.w, cfg.embed_dim, rng);
    }
    for (std::size_t s = 0; s < cfg.stages.size(); ++s) {
        const std::string sn = name + ".stage" + std::to_string(s);
        const Index in = cfg.stage_in_dim(s);
        Stage st;
        for (Index b = 0; b < cfg.stages[s].depth; ++b)
            st.blocks.push_back(
                TransformerBlock::make(ps, sn + ".block" + std::to_string(b), in, cfg.heads, cfg.mlp_ratio, rng));
        if (cfg.stages[s].dim_out != in) st.proj = Linear::make(ps, sn + ".proj", in, cfg.stages[s].dim_out, rng);
        stages_.push_back(std::move(st));
    }
}

EncoderOutput Encoder::operator()(const Tensor& input, ShapeTrace* tr) const {
    Tensor x = input.rank() == 3 ? reshape(input, {input.size(0), input.size(1), input.size(2), 1}) : input;
    const Shape expected{cfg_.input.t, cfg_.input.h, cfg_.input.w, cfg_.in_channels};
    if (x.shape() != expected)
        throw DimensionError(name_ + ": input " + shape_str(x.shape()) + " does not match the configured " +
                             shape_str(expected));
    x = mean_pool3(x, cfg_.input_pool);
    Tensor e = embed_(extract_patches(x, cfg_.patch_kernel, cfg_.patch_stride, cfg_.patch_padding));
    if (cfg_.positional) e = add(add(e, pos_time_), pos_space_);
    EncoderOutput out;
    out.embedding = e;
    trace(tr, name_ + ".embedding", e.shape());

    Tensor h = e;
    for (std::size_t s = 0; s < stages_.size(); ++s) {
        if (cfg_.stages[s].pool) {
            const Index t = h.size(0), gh = h.size(1), gw = h.size(2), c = h.size(3);
            h = mean(mean(reshape(h, {t, gh / 2, 2, gw / 2, 2, c}), 4), 2);
        }
        const Shape grid = h.shape();
        Tensor flat = reshape(h, {grid[0] * grid[1] * grid[2], grid[3]});
        for (const auto& b : stages_[s].blocks) flat = b(flat);
        if (stages_[s].proj.weight.defined()) flat = stages_[s].proj(flat);
        h = reshape(flat, {grid[0], grid[1], grid[2], flat.size(1)});
        out.stages.push_back(h);
        trace(tr, name_ + ".stage" + std::to_string(s), h.shape());
    }
    out.grid = {h.size(0), h.size(1), h.size(2)};
    out.tokens = reshape(h, {h.size(0), h.size(1) * h.size(2), h.size(3)});
    trace(tr, name_ + ".tokens", out.tokens.shape());
    return out;
}

} // namespace csts::model
