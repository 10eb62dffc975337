#include "model/layers.hpp"

#include <cmath>

namespace csts::model {

Tensor ParamStore::add(const std::string& name, Tensor t) {
    if (find(name)) throw ContractError("duplicate parameter name '" + name + "'");
    t.set_requires_grad(true);
    params_.push_back({name, t});
    return t;
}

Tensor ParamStore::xavier(const std::string& name, Shape shape, Index fan_in, Index fan_out, Rng& rng) {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::vector<double> data(static_cast<std::size_t>(shape_numel(shape)));
    for (double& v : data) v = rng.uniform(-bound, bound);
    return add(name, Tensor::from_data(std::move(shape), std::move(data)));
}

Tensor ParamStore::constant(const std::string& name, Shape shape, double value) {
    return add(name, Tensor::full(std::move(shape), value));
}

const NamedParam* ParamStore::find(const std::string& name) const {
    for (const auto& p : params_)
        if (p.name == name) return &p;
    return nullptr;
}

Tensor ParamStore::get(const std::string& name) const {
    const auto* p = find(name);
    if (!p) throw ContractError("no parameter named '" + name + "'");
    return p->value;
}

Index ParamStore::count() const {
    Index n = 0;
    for (const auto& p : params_) n += p.value.numel();
    return n;
}

void ParamStore::zero_grad() {
    for (auto& p : params_) {
        Tensor t = p.value;
        t.zero_grad();
    }
}

Linear Linear::make(ParamStore& ps, const std::string& name, Index in, Index out, Rng& rng, bool bias) {
    Linear l;
    l.weight = ps.xavier(name + ".weight", {in, out}, in, out, rng);
    if (bias) l.bias = ps.constant(name + ".bias", {out}, 0.0);
    return l;
}

LayerNorm LayerNorm::make(ParamStore& ps, const std::string& name, Index dim) {
    return {ps.constant(name + ".gamma", {dim}, 1.0), ps.constant(name + ".beta", {dim}, 0.0)};
}

Attention Attention::make(ParamStore& ps, const std::string& name, Index dim, Index heads, Rng& rng) {
    if (heads <= 0 || dim % heads)
        throw ConfigError(name + ": " + std::to_string(heads) + " heads do not divide width " + std::to_string(dim));
    Attention a;
    a.q = Linear::make(ps, name + ".q", dim, dim, rng);
    a.k = Linear::make(ps, name + ".k", dim, dim, rng, false);
    a.v = Linear::make(ps, name + ".v", dim, dim, rng);
    a.out = Linear::make(ps, name + ".out", dim, dim, rng);
    a.heads = heads;
    return a;
}

Tensor Attention::operator()(const Tensor& x, const Tensor& mask, Tensor* capture) const {
    if (x.rank() != 2) throw DimensionError("attention expects [L, D] tokens, got " + shape_str(x.shape()));
    const Index len = x.size(0);
    const Index dim = x.size(1);
    const Index dh = dim / heads;
    auto split_heads = [&](const Tensor& t) { return permute(reshape(t, {len, heads, dh}), {1, 0, 2}); };
    Tensor qh = split_heads(q(x));
    Tensor kh = split_heads(k(x));
    Tensor vh = split_heads(v(x));
    Tensor scores = mul_scalar(matmul(qh, transpose(kh, 1, 2)), 1.0 / std::sqrt(static_cast<double>(dh)));
    if (mask.defined()) {
        if (mask.shape() != Shape{len, len})
            throw DimensionError("attention mask " + shape_str(mask.shape()) + " does not match " +
                                 std::to_string(len) + " tokens");
        scores = add(scores, mask);
    }
    Tensor probs = softmax_last(scores);
    if (capture) *capture = probs.detach();
    Tensor o = reshape(permute(matmul(probs, vh), {1, 0, 2}), {len, dim});
    return out(o);
}

TransformerBlock TransformerBlock::make(ParamStore& ps, const std::string& name, Index dim, Index heads,
                                        double mlp_ratio, Rng& rng) {
    TransformerBlock b;
    b.ln1 = LayerNorm::make(ps, name + ".ln1", dim);
    b.attn = Attention::make(ps, name + ".attn", dim, heads, rng);
    b.ln2 = LayerNorm::make(ps, name + ".ln2", dim);
    const auto hidden = static_cast<Index>(std::llround(mlp_ratio * static_cast<double>(dim)));
    b.fc1 = Linear::make(ps, name + ".fc1", dim, hidden, rng);
    b.fc2 = Linear::make(ps, name + ".fc2", hidden, dim, rng);
    return b;
}

Tensor TransformerBlock::operator()(const Tensor& x, const Tensor& mask, Tensor* capture) const {
    Tensor h = add(x, attn(ln1(x), mask, capture));
    return add(h, fc2(gelu(fc1(ln2(h)))));
}

Tensor block_diagonal_mask(Index groups, Index group) {
    const Index len = groups * group;
    std::vector<double> m(static_cast<std::size_t>(len * len), -1e30);
    for (Index i = 0; i < len; ++i)
        for (Index j = 0; j < len; ++j)
            if (i / group == j / group) m[static_cast<std::size_t>(i * len + j)] = 0.0;
    return Tensor::from_data({len, len}, std::move(m));
}

} // namespace csts::model
