#pragma once

#include <string>
#include <utility>
#include <vector>

#include "common/rng.hpp"
#include "tensor/ops.hpp"

namespace csts::model {

struct NamedParam {
    std::string name;
    Tensor value;
};

// Ordered registry of trainable tensors. Order is creation order, which is
// also the checkpoint and optimizer-state order.
class ParamStore {
public:
    // Xavier-uniform with the given fans.
    Tensor xavier(const std::string& name, Shape shape, Index fan_in, Index fan_out, Rng& rng);
    Tensor constant(const std::string& name, Shape shape, double value);

    const std::vector<NamedParam>& params() const { return params_; }
    Tensor get(const std::string& name) const;
    const NamedParam* find(const std::string& name) const;
    Index count() const;
    void zero_grad();

private:
    Tensor add(const std::string& name, Tensor t);
    std::vector<NamedParam> params_;
};

struct Linear {
    Tensor weight;  // [in, out]
    Tensor bias;    // [out] or undefined

    static Linear make(ParamStore& ps, const std::string& name, Index in, Index out, Rng& rng, bool bias = true);
    Tensor operator()(const Tensor& x) const { return linear(x, weight, bias); }
};

struct LayerNorm {
    Tensor gamma, beta;

    static LayerNorm make(ParamStore& ps, const std::string& name, Index dim);
    Tensor operator()(const Tensor& x) const { return layer_norm(x, gamma, beta); }
};

// Multi-head self-attention over a flat token list [L, D]. The key
// projection has no bias: softmax is shift invariant, so a key bias only
// ever receives a zero gradient.
struct Attention {
    Linear q, k, v, out;
    Index heads = 1;

    static Attention make(ParamStore& ps, const std::string& name, Index dim, Index heads, Rng& rng);
    // mask: additive [L, L]; capture receives the [heads, L, L] probabilities.
    Tensor operator()(const Tensor& x, const Tensor& mask = Tensor(), Tensor* capture = nullptr) const;
};

// Pre-norm transformer block: x + MSA(LN(x)), then + MLP(LN(.)).
struct TransformerBlock {
    LayerNorm ln1, ln2;
    Attention attn;
    Linear fc1, fc2;

    static TransformerBlock make(ParamStore& ps, const std::string& name, Index dim, Index heads, double mlp_ratio,
                                 Rng& rng);
    Tensor operator()(const Tensor& x, const Tensor& mask = Tensor(), Tensor* capture = nullptr) const;
};

// Additive mask that blocks attention between tokens of different groups
// (consecutive runs of `group` tokens): 0 inside a group, -1e30 across.
Tensor block_diagonal_mask(Index groups, Index group);

} // namespace csts::model
