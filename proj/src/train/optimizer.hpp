#pragma once

#include <vector>

#include "data/checkpoint.hpp"
#include "model/layers.hpp"

namespace csts::train {

struct AdamWConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.05;
};

// Half-cosine decay from base at step 0 to zero at step == total.
double cosine_lr(double base, Index step, Index total);

// AdamW with decoupled weight decay, one moment pair per parameter in store
// order:
//   p <- p - lr * wd * p
//   p <- p - lr * m_hat / (sqrt(v_hat) + eps)
class AdamW {
public:
    AdamW(const model::ParamStore& ps, AdamWConfig cfg);

    void step(model::ParamStore& ps, double lr);

    const data::OptimizerState& state() const { return state_; }
    void load_state(const data::OptimizerState& s);

private:
    AdamWConfig cfg_;
    data::OptimizerState state_;
};

// Global L2 norm of all gradients (missing gradients count as zero).
double grad_norm(const model::ParamStore& ps);
// Scales gradients so the global norm is at most max_norm; returns the norm before scaling.
double clip_grad_norm(model::ParamStore& ps, double max_norm);

} // namespace csts::train
