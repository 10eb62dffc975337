#include "train/optimizer.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace csts::train {

double cosine_lr(double base, Index step, Index total) {
    if (total <= 0) return base;
    const double u = static_cast<double>(std::clamp<Index>(step, 0, total)) / static_cast<double>(total);
    return base * 0.5 * (1.0 + std::cos(std::numbers::pi * u));
}

AdamW::AdamW(const model::ParamStore& ps, AdamWConfig cfg) : cfg_(cfg) {
    for (const auto& p : ps.params()) {
        state_.m.emplace_back(static_cast<std::size_t>(p.value.numel()), 0.0);
        state_.v.emplace_back(static_cast<std::size_t>(p.value.numel()), 0.0);
    }
}

void AdamW::load_state(const data::OptimizerState& s) {
    if (s.m.size() != state_.m.size() || s.v.size() != state_.v.size())
        throw StateError("optimizer state has " + std::to_string(s.m.size()) + " tensors, expected " + std::to_string(state_.m.size()));
    for (std::size_t i = 0; i < s.m.size(); ++i)
        if (s.m[i].size() != state_.m[i].size() || s.v[i].size() != state_.v[i].size())
            throw StateError("optimizer moment " + std::to_string(i) + " has the wrong size");
    state_ = s;
}

void AdamW::step(model::ParamStore& ps, double lr) {
    const auto& params = ps.params();
    if (params.size() != state_.m.size()) throw StateError("parameter set changed after the optimizer was built");
    ++state_.step;
    const double t = static_cast<double>(state_.step);
    const double bc1 = 1.0 - std::pow(cfg_.beta1, t);
    const double bc2 = 1.0 - std::pow(cfg_.beta2, t);
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor p = params[i].value;
        auto data = p.mutable_data();
        const auto grad = p.grad();
        auto& m = state_.m[i];
        auto& v = state_.v[i];
        for (std::size_t j = 0; j < data.size(); ++j) {
            const double g = grad.empty() ? 0.0 : grad[j];
            m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * g;
            v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * g * g;
            const double m_hat = m[j] / bc1, v_hat = v[j] / bc2;
            data[j] -= lr * cfg_.weight_decay * data[j];
            data[j] -= lr * m_hat / (std::sqrt(v_hat) + cfg_.eps);
        }
    }
}

double grad_norm(const model::ParamStore& ps) {
    double s = 0.0;
    for (const auto& p : ps.params())
        for (double g : p.value.grad()) s += g * g;
    return std::sqrt(s);
}

double clip_grad_norm(model::ParamStore& ps, double max_norm) {
    const double n = grad_norm(ps);
    if (n > max_norm && n > 0.0) {
        const double k = max_norm / n;
        for (const auto& p : ps.params()) {
            Tensor t = p.value;
            if (!t.has_grad()) continue;
            for (double& g : t.mutable_grad()) g *= k;
        }
    }
    return n;
}

} // namespace csts::train
