#include "verify/model_gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "common/rng.hpp"
#include "train/trainer.hpp"

namespace csts::verify {

using nlohmann::json;
using model::ContrastiveVariant;
using model::FusionStrategy;

std::string module_of(const std::string& param) {
    const auto a = param.find('.');
    if (a == std::string::npos) return param;
    const auto b = param.find('.', a + 1);
    return b == std::string::npos ? param.substr(0, a) : param.substr(0, b);
}

std::vector<GradcheckTarget> all_gradcheck_targets(const train::TrainConfig& base) {
    std::vector<GradcheckTarget> out;
    auto with = [&](FusionStrategy s, ContrastiveVariant v, double alpha) {
        const Index sample = out.empty() ? 0 : 1;
        train::TrainConfig c = base;
        c.model.strategy = s;
        c.model.variant = v;
        c.alpha = alpha;
        std::string label = model::strategy_name(s);
        if (alpha > 0.0) label += std::string("+") + model::variant_name(v);
        out.push_back({label, c, sample});
    };
    for (auto v : {ContrastiveVariant::post, ContrastiveVariant::vanilla, ContrastiveVariant::spatial,
                   ContrastiveVariant::temporal, ContrastiveVariant::cross})
        with(FusionStrategy::sts, v, base.alpha > 0.0 ? base.alpha : 0.05);
    for (auto s : {FusionStrategy::vision_only, FusionStrategy::s_fusion, FusionStrategy::t_fusion, FusionStrategy::linear,
                   FusionStrategy::bilinear, FusionStrategy::concat, FusionStrategy::vanilla_sa})
        with(s, ContrastiveVariant::post, 0.0);
    return out;
}

namespace {

std::vector<train::Sample> random_batch(const model::ModelConfig& mc, Index n, Rng& rng) {
    std::vector<train::Sample> out;
    for (Index b = 0; b < n; ++b) {
        train::Sample s;
        s.clip_id = "probe" + std::to_string(b);
        const auto& vi = mc.video.input;
        const auto& ai = mc.audio.input;
        s.frame_shape = {vi.t, vi.h, vi.w, mc.video.in_channels};
        s.spec_shape = {ai.t, ai.h, ai.w};
        s.frames.resize(static_cast<std::size_t>(shape_numel(s.frame_shape)));
        for (float& v : s.frames) v = static_cast<float>(rng.uniform());
        s.spectrograms.resize(static_cast<std::size_t>(shape_numel(s.spec_shape)));
        for (float& v : s.spectrograms) v = static_cast<float>(rng.uniform());
        for (Index t = 0; t < mc.t_out; ++t)
            s.gaze.push_back({rng.uniform(0.15, 0.85), rng.uniform(0.15, 0.85), !(b == 1 && t == 2)});
        out.push_back(std::move(s));
    }
    return out;
}

std::vector<Index> top_indices(std::span<const double> g, Index k) {
    std::vector<Index> idx(g.size());
    std::iota(idx.begin(), idx.end(), Index{0});
    const auto kk = static_cast<std::size_t>(std::min<Index>(k, static_cast<Index>(g.size())));
    std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(kk), idx.end(), [&](Index a, Index b) {
        const double fa = std::abs(g[static_cast<std::size_t>(a)]), fb = std::abs(g[static_cast<std::size_t>(b)]);
        return fa != fb ? fa > fb : a < b;
    });
    idx.resize(kk);
    return idx;
}

} // namespace

ModelGradcheckReport run_model_gradcheck(const std::vector<GradcheckTarget>& targets, const ModelGradcheckOptions& opts) {
    if (targets.empty()) throw ContractError("gradcheck: no models to check");
    if (opts.probes_per_tensor < 1 || opts.batch < 1 || !(opts.h > 0.0))
        throw ConfigError("gradcheck: probes, batch and h must be positive");
    train::PrecisionScope prec(Precision::f64);
    ModelGradcheckReport rep;
    rep.tolerance = opts.tolerance;
    double worst = -1.0;
    for (const auto& target : targets) {
        train::TrainConfig cfg = target.config;
        cfg.precision = Precision::f64;
        cfg.validate();
        model::CstsModel m(cfg.resolved_model(), cfg.seed);
        const Index count = m.params().count();
        rep.models.emplace_back(target.label, count);
        if (count > opts.max_params)
            throw ConfigError("gradcheck: model '" + target.label + "' has " + std::to_string(count) +
                              " parameters, above the limit of " + std::to_string(opts.max_params));
        Rng rng(opts.seed * 0x9e3779b97f4a7c15ULL + 17);
        for (const auto& p : m.params().params()) {
            Tensor t = p.value;
            for (double& v : t.mutable_data()) v += opts.perturb * rng.normal();
        }
        const auto samples = random_batch(m.config(), opts.batch, rng);
        std::vector<const train::Sample*> batch;
        for (const auto& s : samples) batch.push_back(&s);

        m.params().zero_grad();
        {
            Tape tape;
            TapeScope scope(tape);
            const Tensor total = train::batch_loss(m, cfg, batch).total;
            tape.backward(total);
        }
        auto loss = [&]() {
            NoGradScope ng;
            return train::batch_loss(m, cfg, batch).total.item();
        };
        std::vector<bool> chosen(m.params().params().size(), target.tensors_per_module == 0);
        if (target.tensors_per_module > 0) {
            std::vector<std::pair<std::string, std::vector<std::pair<double, std::size_t>>>> by_module;
            for (std::size_t i = 0; i < m.params().params().size(); ++i) {
                const auto& p = m.params().params()[i];
                double n2 = 0.0;
                for (double v : p.value.grad()) n2 += v * v;
                const std::string mod = module_of(p.name);
                auto it = std::find_if(by_module.begin(), by_module.end(), [&](const auto& e) { return e.first == mod; });
                if (it == by_module.end()) it = by_module.insert(by_module.end(), {mod, {}});
                it->second.emplace_back(-n2, i);
            }
            for (auto& [mod, list] : by_module) {
                std::sort(list.begin(), list.end());
                for (std::size_t k = 0; k < list.size() && static_cast<Index>(k) < target.tensors_per_module; ++k) chosen[list[k].second] = true;
            }
        }
        for (std::size_t pi = 0; pi < m.params().params().size(); ++pi) {
            if (!chosen[pi]) continue;
            const auto& p = m.params().params()[pi];
            ParamCheck pc{target.label, p.name};
            std::vector<double> g(p.value.grad().begin(), p.value.grad().end());
            if (g.empty()) g.assign(static_cast<std::size_t>(p.value.numel()), 0.0);
            pc.zero_gradient = std::all_of(g.begin(), g.end(), [](double v) { return v == 0.0; });
            const auto res = compare_with_central_differences(loss, p.value, g, opts.h, top_indices(g, opts.probes_per_tensor));
            pc.max_rel_error = pc.zero_gradient ? 1.0 : res.max_rel_error;
            pc.analytic = res.analytic;
            pc.numeric = res.numeric;
            const bool bad = pc.zero_gradient || !(pc.max_rel_error < opts.tolerance);
            if (bad) {
                rep.passed = false;
                if (pc.max_rel_error > worst || rep.offending.empty()) {
                    worst = pc.max_rel_error;
                    rep.offending = target.label + ": " + p.name + (pc.zero_gradient ? " (gradient identically zero)" : "");
                }
            }
            const std::string mod = module_of(p.name);
            auto it = std::find_if(rep.modules.begin(), rep.modules.end(),
                                   [&](const ModuleCheck& mc) { return mc.model == target.label && mc.module == mod; });
            if (it == rep.modules.end()) {
                rep.modules.push_back({target.label, mod, p.name, pc.max_rel_error});
            } else if (pc.max_rel_error > it->max_rel_error) {
                it->max_rel_error = pc.max_rel_error;
                it->worst_param = p.name;
            }
            rep.params.push_back(std::move(pc));
        }
    }
    rep.ops = op_gradcheck_suite(opts.seed + 1);
    for (const auto& oc : rep.ops)
        if (!(oc.max_rel_error < opts.tolerance)) rep.suspect_ops.push_back(oc);
    if (!rep.suspect_ops.empty()) {
        if (rep.passed) rep.offending = "op " + rep.suspect_ops.front().op;
        rep.passed = false;
    } else if (!rep.passed) {
        rep.note = "every primitive passes its own check; the violation is in how the model composes them";
    }
    return rep;
}

json ModelGradcheckReport::to_json() const {
    json j;
    j["tolerance"] = tolerance;
    j["passed"] = passed;
    j["offending"] = offending;
    j["models"] = json::array();
    for (const auto& [label, n] : models) j["models"].push_back({{"model", label}, {"parameters", n}});
    j["modules"] = json::array();
    for (const auto& m : modules)
        j["modules"].push_back({{"model", m.model}, {"module", m.module}, {"max_rel_error", m.max_rel_error}, {"worst_param", m.worst_param}});
    j["params"] = json::array();
    for (const auto& p : params)
        j["params"].push_back({{"model", p.model}, {"param", p.param}, {"max_rel_error", p.max_rel_error},
                               {"analytic", p.analytic}, {"numeric", p.numeric}, {"zero_gradient", p.zero_gradient}});
    j["ops"] = json::array();
    for (const auto& o : ops) j["ops"].push_back({{"op", o.op}, {"max_rel_error", o.max_rel_error}});
    j["suspect_ops"] = json::array();
    for (const auto& o : suspect_ops) j["suspect_ops"].push_back({{"op", o.op}, {"max_rel_error", o.max_rel_error}});
    if (!note.empty()) j["note"] = note;
    return j;
}

std::string ModelGradcheckReport::table() const {
    std::ostringstream os;
    char buf[256];
    std::snprintf(buf, sizeof buf, "%-16s %-22s %-12s %s\n", "model", "module", "max_rel_err", "worst_param");
    os << buf;
    for (const auto& m : modules) {
        std::snprintf(buf, sizeof buf, "%-16s %-22s %-12.3e %s%s\n", m.model.c_str(), m.module.c_str(), m.max_rel_error,
                      m.worst_param.c_str(), m.max_rel_error < tolerance ? "" : "  FAIL");
        os << buf;
    }
    for (const auto& o : ops) {
        std::snprintf(buf, sizeof buf, "%-16s %-22s %-12.3e%s\n", "op", o.op.c_str(), o.max_rel_error,
                      o.max_rel_error < tolerance ? "" : "  FAIL");
        os << buf;
    }
    return os.str();
}

} // namespace csts::verify
