#include "train/config.hpp"

#include <cstdlib>
#include <fstream>
#include <set>
#include <thread>

namespace csts::train {

using nlohmann::json;

TrainConfig TrainConfig::full() {
    TrainConfig c;
    c.model = model::ModelConfig::full();
    return c;
}

model::ModelConfig TrainConfig::resolved_model() const {
    model::ModelConfig m = model;
    m.contrastive = model::uses_audio(m.strategy) && alpha > 0.0;
    return m;
}

void TrainConfig::validate() const {
    resolved_model().validate();
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (!(lr > 0.0)) throw ConfigError("lr must be positive");
    if (weight_decay < 0.0) throw ConfigError("weight_decay must be >= 0");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("betas must lie in [0, 1)");
    if (!(eps > 0.0)) throw ConfigError("eps must be positive");
    if (alpha < 0.0) throw ConfigError("alpha must be >= 0");
    if (!(temperature > 0.0)) throw ConfigError("temperature must be positive");
    if (eval_every < 0) throw ConfigError("eval_every must be >= 0");
    if (!(gamma > 0.0 && gamma <= 1.0)) throw ConfigError("gamma must lie in (0, 1]");
    if (!(observation_seconds > 0.0 && anticipation_seconds > 0.0)) throw ConfigError("window lengths must be positive");
    if (train_limit < 0) throw ConfigError("train_limit must be >= 0");
}

json to_json(const TrainConfig& c) {
    return json{{"model", model::to_json(c.model)},
                {"strategy", model::strategy_name(c.model.strategy)},
                {"variant", model::variant_name(c.model.variant)},
                {"epochs", c.epochs},
                {"batch_size", c.batch_size},
                {"lr", c.lr},
                {"weight_decay", c.weight_decay},
                {"beta1", c.beta1},
                {"beta2", c.beta2},
                {"eps", c.eps},
                {"alpha", c.alpha},
                {"temperature", c.temperature},
                {"seed", c.seed},
                {"precision", precision_name(c.precision)},
                {"eval_every", c.eval_every},
                {"clip_grad", c.clip_grad},
                {"anchor", c.anchor},
                {"observation_seconds", c.observation_seconds},
                {"anticipation_seconds", c.anticipation_seconds},
                {"gamma", c.gamma},
                {"train_limit", c.train_limit}};
}

TrainConfig train_config_from_json(const json& j) {
    if (!j.is_object()) throw ConfigError("train config must be a JSON object");
    static const std::set<std::string> known = {"model", "strategy", "variant", "epochs", "batch_size", "lr", "weight_decay",
                                                "beta1", "beta2", "eps", "alpha", "temperature", "seed", "precision",
                                                "eval_every", "clip_grad", "anchor", "observation_seconds",
                                                "anticipation_seconds", "gamma", "train_limit"};
    for (const auto& [k, v] : j.items())
        if (!known.count(k)) throw ConfigError("unknown train config key '" + k + "'");
    TrainConfig c;
    try {
        if (j.contains("model")) c.model = model::model_config_from_json(j.at("model"));
        if (j.contains("strategy")) c.model.strategy = model::parse_strategy(j.at("strategy").get<std::string>());
        if (j.contains("variant")) c.model.variant = model::parse_variant(j.at("variant").get<std::string>());
        auto take = [&](const char* key, auto& field) {
            if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
        };
        take("epochs", c.epochs);
        take("batch_size", c.batch_size);
        take("lr", c.lr);
        take("weight_decay", c.weight_decay);
        take("beta1", c.beta1);
        take("beta2", c.beta2);
        take("eps", c.eps);
        take("alpha", c.alpha);
        take("temperature", c.temperature);
        take("seed", c.seed);
        if (j.contains("precision")) c.precision = parse_precision(j.at("precision").get<std::string>());
        take("eval_every", c.eval_every);
        take("clip_grad", c.clip_grad);
        take("anchor", c.anchor);
        take("observation_seconds", c.observation_seconds);
        take("anticipation_seconds", c.anticipation_seconds);
        take("gamma", c.gamma);
        take("train_limit", c.train_limit);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("train config: ") + e.what());
    }
    return c;
}

TrainConfig load_train_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open config " + path);
    json j;
    try {
        is >> j;
    } catch (const json::exception& e) {
        throw FormatError(path + ": " + e.what());
    }
    return train_config_from_json(j);
}

unsigned worker_threads() {
    if (const char* env = std::getenv("CSTS_THREADS")) {
        char* end = nullptr;
        const long n = std::strtol(env, &end, 10);
        if (end != env && *end == '\0' && n >= 1) return static_cast<unsigned>(n);
        throw ConfigError(std::string("CSTS_THREADS must be a positive integer, got '") + env + "'");
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

} // namespace csts::train
