#include "train/ablate.hpp"

#include <atomic>
#include <filesystem>
#include <fstream>
#include <algorithm>
#include <cctype>
#include <mutex>
#include <sstream>
#include <thread>

namespace csts::train {

namespace fs = std::filesystem;
using nlohmann::json;
using model::ContrastiveVariant;
using model::FusionStrategy;

namespace {

struct CellSpec {
    std::string group;
    FusionStrategy strategy;
    ContrastiveVariant variant;
    bool contrastive;
};

std::vector<CellSpec> grid_specs(const std::string& name) {
    const auto post = ContrastiveVariant::post;
    const CellSpec vision{"Vision only", FusionStrategy::vision_only, post, false};
    const CellSpec sts{"STS", FusionStrategy::sts, post, false};
    const CellSpec csts{"CSTS", FusionStrategy::sts, post, true};
    const std::vector<CellSpec> joint = {{"Linear", FusionStrategy::linear, post, false},
                                         {"Bilinear", FusionStrategy::bilinear, post, false},
                                         {"Concat", FusionStrategy::concat, post, false},
                                         {"VanillaSA", FusionStrategy::vanilla_sa, post, false}};
    if (name == "table1")
        return {vision, {"S-fusion", FusionStrategy::s_fusion, post, false}, {"T-fusion", FusionStrategy::t_fusion, post, false}, sts, csts};
    if (name == "table2") {
        auto g = joint;
        g.push_back(sts);
        return g;
    }
    if (name == "contrastive")
        return {{"STS + Vanilla Contr", FusionStrategy::sts, ContrastiveVariant::vanilla, true},
                {"STS + S Contr", FusionStrategy::sts, ContrastiveVariant::spatial, true},
                {"STS + T Contr", FusionStrategy::sts, ContrastiveVariant::temporal, true},
                {"STS + Cross Contr", FusionStrategy::sts, ContrastiveVariant::cross, true},
                {"STS + Post Contr", FusionStrategy::sts, ContrastiveVariant::post, true}};
    if (name == "trend") {
        std::vector<CellSpec> g = {csts, sts, vision};
        g.insert(g.end(), joint.begin(), joint.end());
        return g;
    }
    throw ConfigError("unknown ablation grid '" + name + "'");
}

std::string cell_name(const std::string& group, std::uint64_t seed, std::size_t n_seeds) {
    return n_seeds > 1 || seed != 0 ? group + "/seed" + std::to_string(seed) : group;
}

std::string dir_name(const std::string& name) {
    std::string s;
    for (char c : name) s += std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' ? c : '_';
    return s;
}

std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string q = "\"";
    for (char c : s) q += c == '"' ? std::string("\"\"") : std::string(1, c);
    return q + "\"";
}

} // namespace

std::vector<std::string> grid_names() { return {"table1", "table2", "contrastive", "trend", "single"}; }

std::vector<AblationCell> ablation_grid(const std::string& name, const TrainConfig& base, const std::vector<std::uint64_t>& seeds_in) {
    const std::vector<std::uint64_t> seeds = seeds_in.empty() ? std::vector<std::uint64_t>{base.seed} : seeds_in;
    std::vector<AblationCell> out;
    if (name == "single") {
        for (auto seed : seeds) {
            TrainConfig c = base;
            c.seed = seed;
            out.push_back({cell_name(model::strategy_name(c.model.strategy), seed, seeds.size()), model::strategy_name(c.model.strategy), c});
        }
        return out;
    }
    const double alpha = base.alpha > 0.0 ? base.alpha : 0.05;
    for (const auto& spec : grid_specs(name))
        for (auto seed : seeds) {
            TrainConfig c = base;
            c.seed = seed;
            c.model.strategy = spec.strategy;
            c.model.variant = spec.variant;
            c.alpha = spec.contrastive ? alpha : 0.0;
            out.push_back({cell_name(spec.group, seed, seeds.size()), spec.group, c});
        }
    return out;
}

std::vector<AblationCell> ablation_grid_from_json(const json& j, const TrainConfig& base, const std::vector<std::uint64_t>& seeds_in) {
    const json* cells = &j;
    std::vector<std::uint64_t> seeds = seeds_in;
    if (j.is_object()) {
        if (!j.contains("cells")) throw ConfigError("ablation grid object needs a 'cells' array");
        cells = &j.at("cells");
        if (seeds.empty() && j.contains("seeds")) seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    }
    if (!cells->is_array() || cells->empty()) throw ConfigError("ablation grid needs a non-empty array of cells");
    if (seeds.empty()) seeds = {base.seed};
    std::vector<AblationCell> out;
    for (const auto& cell : *cells) {
        if (!cell.is_object() || !cell.contains("name") || !cell.at("name").is_string())
            throw ConfigError("every ablation cell needs a string 'name'");
        const std::string group = cell.at("name").get<std::string>();
        json merged = to_json(base);
        for (const auto& [k, v] : cell.items()) {
            if (k == "name") continue;
            if (k == "model") merged["model"].merge_patch(v);
            else merged[k] = v;
        }
        for (auto seed : seeds) {
            merged["seed"] = seed;
            TrainConfig c;
            try {
                c = train_config_from_json(merged);
            } catch (const ConfigError& e) {
                throw ConfigError("ablation cell '" + group + "': " + e.what());
            }
            out.push_back({cell_name(group, seed, seeds.size()), group, c});
        }
    }
    return out;
}

AblationResult run_ablation(const std::vector<AblationCell>& cells, const Dataset& data, const AblationOptions& opts) {
    AblationResult res;
    res.rows.resize(cells.size());
    std::atomic<std::size_t> next{0};
    std::mutex report_mutex;
    auto worker = [&]() {
        for (std::size_t i = next++; i < cells.size(); i = next++) {
            const auto& cell = cells[i];
            AblationRow& row = res.rows[i];
            row.name = cell.name;
            row.group = cell.group;
            row.config = to_json(cell.config);
            try {
                Trainer trainer(cell.config);
                TrainOptions to;
                if (!opts.out_dir.empty()) to.out_dir = (fs::path(opts.out_dir) / "cells" / dir_name(cell.name)).string();
                TrainResult tr = trainer.fit(data, to);
                row.steps = static_cast<Index>(tr.steps.size());
                row.final_kld = tr.steps.empty() ? 0.0 : tr.steps.back().kld;
                if (!tr.final_report) throw EvaluationError("no test clips to evaluate");
                row.report = std::move(tr.final_report);
                row.ok = true;
            } catch (const std::exception& e) {
                row.ok = false;
                row.error = e.what();
            }
            if (opts.on_cell) {
                std::lock_guard<std::mutex> lock(report_mutex);
                opts.on_cell(row);
            }
        }
    };
    const unsigned n = std::max(1u, std::min<unsigned>(opts.threads, static_cast<unsigned>(cells.size())));
    std::vector<std::thread> pool;
    for (unsigned t = 1; t < n; ++t) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();

    if (!opts.out_dir.empty()) {
        std::error_code ec;
        fs::create_directories(opts.out_dir, ec);
        std::ofstream js(fs::path(opts.out_dir) / "ablation.json");
        std::ofstream cs(fs::path(opts.out_dir) / "ablation.csv");
        if (!js || !cs) throw IoError("cannot write ablation tables in " + opts.out_dir);
        js << res.to_json().dump(2) << "\n";
        cs << res.csv();
    }
    return res;
}

std::vector<GroupSummary> AblationResult::summary() const {
    std::vector<GroupSummary> out;
    std::vector<std::vector<double>> f1s;
    for (const auto& r : rows) {
        auto it = std::find_if(out.begin(), out.end(), [&](const GroupSummary& g) { return g.group == r.group; });
        if (it == out.end()) {
            out.push_back({r.group});
            f1s.emplace_back();
            it = out.end() - 1;
        }
        ++it->runs;
        if (r.ok) f1s[static_cast<std::size_t>(it - out.begin())].push_back(r.report->f1);
        else ++it->failures;
    }
    for (std::size_t g = 0; g < out.size(); ++g) {
        const auto& v = f1s[g];
        if (v.empty()) continue;
        double s = 0.0;
        for (double x : v) s += x;
        out[g].mean_f1 = s / static_cast<double>(v.size());
        out[g].min_f1 = *std::min_element(v.begin(), v.end());
        out[g].max_f1 = *std::max_element(v.begin(), v.end());
    }
    return out;
}

std::optional<GroupSummary> AblationResult::group(const std::string& name) const {
    for (const auto& g : summary())
        if (g.group == name) return g;
    return std::nullopt;
}

json AblationResult::to_json() const {
    json j;
    j["cells"] = json::array();
    for (const auto& r : rows) {
        json c = {{"name", r.name}, {"group", r.group}, {"status", r.ok ? "ok" : "failed"}, {"config", r.config}};
        if (r.ok) {
            c["f1"] = r.report->f1;
            c["precision"] = r.report->precision;
            c["recall"] = r.report->recall;
            c["steps"] = r.steps;
            c["final_kld"] = r.final_kld;
            c["report"] = r.report->to_json();
        } else {
            c["error"] = r.error;
        }
        j["cells"].push_back(std::move(c));
    }
    j["summary"] = json::array();
    for (const auto& g : summary())
        j["summary"].push_back({{"group", g.group}, {"runs", g.runs}, {"failures", g.failures},
                                {"mean_f1", g.mean_f1}, {"min_f1", g.min_f1}, {"max_f1", g.max_f1}});
    return j;
}

std::string AblationResult::csv() const {
    std::ostringstream os;
    os << "name,group,strategy,variant,alpha,seed,epochs,batch_size,lr,status,f1,precision,recall,final_kld,error\n";
    char buf[64];
    auto num = [&](double v) {
        std::snprintf(buf, sizeof buf, "%.6f", v);
        return std::string(buf);
    };
    for (const auto& r : rows) {
        const json& m = r.config.at("model");
        os << csv_field(r.name) << "," << csv_field(r.group) << "," << m.at("strategy").get<std::string>() << ","
           << m.at("variant").get<std::string>() << "," << r.config.at("alpha").get<double>() << ","
           << r.config.at("seed").get<std::uint64_t>() << "," << r.config.at("epochs").get<Index>() << ","
           << r.config.at("batch_size").get<Index>() << "," << r.config.at("lr").get<double>() << ","
           << (r.ok ? "ok" : "failed") << ",";
        if (r.ok) os << num(r.report->f1) << "," << num(r.report->precision) << "," << num(r.report->recall) << "," << num(r.final_kld) << ",";
        else os << ",,,,";
        os << csv_field(r.error) << "\n";
    }
    return os.str();
}

std::string AblationResult::table() const {
    std::ostringstream os;
    char buf[256];
    std::snprintf(buf, sizeof buf, "%-22s %5s %9s %9s %9s\n", "group", "runs", "mean_f1", "min_f1", "max_f1");
    os << buf;
    for (const auto& g : summary()) {
        std::snprintf(buf, sizeof buf, "%-22s %5ld %9.4f %9.4f %9.4f%s\n", g.group.c_str(), static_cast<long>(g.runs), g.mean_f1,
                      g.min_f1, g.max_f1, g.failures ? "  (failures)" : "");
        os << buf;
    }
    for (const auto& r : rows)
        if (!r.ok) os << "failed " << r.name << ": " << r.error << "\n";
    return os.str();
}

} // namespace csts::train
