#include <cstdio>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "csts/csts.h"
#include "json.hpp"

using nlohmann::json;

namespace {

enum Exit { kOk = 0, kFailure = 1, kUsage = 2, kIo = 3 };

int exit_code(csts_status s) {
    switch (s) {
    case CSTS_OK: return kOk;
    case CSTS_ERR_ARGUMENT:
    case CSTS_ERR_CONFIG: return kUsage;
    case CSTS_ERR_IO:
    case CSTS_ERR_FORMAT:
    case CSTS_ERR_VALIDATION: return kIo;
    default: return kFailure;
    }
}

// Carries a C API failure out of a command body.
struct ApiFailure {
    csts_status status;
};

// A file the CLI itself could not read or write.
struct OutputFailure {
    std::string message;
};

void check(csts_status s) {
    if (s != CSTS_OK) throw ApiFailure{s};
}

struct OwnedString {
    char* p = nullptr;
    ~OwnedString() { csts_string_free(p); }
    json parse() const { return json::parse(p); }
};

template <class T, void (*Free)(T*)>
struct Handle {
    T* p = nullptr;
    ~Handle() { Free(p); }
};
using Config = Handle<csts_config, csts_config_free>;
using Dataset = Handle<csts_dataset, csts_dataset_free>;
using Model = Handle<csts_model, csts_model_free>;

struct Shared {
    std::string config, out, precision;
    std::optional<std::uint64_t> seed;
};

// Training settings exposed as flags; unset ones leave the config alone.
struct TrainFlags {
    std::optional<long> epochs, batch_size, eval_every, train_limit;
    std::optional<double> lr, weight_decay, alpha, anchor, gamma;
    std::string strategy, variant;
};

void add_shared(CLI::App* cmd, Shared& s) {
    cmd->add_option("--config", s.config, "JSON config file");
    cmd->add_option("--seed", s.seed, "random seed");
    cmd->add_option("--out", s.out, "output directory");
    cmd->add_option("--precision", s.precision, "arithmetic precision")->check(CLI::IsMember({"f32", "f64"}));
}

void add_train_flags(CLI::App* cmd, TrainFlags& f) {
    cmd->add_option("--epochs", f.epochs, "training epochs");
    cmd->add_option("--batch-size", f.batch_size, "clips per step");
    cmd->add_option("--lr", f.lr, "peak learning rate");
    cmd->add_option("--weight-decay", f.weight_decay, "AdamW weight decay");
    cmd->add_option("--alpha", f.alpha, "contrastive loss weight");
    cmd->add_option("--strategy", f.strategy, "fusion strategy");
    cmd->add_option("--variant", f.variant, "contrastive placement");
    cmd->add_option("--eval-every", f.eval_every, "steps between evaluations");
    cmd->add_option("--train-limit", f.train_limit, "use only the first k training clips");
    cmd->add_option("--anchor", f.anchor, "anchor time in seconds");
    cmd->add_option("--gamma", f.gamma, "binarisation threshold");
}

json overrides(const Shared& s, const TrainFlags* f) {
    json j = json::object();
    if (s.seed) j["seed"] = *s.seed;
    if (!s.precision.empty()) j["precision"] = s.precision;
    if (!f) return j;
    if (f->epochs) j["epochs"] = *f->epochs;
    if (f->batch_size) j["batch_size"] = *f->batch_size;
    if (f->eval_every) j["eval_every"] = *f->eval_every;
    if (f->train_limit) j["train_limit"] = *f->train_limit;
    if (f->lr) j["lr"] = *f->lr;
    if (f->weight_decay) j["weight_decay"] = *f->weight_decay;
    if (f->alpha) j["alpha"] = *f->alpha;
    if (f->anchor) j["anchor"] = *f->anchor;
    if (f->gamma) j["gamma"] = *f->gamma;
    if (!f->strategy.empty()) j["strategy"] = f->strategy;
    if (!f->variant.empty()) j["variant"] = f->variant;
    return j;
}

// Config file (or defaults), then flag overrides.
void build_config(Config& cfg, const Shared& s, const TrainFlags* f) {
    if (s.config.empty()) check(csts_config_new(&cfg.p));
    else check(csts_config_load(s.config.c_str(), &cfg.p));
    check(csts_config_merge_json(cfg.p, overrides(s, f).dump().c_str()));
}

void write_file(const std::string& dir, const std::string& name, const std::string& text) {
    const std::string path = dir + "/" + name;
    std::ofstream f(path);
    if (!f || !(f << text)) throw OutputFailure{"cannot write " + path};
}

json read_json(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw OutputFailure{"cannot read " + path};
    try {
        return json::parse(f);
    } catch (const json::exception& e) {
        throw OutputFailure{path + ": " + e.what()};
    }
}

void print_step(const char* text, void*) {
    const json j = json::parse(text);
    const long step = j.at("step").get<long>();
    if (step % 10 != 0) return;
    std::printf("step %5ld  epoch %3ld  lr %.3g  kld %.4f  cntr %.4f\n", step, j.at("epoch").get<long>(),
                j.at("lr").get<double>(), j.at("kld").get<double>(), j.at("cntr").get<double>());
    std::fflush(stdout);
}

void print_cell(const char* text, void*) {
    const json j = json::parse(text);
    if (j.at("ok").get<bool>())
        std::printf("%-28s f1 %.4f\n", j.at("name").get<std::string>().c_str(), j.at("f1").is_null() ? 0.0 : j.at("f1").get<double>());
    else
        std::printf("%-28s FAILED %s\n", j.at("name").get<std::string>().c_str(), j.at("error").get<std::string>().c_str());
    std::fflush(stdout);
}

int cmd_train(const Shared& s, const TrainFlags& f, const std::string& data, unsigned threads) {
    Config cfg;
    build_config(cfg, s, &f);
    Dataset ds;
    check(csts_dataset_load(data.c_str(), cfg.p, threads, &ds.p));
    OwnedString report;
    check(csts_train(cfg.p, ds.p, s.out.empty() ? nullptr : s.out.c_str(), print_step, nullptr, &report.p));
    const json r = report.parse();
    std::printf("steps %ld  final kld %.4f\n", r.at("steps").get<long>(), r.at("final_kld").get<double>());
    if (!r.at("eval").is_null()) {
        const json& e = r.at("eval");
        std::printf("test F1 %.4f  recall %.4f  precision %.4f\n", e.at("f1").get<double>(), e.at("recall").get<double>(),
                    e.at("precision").get<double>());
    }
    if (!s.out.empty()) std::printf("checkpoint %s\n", r.at("checkpoint").get<std::string>().c_str());
    return kOk;
}

// Model plus its stored training config, with flag overrides applied.
void load_model_config(Model& m, Config& cfg, const std::string& checkpoint, const Shared& s, const TrainFlags* f) {
    check(csts_model_load(checkpoint.c_str(), &m.p));
    OwnedString stored;
    check(csts_model_config_json(m.p, &stored.p));
    json train = stored.parse().at("train");
    if (!s.config.empty()) {
        // Only the keys the file names override the stored settings; the
        // architecture always comes from the checkpoint.
        json patch = read_json(s.config);
        patch.erase("model");
        patch.erase("strategy");
        patch.erase("variant");
        train.merge_patch(patch);
    }
    check(csts_config_from_json(train.dump().c_str(), &cfg.p));
    check(csts_config_merge_json(cfg.p, overrides(s, f).dump().c_str()));
}

int cmd_eval(const Shared& s, const std::string& checkpoint, const std::string& data, std::optional<double> gamma,
             unsigned threads) {
    Model m;
    Config cfg;
    TrainFlags f;
    f.gamma = gamma;
    load_model_config(m, cfg, checkpoint, s, &f);
    Dataset ds;
    check(csts_dataset_load(data.c_str(), cfg.p, threads, &ds.p));
    OwnedString report;
    check(csts_evaluate(m.p, ds.p, cfg.p, s.out.empty() ? nullptr : s.out.c_str(), &report.p));
    std::cout << report.parse().at("table").get<std::string>();
    return kOk;
}

int cmd_synth(const Shared& s, json options) {
    if (!s.config.empty()) {
        json file = read_json(s.config);
        file.merge_patch(options);
        options = file;
    }
    if (s.seed) options["seed"] = *s.seed;
    OwnedString summary;
    check(csts_synth(options.dump().c_str(), s.out.c_str(), &summary.p));
    const json j = summary.parse();
    std::printf("%zu clips, manifest %s\n", j.at("clips").size(), j.at("manifest").get<std::string>().c_str());
    return kOk;
}

int cmd_gradcheck(const Shared& s, double tolerance, const std::string& sabotage) {
    Config cfg;
    build_config(cfg, s, nullptr);
    if (!sabotage.empty()) check(csts_set_gradient_sabotage(sabotage.c_str()));
    OwnedString report;
    int passed = 0;
    check(csts_gradcheck(cfg.p, tolerance, &report.p, &passed));
    json j = report.parse();
    std::cout << j.at("table").get<std::string>();
    if (!s.out.empty()) {
        j.erase("table");
        write_file(s.out, "gradcheck.json", j.dump(2) + "\n");
    }
    if (passed) {
        std::printf("gradcheck passed (tolerance %g)\n", tolerance);
        return kOk;
    }
    std::printf("gradcheck FAILED (tolerance %g): %s\n", tolerance, j.value("offending", std::string("?")).c_str());
    return kFailure;
}

int cmd_ablate(const Shared& s, const TrainFlags& f, const std::string& data, std::string grid,
               const std::vector<std::uint64_t>& seeds, unsigned threads) {
    if (grid.size() > 5 && grid.ends_with(".json")) {
        std::ifstream g(grid);
        if (!g) throw OutputFailure{"cannot read grid file " + grid};
        std::stringstream ss;
        ss << g.rdbuf();
        grid = ss.str();
    }
    Config cfg;
    build_config(cfg, s, &f);
    Dataset ds;
    check(csts_dataset_load(data.c_str(), cfg.p, threads, &ds.p));
    OwnedString result;
    check(csts_ablate(cfg.p, ds.p, grid.c_str(), seeds.empty() ? nullptr : seeds.data(), seeds.size(), threads,
                      s.out.empty() ? nullptr : s.out.c_str(), print_cell, nullptr, &result.p));
    const json j = result.parse();
    std::cout << j.at("table").get<std::string>();
    for (const auto& cell : j.at("cells"))
        if (cell.value("status", "") != "ok") return kFailure;
    return kOk;
}

int cmd_images(const Shared& s, bool attention, const std::string& checkpoint, const std::string& data,
               const std::string& clip) {
    Model m;
    check(csts_model_load(checkpoint.c_str(), &m.p));
    OwnedString files;
    if (attention) check(csts_dump_attention(m.p, data.c_str(), clip.c_str(), s.out.c_str(), &files.p));
    else check(csts_render_prediction(m.p, data.c_str(), clip.c_str(), s.out.c_str(), &files.p));
    for (const auto& f : files.parse()) std::printf("%s\n", f.get<std::string>().c_str());
    return kOk;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Audio-visual gaze anticipation: training, evaluation and diagnostics", "csts"};
    app.require_subcommand(1);
    app.set_version_flag("--version", csts_version());

    Shared shared;
    TrainFlags tflags;
    std::string data, checkpoint, clip, grid = "trend", sabotage;
    unsigned threads = 0;
    double tolerance = 1e-4;
    std::optional<double> eval_gamma;
    std::vector<std::uint64_t> seeds;

    auto* train = app.add_subcommand("train", "train a model and evaluate it on the test split");
    add_shared(train, shared);
    add_train_flags(train, tflags);
    train->add_option("--data", data, "manifest.json")->required();
    train->add_option("--threads", threads, "clip loading threads (default CSTS_THREADS)");

    auto* evalc = app.add_subcommand("eval", "evaluate a checkpoint on the test split");
    add_shared(evalc, shared);
    evalc->add_option("--checkpoint", checkpoint, "model.ckpt")->required();
    evalc->add_option("--data", data, "manifest.json")->required();
    evalc->add_option("--gamma", eval_gamma, "binarisation threshold (default: the checkpoint's)");
    evalc->add_option("--threads", threads, "clip loading threads (default CSTS_THREADS)");

    json synth_opts = json::object();
    std::optional<long> clips, width, height, distractors;
    std::optional<double> cue, fps, duration, missing, test_fraction;
    bool packed = false;
    auto* synth = app.add_subcommand("synth", "generate a synthetic corpus with a planted audio cue");
    add_shared(synth, shared);
    synth->get_option("--out")->required();
    synth->add_option("--clips", clips, "number of clips");
    synth->add_option("--cue-validity", cue, "probability that the tone names the true side");
    synth->add_option("--fps", fps, "frame rate");
    synth->add_option("--duration", duration, "clip length in seconds");
    synth->add_option("--width", width, "frame width");
    synth->add_option("--height", height, "frame height");
    synth->add_option("--distractors", distractors, "distractor blobs per clip");
    synth->add_option("--missing-gaze", missing, "per-frame probability of a dropped gaze label");
    synth->add_option("--test-fraction", test_fraction, "fraction of clips in the test split");
    synth->add_flag("--packed", packed, "store frames as one packed file per clip");

    auto* grad = app.add_subcommand("gradcheck", "compare backpropagated gradients with finite differences");
    add_shared(grad, shared);
    grad->add_option("--tolerance", tolerance, "maximum relative error")->check(CLI::NonNegativeNumber);
    grad->add_option("--sabotage", sabotage, "test hook: negate the backward pass of an op")->group("");

    auto* abl = app.add_subcommand("ablate", "train and evaluate a grid of configurations");
    add_shared(abl, shared);
    add_train_flags(abl, tflags);
    abl->add_option("--data", data, "manifest.json")->required();
    abl->add_option("--grid", grid, "table1, table2, contrastive, trend, single, or a JSON grid (file or text)");
    abl->add_option("--seeds", seeds, "seeds to repeat every cell with")->delimiter(',');
    abl->add_option("--threads", threads, "cells trained in parallel (default CSTS_THREADS)");

    auto* attn = app.add_subcommand("dump-attn", "write spatial audio-visual correlation maps of one clip");
    auto* pred = app.add_subcommand("render-pred", "write predicted heatmaps of one clip's future frames");
    for (auto* cmd : {attn, pred}) {
        add_shared(cmd, shared);
        cmd->get_option("--out")->required();
        cmd->add_option("--checkpoint", checkpoint, "model.ckpt")->required();
        cmd->add_option("--data", data, "manifest.json holding the clip")->required();
        cmd->add_option("--clip", clip, "clip id")->required();
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kUsage;
    }

    try {
        if (*train) return cmd_train(shared, tflags, data, threads);
        if (*evalc) return cmd_eval(shared, checkpoint, data, eval_gamma, threads);
        if (*synth) {
            if (clips) synth_opts["clips"] = *clips;
            if (cue) synth_opts["cue_validity"] = *cue;
            if (fps) synth_opts["fps"] = *fps;
            if (duration) synth_opts["duration"] = *duration;
            if (width) synth_opts["width"] = *width;
            if (height) synth_opts["height"] = *height;
            if (distractors) synth_opts["distractors"] = *distractors;
            if (missing) synth_opts["missing_gaze"] = *missing;
            if (test_fraction) synth_opts["test_fraction"] = *test_fraction;
            if (packed) synth_opts["packed"] = true;
            return cmd_synth(shared, synth_opts);
        }
        if (*grad) return cmd_gradcheck(shared, tolerance, sabotage);
        if (*abl) return cmd_ablate(shared, tflags, data, grid, seeds, threads);
        if (*attn) return cmd_images(shared, true, checkpoint, data, clip);
        if (*pred) return cmd_images(shared, false, checkpoint, data, clip);
    } catch (const ApiFailure& f) {
        const char* msg = csts_last_error();
        std::fprintf(stderr, "error: %s: %s\n", csts_status_name(f.status), msg);
        return exit_code(f.status);
    } catch (const OutputFailure& f) {
        std::fprintf(stderr, "error: %s\n", f.message.c_str());
        return kIo;
    } catch (const json::exception& e) {
        std::fprintf(stderr, "error: malformed result: %s\n", e.what());
        return kFailure;
    }
    return kUsage;
}
