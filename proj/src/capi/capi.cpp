#include "csts/csts.h"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <new>
#include <string>

#include "common/errors.hpp"
#include "data/checkpoint.hpp"
#include "data/dataset.hpp"
#include "data/image.hpp"
#include "data/synth.hpp"
#include "json.hpp"
#include "train/ablate.hpp"
#include "train/trainer.hpp"
#include "verify/model_gradcheck.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace csts;

struct csts_config {
    train::TrainConfig cfg;
};

struct csts_dataset {
    train::Dataset data;
};

struct csts_model {
    std::unique_ptr<model::CstsModel> model;
    train::TrainConfig train;
    json stored;
};

namespace {

thread_local std::string last_error;

csts_status status_of(ErrorKind kind) {
    switch (kind) {
    case ErrorKind::dimension: return CSTS_ERR_DIMENSION;
    case ErrorKind::contract: return CSTS_ERR_CONTRACT;
    case ErrorKind::config: return CSTS_ERR_CONFIG;
    case ErrorKind::range: return CSTS_ERR_RANGE;
    case ErrorKind::format: return CSTS_ERR_FORMAT;
    case ErrorKind::io: return CSTS_ERR_IO;
    case ErrorKind::numeric: return CSTS_ERR_NUMERIC;
    case ErrorKind::state: return CSTS_ERR_STATE;
    case ErrorKind::evaluation: return CSTS_ERR_EVALUATION;
    case ErrorKind::validation: return CSTS_ERR_VALIDATION;
    case ErrorKind::verification: return CSTS_ERR_VERIFICATION;
    }
    return CSTS_ERR_INTERNAL;
}

struct ArgumentError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

csts_status fail(csts_status s, const std::string& msg) {
    last_error = msg;
    return s;
}

template <class F>
csts_status guarded(F&& f) {
    try {
        f();
        return CSTS_OK;
    } catch (const ArgumentError& e) {
        return fail(CSTS_ERR_ARGUMENT, e.what());
    } catch (const Error& e) {
        return fail(status_of(e.kind()), e.what());
    } catch (const json::parse_error& e) {
        return fail(CSTS_ERR_FORMAT, e.what());
    } catch (const json::exception& e) {
        return fail(CSTS_ERR_CONFIG, e.what());
    } catch (const std::bad_alloc&) {
        return fail(CSTS_ERR_INTERNAL, "out of memory");
    } catch (const std::exception& e) {
        return fail(CSTS_ERR_INTERNAL, e.what());
    } catch (...) {
        return fail(CSTS_ERR_INTERNAL, "unknown exception");
    }
}

template <class T>
void need(const T* p, const char* what) {
    if (!p) throw ArgumentError(std::string(what) + " is null");
}

char* copy_string(const std::string& s) {
    char* out = static_cast<char*>(std::malloc(s.size() + 1));
    if (!out) throw std::bad_alloc();
    std::memcpy(out, s.data(), s.size() + 1);
    return out;
}

void emit(char** out, const json& j) {
    if (out) *out = copy_string(j.dump(2));
}

unsigned thread_count(unsigned requested) {
    return requested > 0 ? requested : train::worker_threads();
}

void ensure_dir(const std::string& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec || !fs::is_directory(dir)) throw IoError("cannot create directory " + dir);
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream f(path);
    if (!f) throw IoError("cannot write " + path.string());
    f << text;
    if (!f) throw IoError("write failed: " + path.string());
}

data::SynthOptions synth_options(const json& j) {
    data::SynthOptions o;
    if (!j.is_object()) throw ConfigError("synth options must be a JSON object");
    for (const auto& [key, v] : j.items()) {
        if (key == "clips") o.clips = v.get<Index>();
        else if (key == "seed") o.seed = v.get<std::uint64_t>();
        else if (key == "fps") o.fps = v.get<double>();
        else if (key == "duration") o.duration = v.get<double>();
        else if (key == "anchor") o.anchor = v.get<double>();
        else if (key == "width") o.width = v.get<Index>();
        else if (key == "height") o.height = v.get<Index>();
        else if (key == "sample_rate") o.sample_rate = v.get<int>();
        else if (key == "cue_validity") o.cue_validity = v.get<double>();
        else if (key == "distractors") o.distractors = v.get<Index>();
        else if (key == "test_fraction") o.test_fraction = v.get<double>();
        else if (key == "missing_gaze") o.missing_gaze = v.get<double>();
        else if (key == "left_tone_hz") o.left_tone_hz = v.get<double>();
        else if (key == "right_tone_hz") o.right_tone_hz = v.get<double>();
        else if (key == "packed") o.packed = v.get<bool>();
        else throw ConfigError("unknown synth option '" + key + "'");
    }
    return o;
}

std::string file_stem(const std::string& clip_id) {
    std::string s = clip_id;
    for (char& c : s)
        if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.')) c = '_';
    return "clip_" + s;
}

struct LoadedClip {
    data::ClipManifest manifest;
    data::ClipSample sample;
};

LoadedClip load_one(const csts_model* m, const char* manifest, const char* clip_id) {
    need(manifest, "manifest");
    need(clip_id, "clip id");
    for (auto& c : data::load_manifest(manifest)) {
        if (c.id != clip_id) continue;
        LoadedClip out{c, data::load_clip(c, m->train.anchor, train::sampling_for(m->train))};
        return out;
    }
    throw ValidationError(std::string("clip '") + clip_id + "' is not in " + manifest);
}

// Frame k of a [T, H, W, 3] tensor as an 8-bit image.
data::Image frame_image(const Tensor& frames, Index k) {
    const Index h = frames.shape()[1], w = frames.shape()[2];
    data::Image img{w, h, 3, std::vector<std::uint8_t>(static_cast<std::size_t>(h * w * 3))};
    const auto src = frames.data().subspan(static_cast<std::size_t>(k * h * w * 3), static_cast<std::size_t>(h * w * 3));
    for (std::size_t i = 0; i < src.size(); ++i)
        img.pixels[i] = static_cast<std::uint8_t>(std::lround(std::clamp(src[i], 0.0, 1.0) * 255.0));
    return img;
}

// Min-max scaled copy of one [h, w] slice; a constant slice maps to 0.5.
Tensor normalised_slice(const Tensor& t, Index k) {
    const Index h = t.shape()[1], w = t.shape()[2];
    const auto src = t.data().subspan(static_cast<std::size_t>(k * h * w), static_cast<std::size_t>(h * w));
    const auto [lo, hi] = std::minmax_element(src.begin(), src.end());
    std::vector<double> v(src.begin(), src.end());
    const double range = *hi - *lo;
    for (double& x : v) x = range > 1e-12 * std::max(1.0, std::abs(*hi)) ? (x - *lo) / range : 0.5;
    return Tensor::from_data({h, w}, std::move(v));
}

// Heat colour ramp from black through red and yellow to white.
void heat_colour(double v, double rgb[3]) {
    rgb[0] = std::clamp(3.0 * v, 0.0, 1.0);
    rgb[1] = std::clamp(3.0 * v - 1.0, 0.0, 1.0);
    rgb[2] = std::clamp(3.0 * v - 2.0, 0.0, 1.0);
}

// Blends heat colours over a frame; opacity grows with the map value.
data::Image overlay(const data::Image& frame, const data::Image& gray, double max_opacity) {
    data::Image out = frame;
    for (Index i = 0; i < frame.width * frame.height; ++i) {
        const double v = gray.pixels[static_cast<std::size_t>(i)] / 255.0;
        double rgb[3];
        heat_colour(v, rgb);
        const double a = max_opacity * v;
        for (Index c = 0; c < 3; ++c) {
            auto& p = out.pixels[static_cast<std::size_t>(i * 3 + c)];
            p = static_cast<std::uint8_t>(std::lround((1.0 - a) * p + a * 255.0 * rgb[c]));
        }
    }
    return out;
}

void draw_dot(data::Image& img, Index cx, Index cy, Index radius) {
    for (Index y = cy - radius - 1; y <= cy + radius + 1; ++y)
        for (Index x = cx - radius - 1; x <= cx + radius + 1; ++x) {
            if (x < 0 || y < 0 || x >= img.width || y >= img.height) continue;
            const Index d2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
            if (d2 > (radius + 1) * (radius + 1)) continue;
            const bool inner = d2 <= radius * radius;
            const std::uint8_t rgb[3] = {0, static_cast<std::uint8_t>(inner ? 255 : 0), 0};
            for (Index c = 0; c < 3; ++c) img.pixels[static_cast<std::size_t>((y * img.width + x) * 3 + c)] = rgb[c];
        }
}

} // namespace

extern "C" {

const char* csts_version(void) { return "1.0.0"; }

const char* csts_status_name(csts_status status) {
    switch (status) {
    case CSTS_OK: return "ok";
    case CSTS_ERR_ARGUMENT: return "invalid argument";
    case CSTS_ERR_DIMENSION: return "dimension error";
    case CSTS_ERR_CONTRACT: return "contract error";
    case CSTS_ERR_CONFIG: return "config error";
    case CSTS_ERR_RANGE: return "range error";
    case CSTS_ERR_FORMAT: return "format error";
    case CSTS_ERR_IO: return "I/O error";
    case CSTS_ERR_NUMERIC: return "numeric error";
    case CSTS_ERR_STATE: return "state error";
    case CSTS_ERR_EVALUATION: return "evaluation error";
    case CSTS_ERR_VALIDATION: return "validation error";
    case CSTS_ERR_VERIFICATION: return "verification error";
    case CSTS_ERR_INTERNAL: return "internal error";
    }
    return "unknown status";
}

const char* csts_last_error(void) { return last_error.c_str(); }

void csts_string_free(char* s) { std::free(s); }

csts_status csts_config_new(csts_config** out) {
    return guarded([&] {
        need(out, "output");
        *out = new csts_config{};
    });
}

csts_status csts_config_load(const char* path, csts_config** out) {
    return guarded([&] {
        need(path, "path");
        need(out, "output");
        auto cfg = train::load_train_config(path);
        *out = new csts_config{std::move(cfg)};
    });
}

csts_status csts_config_from_json(const char* text, csts_config** out) {
    return guarded([&] {
        need(text, "json");
        need(out, "output");
        auto cfg = train::train_config_from_json(json::parse(text));
        *out = new csts_config{std::move(cfg)};
    });
}

csts_status csts_config_merge_json(csts_config* cfg, const char* text) {
    return guarded([&] {
        need(cfg, "config");
        need(text, "json");
        const json overrides = json::parse(text);
        if (!overrides.is_object()) throw ConfigError("config overrides must be a JSON object");
        json merged = train::to_json(cfg->cfg);
        merged.merge_patch(overrides);
        // The serialised config repeats strategy and variant at the top level,
        // where they win; keep whichever copy the overrides touched.
        for (const char* key : {"strategy", "variant"}) {
            if (overrides.contains(key)) merged["model"].erase(key);
            else if (overrides.contains("model") && overrides["model"].contains(key)) merged.erase(key);
        }
        cfg->cfg = train::train_config_from_json(merged);
    });
}

csts_status csts_config_to_json(const csts_config* cfg, char** out) {
    return guarded([&] {
        need(cfg, "config");
        need(out, "output");
        emit(out, train::to_json(cfg->cfg));
    });
}

csts_status csts_config_parameter_count(const csts_config* cfg, size_t* out) {
    return guarded([&] {
        need(cfg, "config");
        need(out, "output");
        cfg->cfg.validate();
        model::CstsModel m(cfg->cfg.resolved_model(), cfg->cfg.seed);
        *out = static_cast<size_t>(m.params().count());
    });
}

void csts_config_free(csts_config* cfg) { delete cfg; }

csts_status csts_dataset_load(const char* manifest, const csts_config* cfg, unsigned threads, csts_dataset** out) {
    return guarded([&] {
        need(manifest, "manifest");
        need(cfg, "config");
        need(out, "output");
        auto data = train::load_dataset(manifest, cfg->cfg, thread_count(threads));
        *out = new csts_dataset{std::move(data)};
    });
}

csts_status csts_dataset_size(const csts_dataset* ds, size_t* n_train, size_t* n_test) {
    return guarded([&] {
        need(ds, "dataset");
        if (n_train) *n_train = ds->data.train.size();
        if (n_test) *n_test = ds->data.test.size();
    });
}

void csts_dataset_free(csts_dataset* ds) { delete ds; }

csts_status csts_model_load(const char* checkpoint, csts_model** out) {
    return guarded([&] {
        need(checkpoint, "checkpoint");
        need(out, "output");
        const data::Checkpoint ck = data::load_checkpoint(checkpoint);
        if (!ck.config.contains("model")) throw FormatError(std::string(checkpoint) + ": checkpoint has no model config");
        auto h = std::make_unique<csts_model>();
        const model::ModelConfig mc = model::model_config_from_json(ck.config.at("model"));
        h->model = std::make_unique<model::CstsModel>(mc, 0);
        data::restore(h->model->params(), ck);
        if (ck.config.contains("train")) h->train = train::train_config_from_json(ck.config.at("train"));
        h->train.model = mc;
        h->stored = ck.config;
        *out = h.release();
    });
}

csts_status csts_model_parameter_count(const csts_model* m, size_t* out) {
    return guarded([&] {
        need(m, "model");
        need(out, "output");
        *out = static_cast<size_t>(m->model->params().count());
    });
}

csts_status csts_model_config_json(const csts_model* m, char** out) {
    return guarded([&] {
        need(m, "model");
        need(out, "output");
        emit(out, {{"model", model::to_json(m->model->config())}, {"train", train::to_json(m->train)}});
    });
}

void csts_model_free(csts_model* m) { delete m; }

csts_status csts_train(const csts_config* cfg, const csts_dataset* ds, const char* out_dir, csts_event_fn on_step,
                       void* user, char** report) {
    return guarded([&] {
        need(cfg, "config");
        need(ds, "dataset");
        train::Trainer t(cfg->cfg);
        train::TrainOptions opts;
        if (out_dir) opts.out_dir = out_dir;
        if (on_step) opts.on_step = [&](const train::StepRecord& r) { on_step(r.to_json().dump().c_str(), user); };
        const train::TrainResult r = t.fit(ds->data, opts);
        json j{{"steps", r.steps.size()},
               {"final_kld", r.steps.empty() ? 0.0 : r.steps.back().kld},
               {"checkpoint", r.checkpoint},
               {"eval", r.final_report ? r.final_report->to_json() : json(nullptr)}};
        emit(report, j);
    });
}

csts_status csts_evaluate(const csts_model* m, const csts_dataset* ds, const csts_config* settings, const char* out_dir,
                          char** report) {
    return guarded([&] {
        need(m, "model");
        need(ds, "dataset");
        if (ds->data.test.empty()) throw EvaluationError("the dataset has no test clips");
        const train::TrainConfig& use = settings ? settings->cfg : m->train;
        use.validate();
        train::PrecisionScope prec(use.precision);
        const double g = use.gamma;
        const eval::EvalReport r = train::evaluate(*m->model, ds->data.test, g);
        if (out_dir) {
            ensure_dir(out_dir);
            write_text(fs::path(out_dir) / "eval.json", r.to_json().dump(2) + "\n");
            write_text(fs::path(out_dir) / "per_frame.csv", r.per_frame_csv());
        }
        json j = r.to_json();
        j["gamma"] = g;
        j["table"] = r.table();
        emit(report, j);
    });
}

csts_status csts_synth(const char* options, const char* out_dir, char** summary) {
    return guarded([&] {
        need(out_dir, "output directory");
        const data::SynthOptions o = synth_options(options ? json::parse(options) : json::object());
        const auto clips = data::synth_generate(out_dir, o);
        json list = json::array();
        for (const auto& c : clips)
            list.push_back({{"id", c.id}, {"split", c.split}, {"drift_side", c.drift_side}, {"tone_side", c.tone_side}});
        emit(summary, {{"manifest", (fs::path(out_dir) / "manifest.json").string()}, {"clips", list}});
    });
}

csts_status csts_gradcheck(const csts_config* cfg, double tolerance, char** report, int* passed) {
    return guarded([&] {
        need(cfg, "config");
        if (!(tolerance >= 0.0)) throw ArgumentError("tolerance must be >= 0");
        verify::ModelGradcheckOptions opts;
        opts.tolerance = tolerance;
        opts.seed = cfg->cfg.seed;
        const auto rep = verify::run_model_gradcheck(verify::all_gradcheck_targets(cfg->cfg), opts);
        json j = rep.to_json();
        j["table"] = rep.table();
        emit(report, j);
        if (passed) *passed = rep.passed ? 1 : 0;
    });
}

csts_status csts_set_gradient_sabotage(const char* op) {
    return guarded([&] { set_gradient_sabotage(op ? op : ""); });
}

csts_status csts_ablate(const csts_config* base, const csts_dataset* ds, const char* grid, const uint64_t* seeds,
                        size_t n_seeds, unsigned threads, const char* out_dir, csts_event_fn on_cell, void* user,
                        char** result) {
    return guarded([&] {
        need(base, "config");
        need(ds, "dataset");
        need(grid, "grid");
        std::vector<std::uint64_t> s;
        if (seeds) s.assign(seeds, seeds + n_seeds);
        if (s.empty()) s.push_back(base->cfg.seed);
        const auto names = train::grid_names();
        const bool named = std::find(names.begin(), names.end(), grid) != names.end();
        const auto cells = named ? train::ablation_grid(grid, base->cfg, s)
                                 : train::ablation_grid_from_json(json::parse(grid), base->cfg, s);
        train::AblationOptions opts;
        opts.threads = thread_count(threads);
        if (out_dir) opts.out_dir = out_dir;
        if (on_cell)
            opts.on_cell = [&](const train::AblationRow& r) {
                json j{{"name", r.name}, {"group", r.group}, {"ok", r.ok}, {"error", r.error}, {"final_kld", r.final_kld}};
                j["f1"] = r.report ? json(r.report->f1) : json(nullptr);
                on_cell(j.dump().c_str(), user);
            };
        const auto res = train::run_ablation(cells, ds->data, opts);
        json j = res.to_json();
        j["table"] = res.table();
        emit(result, j);
    });
}

csts_status csts_dump_attention(const csts_model* m, const char* manifest, const char* clip_id, const char* out_dir,
                                char** files) {
    return guarded([&] {
        need(m, "model");
        need(out_dir, "output directory");
        const LoadedClip clip = load_one(m, manifest, clip_id);
        train::PrecisionScope prec(m->train.precision);
        NoGradScope no_grad;
        model::ForwardOptions fo;
        fo.capture_attention = true;
        const auto out = m->model->forward({clip.sample.frames, clip.sample.spectrograms}, fo);
        if (!out.bundle.spatial_attention.defined())
            throw StateError("the checkpoint's fusion strategy has no spatial audio-visual attention");
        const Dims3 grid = out.video.grid;
        const Tensor maps = model::spatial_correlation_map(out.bundle.spatial_attention, grid.t, grid);
        const Index t_in = clip.sample.frames.shape()[0];
        const Index h = clip.sample.frames.shape()[1], w = clip.sample.frames.shape()[2];

        ensure_dir(out_dir);
        const std::string stem = file_stem(clip.manifest.id);
        json list = json::array();
        for (Index k = 0; k < grid.t; ++k) {
            const data::Image gray = data::resize(data::gray_image(normalised_slice(maps, k)), w, h);
            const fs::path map_path = fs::path(out_dir) / (stem + "_t" + std::to_string(k) + "_attn.png");
            data::write_png(map_path.string(), gray);
            const data::Image frame = frame_image(clip.sample.frames, k * t_in / grid.t);
            const fs::path over_path = fs::path(out_dir) / (stem + "_t" + std::to_string(k) + "_overlay.png");
            data::write_png(over_path.string(), overlay(frame, gray, 0.6));
            list.push_back(map_path.string());
            list.push_back(over_path.string());
        }
        emit(files, list);
    });
}

csts_status csts_render_prediction(const csts_model* m, const char* manifest, const char* clip_id, const char* out_dir,
                                   char** files) {
    return guarded([&] {
        need(m, "model");
        need(out_dir, "output directory");
        const LoadedClip clip = load_one(m, manifest, clip_id);
        train::PrecisionScope prec(m->train.precision);
        NoGradScope no_grad;
        const auto out = m->model->forward({clip.sample.frames, clip.sample.spectrograms});
        const Tensor& probs = out.heat.probs;
        const Index t_out = probs.shape()[0], h = probs.shape()[1], w = probs.shape()[2];

        ensure_dir(out_dir);
        const std::string stem = file_stem(clip.manifest.id);
        const Index radius = std::max<Index>(1, std::min(h, w) / 64);
        json list = json::array();
        for (Index k = 0; k < t_out; ++k) {
            const data::Image frame =
                data::resize(data::read_frame(clip.manifest, clip.sample.target_indices[static_cast<std::size_t>(k)]), w, h);
            data::Image img = overlay(frame, data::gray_image(normalised_slice(probs, k)), 0.7);
            const auto& g = clip.sample.gaze[static_cast<std::size_t>(k)];
            if (g.valid) draw_dot(img, model::gaze_pixel(g.x, w), model::gaze_pixel(g.y, h), radius);
            const fs::path path =
                fs::path(out_dir) / (stem + "_f" + std::to_string(k) + (g.valid ? "_pred.png" : "_pred_nogaze.png"));
            data::write_png(path.string(), img);
            list.push_back(path.string());
        }
        emit(files, list);
    });
}

} // extern "C"
