#include "train/trainer.hpp"

#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <thread>

#include "data/checkpoint.hpp"

namespace csts::train {

namespace fs = std::filesystem;
using nlohmann::json;

Sample Sample::from_clip(const data::ClipSample& clip) {
    Sample s;
    s.clip_id = clip.clip_id;
    s.frame_shape = clip.frames.shape();
    s.spec_shape = clip.spectrograms.shape();
    s.frames.assign(clip.frames.data().begin(), clip.frames.data().end());
    s.spectrograms.assign(clip.spectrograms.data().begin(), clip.spectrograms.data().end());
    s.gaze = clip.gaze;
    return s;
}

model::ModelInput Sample::input() const {
    return {Tensor::from_data(frame_shape, std::vector<double>(frames.begin(), frames.end())),
            Tensor::from_data(spec_shape, std::vector<double>(spectrograms.begin(), spectrograms.end()))};
}

data::SamplingConfig sampling_for(const TrainConfig& cfg) {
    const auto& m = cfg.model;
    data::SamplingConfig s;
    s.observation_seconds = cfg.observation_seconds;
    s.anticipation_seconds = cfg.anticipation_seconds;
    s.input_frames = m.video.input.t;
    s.target_frames = m.t_out;
    s.image_height = m.video.input.h;
    s.image_width = m.video.input.w;
    s.spectrogram.n_bins = m.audio.input.h;
    s.spectrogram.n_columns = m.audio.input.w;
    if (m.audio.input.t != m.video.input.t) throw ConfigError("audio and video must see the same number of input frames");
    return s;
}

namespace {

std::vector<Sample> load_samples(const std::vector<data::ClipManifest>& clips, const TrainConfig& cfg, unsigned threads) {
    const data::SamplingConfig sampling = sampling_for(cfg);
    std::vector<Sample> out(clips.size());
    std::vector<std::string> errors(clips.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&]() {
        for (std::size_t i = next++; i < clips.size(); i = next++) {
            try {
                out[i] = Sample::from_clip(data::load_clip(clips[i], cfg.anchor, sampling));
            } catch (const std::exception& e) {
                errors[i] = e.what();
            }
        }
    };
    std::vector<std::thread> pool;
    const unsigned n = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(clips.size())));
    for (unsigned t = 1; t < n; ++t) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();
    for (std::size_t i = 0; i < clips.size(); ++i)
        if (!errors[i].empty()) throw ValidationError("clip '" + clips[i].id + "' failed to load: " + errors[i]);
    return out;
}

void write_json_line(std::ofstream& os, const json& j) {
    os << j.dump() << "\n";
    os.flush();
}

} // namespace

Dataset load_dataset(const std::string& manifest, const TrainConfig& cfg, unsigned threads) {
    const auto clips = data::load_manifest(manifest);
    auto train = data::filter_split(clips, "train");
    if (cfg.train_limit > 0 && static_cast<Index>(train.size()) > cfg.train_limit) train.resize(static_cast<std::size_t>(cfg.train_limit));
    Dataset d;
    d.train = load_samples(train, cfg, threads);
    d.test = load_samples(data::filter_split(clips, "test"), cfg, threads);
    return d;
}

json StepRecord::to_json() const {
    return {{"step", step}, {"epoch", epoch}, {"lr", lr}, {"kld", kld}, {"cntr", cntr}, {"total", total}, {"grad_norm", grad_norm}};
}

eval::EvalReport evaluate(const model::CstsModel& m, const std::vector<Sample>& samples, double gamma) {
    NoGradScope ng;
    eval::Aggregator agg(m.config().t_out);
    for (const auto& s : samples) agg.add_prediction(m.forward(s.input()).heat.probs, s.gaze, gamma);
    return agg.report();
}

Trainer::Trainer(TrainConfig cfg)
    : cfg_(std::move(cfg)),
      model_([this] {
          cfg_.validate();
          PrecisionScope ps(cfg_.precision);
          return std::make_unique<model::CstsModel>(cfg_.resolved_model(), cfg_.seed);
      }()),
      opt_(model_->params(), AdamWConfig{cfg_.beta1, cfg_.beta2, cfg_.eps, cfg_.weight_decay}) {}

BatchLoss batch_loss(const model::CstsModel& m, const TrainConfig& cfg, const std::vector<const Sample*>& batch) {
    if (batch.empty()) throw ContractError("batch_loss: empty batch");
    const auto& mc = m.config();
    std::vector<Tensor> klds, wv, wa;
    for (const Sample* s : batch) {
        const auto out = m.forward(s->input());
        const auto target = model::gaussian_target(s->gaze, out.heat.probs.size(1), out.heat.probs.size(2));
        klds.push_back(reshape(model::kld_loss(out.heat.probs, target), {1}));
        if (mc.contrastive) {
            wv.push_back(out.w_v);
            wa.push_back(out.w_a);
        }
    }
    BatchLoss l;
    l.kld = mul_scalar(sum(concat(klds, 0)), 1.0 / static_cast<double>(klds.size()));
    if (mc.contrastive) l.cntr = model::info_nce(concat(wv, 0), concat(wa, 0), cfg.temperature);
    l.total = model::total_loss(l.kld, l.cntr, cfg.alpha);
    return l;
}

StepRecord Trainer::compute_gradients(const std::vector<const Sample*>& batch) {
    model_->params().zero_grad();
    Tape tape;
    StepRecord rec;
    {
        TapeScope scope(tape);
        const BatchLoss l = batch_loss(*model_, cfg_, batch);
        rec.kld = l.kld.item();
        rec.cntr = l.cntr.defined() ? l.cntr.item() : 0.0;
        rec.total = l.total.item();
        tape.backward(l.total);
    }
    rec.grad_norm = grad_norm(model_->params());
    return rec;
}

TrainResult Trainer::fit(const Dataset& data, const TrainOptions& opts) {
    if (data.train.empty()) throw ValidationError("no training clips");
    PrecisionScope prec(cfg_.precision);
    const Index n = static_cast<Index>(data.train.size());
    const Index per_epoch = (n + cfg_.batch_size - 1) / cfg_.batch_size;
    const Index total_steps = per_epoch * cfg_.epochs;

    std::ofstream step_log, eval_log;
    if (!opts.out_dir.empty()) {
        std::error_code ec;
        fs::create_directories(opts.out_dir, ec);
        std::ofstream cfg_out(fs::path(opts.out_dir) / "config.json");
        if (!cfg_out) throw IoError("cannot write to " + opts.out_dir);
        cfg_out << to_json(cfg_).dump(2) << "\n";
        step_log.open(fs::path(opts.out_dir) / "train_log.jsonl");
        eval_log.open(fs::path(opts.out_dir) / "eval_log.jsonl");
        if (!step_log || !eval_log) throw IoError("cannot write logs in " + opts.out_dir);
    }

    TrainResult result;
    auto run_eval = [&](Index step) {
        if (data.test.empty()) return;
        auto report = evaluate(*model_, data.test, cfg_.gamma);
        if (eval_log.is_open()) {
            json j = report.to_json();
            j["step"] = step;
            write_json_line(eval_log, j);
        }
        result.evals.emplace_back(step, std::move(report));
    };

    Rng order_rng(cfg_.seed ^ 0x5851f42d4c957f2dULL);
    std::vector<Index> order(static_cast<std::size_t>(n));
    Index step = 0;
    for (Index epoch = 0; epoch < cfg_.epochs; ++epoch) {
        for (Index i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
        for (Index i = n - 1; i > 0; --i)
            std::swap(order[static_cast<std::size_t>(i)], order[order_rng.below(static_cast<std::uint64_t>(i + 1))]);
        for (Index b = 0; b < n; b += cfg_.batch_size) {
            std::vector<const Sample*> batch;
            for (Index i = b; i < std::min(n, b + cfg_.batch_size); ++i) batch.push_back(&data.train[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])]);
            StepRecord rec;
            try {
                rec = compute_gradients(batch);
            } catch (const NumericError& e) {
                std::ostringstream os;
                os << "non-finite value at step " << step << " (epoch " << epoch << ", clips";
                for (const Sample* s : batch) os << " " << s->clip_id;
                os << "): " << e.what();
                throw NumericError(os.str());
            }
            if (cfg_.clip_grad) clip_grad_norm(model_->params(), 1.0);
            rec.step = step;
            rec.epoch = epoch;
            rec.lr = cosine_lr(cfg_.lr, step, total_steps);
            opt_.step(model_->params(), rec.lr);
            ++step;
            if (step_log.is_open()) write_json_line(step_log, rec.to_json());
            if (opts.on_step) opts.on_step(rec);
            result.steps.push_back(rec);
            if (cfg_.eval_every > 0 && step % cfg_.eval_every == 0 && step < total_steps) run_eval(step);
        }
    }
    run_eval(step);
    if (!data.test.empty()) result.final_report = result.evals.back().second;

    if (!opts.out_dir.empty()) {
        result.checkpoint = (fs::path(opts.out_dir) / "model.ckpt").string();
        save_training_checkpoint(result.checkpoint, *this, step);
        if (result.final_report) {
            std::ofstream(fs::path(opts.out_dir) / "eval.json") << result.final_report->to_json().dump(2) << "\n";
            std::ofstream(fs::path(opts.out_dir) / "per_frame.csv") << result.final_report->per_frame_csv();
        }
    }
    return result;
}

void save_training_checkpoint(const std::string& path, const Trainer& t, Index step) {
    data::Checkpoint ck;
    ck.config = {{"model", model::to_json(const_cast<Trainer&>(t).model().config())}, {"train", to_json(t.config())}};
    ck.step = static_cast<std::uint64_t>(step);
    ck.tensors = data::snapshot(const_cast<Trainer&>(t).model().params());
    ck.optimizer = const_cast<Trainer&>(t).optimizer().state();
    data::save_checkpoint(path, ck);
}

std::unique_ptr<model::CstsModel> load_model(const std::string& checkpoint) {
    const data::Checkpoint ck = data::load_checkpoint(checkpoint);
    if (!ck.config.contains("model")) throw FormatError(checkpoint + ": checkpoint has no model config");
    auto m = std::make_unique<model::CstsModel>(model::model_config_from_json(ck.config.at("model")), 0);
    data::restore(m->params(), ck);
    return m;
}

} // namespace csts::train
