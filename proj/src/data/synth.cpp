#include "data/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>

#include "audio/wav.hpp"
#include "common/rng.hpp"
#include "data/dataset.hpp"
#include "data/image.hpp"
#include "json.hpp"

namespace csts::data {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Blob {
    double x, y;    // normalised
    double vx, vy;  // per second
    double sigma;   // pixels
    double rgb[3];
};

void splat(std::vector<double>& img, Index w, Index h, const Blob& b) {
    const double cx = b.x * static_cast<double>(w), cy = b.y * static_cast<double>(h);
    const Index r = static_cast<Index>(std::ceil(3.0 * b.sigma));
    const Index x0 = std::max<Index>(0, static_cast<Index>(std::floor(cx)) - r), x1 = std::min<Index>(w - 1, static_cast<Index>(std::floor(cx)) + r);
    const Index y0 = std::max<Index>(0, static_cast<Index>(std::floor(cy)) - r), y1 = std::min<Index>(h - 1, static_cast<Index>(std::floor(cy)) + r);
    for (Index y = y0; y <= y1; ++y)
        for (Index x = x0; x <= x1; ++x) {
            const double dx = static_cast<double>(x) + 0.5 - cx, dy = static_cast<double>(y) + 0.5 - cy;
            const double a = std::exp(-(dx * dx + dy * dy) / (2.0 * b.sigma * b.sigma));
            for (int c = 0; c < 3; ++c) {
                double& p = img[static_cast<std::size_t>((y * w + x) * 3 + c)];
                p = p + a * (b.rgb[c] - p);
            }
        }
}

void bounce(double& p, double& v, double lo, double hi) {
    if (p < lo) {
        p = 2 * lo - p;
        v = std::abs(v);
    } else if (p > hi) {
        p = 2 * hi - p;
        v = -std::abs(v);
    }
}

SynthClipInfo make_clip(const fs::path& dir, const std::string& id, Index k, const SynthOptions& opt) {
    Rng rng(opt.seed * 0x9e3779b97f4a7c15ULL + static_cast<std::uint64_t>(k) * 0xd1b54a32d192ed03ULL + 1);
    const Index n_frames = std::lround(opt.duration * opt.fps);
    const Index w = opt.width, h = opt.height;
    const double dt = 1.0 / opt.fps;

    SynthClipInfo info;
    info.id = id;
    info.drift_side = rng.bernoulli(0.5) ? 1 : -1;
    info.tone_side = rng.bernoulli(opt.cue_validity) ? info.drift_side : -info.drift_side;

    // static textured background
    std::vector<double> background(static_cast<std::size_t>(w * h * 3));
    const double base[3] = {rng.uniform(0.05, 0.2), rng.uniform(0.05, 0.2), rng.uniform(0.05, 0.2)};
    for (Index i = 0; i < w * h; ++i) {
        const double n = 0.04 * rng.normal();
        for (int c = 0; c < 3; ++c) background[static_cast<std::size_t>(i * 3 + c)] = std::clamp(base[c] + n, 0.0, 1.0);
    }

    Blob target{rng.uniform(0.35, 0.65), rng.uniform(0.3, 0.7), rng.uniform(-0.04, 0.04), rng.uniform(-0.04, 0.04),
                2.5, {1.0, 1.0, 0.85}};
    std::vector<Blob> distractors;
    for (Index d = 0; d < opt.distractors; ++d) {
        const double hue = rng.uniform();
        distractors.push_back({rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9), rng.uniform(-0.15, 0.15), rng.uniform(-0.15, 0.15),
                               rng.uniform(1.5, 3.0),
                               {0.35 + 0.3 * std::cos(2 * std::numbers::pi * hue), 0.35 + 0.3 * std::cos(2 * std::numbers::pi * (hue + 1.0 / 3)),
                                0.35 + 0.3 * std::cos(2 * std::numbers::pi * (hue + 2.0 / 3))}});
    }
    const double drift_end_x = 0.5 + info.drift_side * rng.uniform(0.25, 0.35);

    std::vector<Image> frames;
    std::vector<model::GazePoint> gaze;
    const Index anchor_frame = std::lround(opt.anchor * opt.fps);
    const Index ant_frames = n_frames - anchor_frame;
    double anchor_x = target.x;
    for (Index f = 0; f < n_frames; ++f) {
        std::vector<double> img = background;
        for (const auto& d : distractors) splat(img, w, h, d);
        splat(img, w, h, target);
        Image out{w, h, 3, std::vector<std::uint8_t>(img.size())};
        for (std::size_t i = 0; i < img.size(); ++i) out.pixels[i] = static_cast<std::uint8_t>(std::lround(std::clamp(img[i], 0.0, 1.0) * 255.0));
        frames.push_back(std::move(out));

        model::GazePoint g{std::clamp(target.x + 0.004 * rng.normal(), 0.0, 1.0), std::clamp(target.y + 0.004 * rng.normal(), 0.0, 1.0), true};
        if (rng.bernoulli(opt.missing_gaze)) g.valid = false;
        gaze.push_back(g);

        // advance to the next frame
        for (auto& d : distractors) {
            d.x += d.vx * dt;
            d.y += d.vy * dt;
            bounce(d.x, d.vx, 0.05, 0.95);
            bounce(d.y, d.vy, 0.05, 0.95);
        }
        if (f + 1 < anchor_frame) {
            target.x += target.vx * dt;
            target.y += target.vy * dt;
            bounce(target.x, target.vx, 0.3, 0.7);
            bounce(target.y, target.vy, 0.25, 0.75);
            anchor_x = target.x;
        } else {
            const double u = static_cast<double>(f + 2 - anchor_frame) / static_cast<double>(ant_frames);
            target.x = anchor_x + std::min(u, 1.0) * (drift_end_x - anchor_x);
        }
    }

    const fs::path frames_path = opt.packed ? dir / "frames.pack" : dir / "frames";
    if (opt.packed) {
        write_packed(frames_path.string(), frames);
    } else {
        fs::create_directories(frames_path);
        char name[32];
        for (std::size_t f = 0; f < frames.size(); ++f) {
            std::snprintf(name, sizeof name, "%06zu.png", f);
            write_png((frames_path / name).string(), frames[f]);
        }
    }
    write_gaze_csv((dir / "gaze.csv").string(), gaze);

    // audio: background noise, a tone burst in the observation window, pan toward the cued side
    const auto n_samples = static_cast<std::size_t>(std::lround(opt.duration * opt.sample_rate));
    std::vector<double> left(n_samples), right(n_samples);
    const double freq = info.tone_side < 0 ? opt.left_tone_hz : opt.right_tone_hz;
    const double onset = rng.uniform(0.6, 1.4), burst = rng.uniform(0.9, 1.3);
    const double pan = info.tone_side < 0 ? 0.2 : 0.8;
    const double phase = rng.uniform(0.0, 2 * std::numbers::pi);
    for (std::size_t i = 0; i < n_samples; ++i) {
        const double t = static_cast<double>(i) / opt.sample_rate;
        const double noise_l = 0.03 * rng.normal(), noise_r = 0.03 * rng.normal();
        double tone = 0.0;
        if (t >= onset && t < onset + burst) {
            const double env = std::min({1.0, (t - onset) / 0.02, (onset + burst - t) / 0.02});
            tone = 0.5 * env * std::sin(2 * std::numbers::pi * freq * t + phase);
        }
        left[i] = noise_l + 2.0 * (1.0 - pan) * tone;
        right[i] = noise_r + 2.0 * pan * tone;
    }
    audio::write_wav((dir / "audio.wav").string(), {left, right}, opt.sample_rate);

    std::ofstream cue(dir / "cue.json");
    cue << json{{"drift_side", info.drift_side}, {"tone_side", info.tone_side}, {"tone_hz", freq}, {"onset", onset}, {"burst", burst}}.dump(2)
        << "\n";
    return info;
}

} // namespace

std::vector<SynthClipInfo> synth_generate(const std::string& out_dir, const SynthOptions& opt) {
    if (opt.clips < 1) throw ContractError("synth_generate: need at least one clip");
    if (!(opt.cue_validity >= 0.0 && opt.cue_validity <= 1.0)) throw ConfigError("cue_validity must lie in [0, 1]");
    if (opt.anchor <= 0.0 || opt.anchor >= opt.duration) throw ConfigError("anchor must lie inside the clip");
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec || !fs::is_directory(out_dir)) throw IoError("cannot create output directory " + out_dir);
    {
        const fs::path probe = fs::path(out_dir) / ".write_probe";
        std::ofstream p(probe);
        if (!p) throw IoError("output directory is not writable: " + out_dir);
        p.close();
        fs::remove(probe, ec);
    }

    const Index test_every = opt.test_fraction > 0.0 ? std::max<Index>(1, std::lround(1.0 / opt.test_fraction)) : 0;
    std::vector<SynthClipInfo> infos;
    json manifest = json::array();
    char name[32];
    for (Index k = 0; k < opt.clips; ++k) {
        std::snprintf(name, sizeof name, "clip_%04lld", static_cast<long long>(k));
        const fs::path dir = fs::path(out_dir) / name;
        fs::create_directories(dir);
        SynthClipInfo info = make_clip(dir, name, k, opt);
        info.split = (test_every > 0 && k % test_every == test_every - 1) ? "test" : "train";
        manifest.push_back({{"id", info.id},
                            {"frames", std::string(name) + (opt.packed ? "/frames.pack" : "/frames")},
                            {"audio", std::string(name) + "/audio.wav"},
                            {"gaze", std::string(name) + "/gaze.csv"},
                            {"fps", opt.fps},
                            {"split", info.split}});
        infos.push_back(std::move(info));
    }
    std::ofstream os(fs::path(out_dir) / "manifest.json");
    if (!os) throw IoError("cannot write manifest in " + out_dir);
    os << manifest.dump(2) << "\n";
    return infos;
}

} // namespace csts::data
