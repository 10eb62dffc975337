#include <cmath>
#include <filesystem>
#include <map>

#include "audio/frontend.hpp"
#include "data/checkpoint.hpp"
#include "data/dataset.hpp"
#include "data/image.hpp"
#include "data/synth.hpp"
#include "doctest.h"
#include "json.hpp"
#include "model/model.hpp"
#include "support/temp_dir.hpp"
#include "support/test_util.hpp"

using namespace csts;
using namespace csts::data;
using csts::testing::TempDir;
namespace fs = std::filesystem;

namespace {

SynthOptions small_synth(Index clips, std::uint64_t seed, bool packed = true) {
    SynthOptions o;
    o.clips = clips;
    o.seed = seed;
    o.packed = packed;
    return o;
}

SamplingConfig desk_sampling() {
    SamplingConfig s;
    s.image_height = 64;
    s.image_width = 64;
    return s;
}

// A clip directory with n solid-colour frames, a silent WAV and full gaze.
ClipManifest write_plain_clip(const fs::path& dir, Index n, double fps) {
    fs::create_directories(dir / "frames");
    for (Index i = 0; i < n; ++i) {
        Image img{16, 16, 3, std::vector<std::uint8_t>(16 * 16 * 3, static_cast<std::uint8_t>(i))};
        char name[32];
        std::snprintf(name, sizeof name, "%06lld.png", static_cast<long long>(i));
        write_png((dir / "frames" / name).string(), img);
    }
    audio::write_wav((dir / "audio.wav").string(), {std::vector<double>(static_cast<std::size_t>(n / fps * 16000), 0.0)}, 16000);
    std::vector<model::GazePoint> gaze;
    for (Index i = 0; i < n; ++i) gaze.push_back({static_cast<double>(i) / static_cast<double>(n), 0.5, true});
    write_gaze_csv((dir / "gaze.csv").string(), gaze);
    nlohmann::json m = nlohmann::json::array();
    m.push_back({{"id", "plain"}, {"frames", "frames"}, {"audio", "audio.wav"}, {"gaze", "gaze.csv"}, {"fps", fps}, {"split", "test"}});
    csts::testing::write_text(dir / "manifest.json", m.dump());
    return load_manifest((dir / "manifest.json").string()).at(0);
}

} // namespace

TEST_CASE("uniform sampling over the observation window") {
    // Oracle: round(i * 59 / 7) in integer arithmetic; 59 i / 7 never lands on .5.
    std::vector<Index> expect;
    for (Index i = 0; i < 8; ++i) expect.push_back((2 * i * 59 + 7) / 14);
    CHECK(expect == std::vector<Index>{0, 8, 17, 25, 34, 42, 51, 59});
    CHECK(uniform_indices(0, 60, 8) == expect);

    TempDir tmp("sampling");
    const ClipManifest clip = write_plain_clip(tmp.path(), 100, 20.0);
    std::vector<Index> in, tgt;
    sample_indices(clip, 3.0, desk_sampling(), in, tgt);
    CHECK(in == expect);
    std::vector<Index> expect_t;
    for (Index i = 0; i < 8; ++i) expect_t.push_back(60 + (2 * i * 39 + 7) / 14);
    CHECK(tgt == expect_t);

    CHECK_THROWS_AS(sample_indices(clip, 3.5, desk_sampling(), in, tgt), RangeError);
    CHECK_THROWS_AS(sample_indices(clip, 2.5, desk_sampling(), in, tgt), RangeError);
}

TEST_CASE("load_clip reads frames, audio and future gaze") {
    TempDir tmp("load_clip");
    const ClipManifest clip = write_plain_clip(tmp.path(), 100, 20.0);
    SamplingConfig s = desk_sampling();
    s.image_height = s.image_width = 16;
    const ClipSample a = load_clip(clip, 3.0, s);
    CHECK(a.frames.shape() == Shape{8, 16, 16, 3});
    CHECK(a.spectrograms.shape() == Shape{8, 256, 256});
    REQUIRE(a.gaze.size() == 8);
    // Frames at the target size pass through unchanged: frame value == its index.
    for (Index k = 0; k < 8; ++k) CHECK(a.frames[k * 16 * 16 * 3 + 5] == doctest::Approx(static_cast<double>(a.input_indices[k]) / 255.0).epsilon(1e-15));
    for (Index k = 0; k < 8; ++k) CHECK(a.gaze[k].x == doctest::Approx(static_cast<double>(a.target_indices[k]) / 100.0).epsilon(1e-5));
    CHECK(a.input_times[1] == doctest::Approx(8.0 / 20.0));

    const ClipSample b = load_clip(clip, 3.0, s);
    CHECK(csts::testing::max_abs_diff(a.frames.data(), b.frames.data()) == 0.0);
    CHECK(csts::testing::max_abs_diff(a.spectrograms.data(), b.spectrograms.data()) == 0.0);

    s.image_height = s.image_width = 32;
    const ClipSample c = load_clip(clip, 3.0, s);
    CHECK(c.frames.shape() == Shape{8, 32, 32, 3});
    CHECK(c.frames[7] == doctest::Approx(a.frames[7]));
}

TEST_CASE("resize is the identity at the same size") {
    Rng rng(3);
    Image img{7, 5, 3, {}};
    for (int i = 0; i < 7 * 5 * 3; ++i) img.pixels.push_back(static_cast<std::uint8_t>(rng.below(256)));
    CHECK(resize(img, 7, 5).pixels == img.pixels);
    const Image up = resize(img, 14, 10);
    CHECK(up.width == 14);
    CHECK(up.pixels.size() == 14 * 10 * 3);
}

TEST_CASE("png and packed frames round-trip") {
    TempDir tmp("frames");
    Rng rng(4);
    std::vector<Image> frames;
    for (int f = 0; f < 3; ++f) {
        Image img{9, 6, 3, {}};
        for (int i = 0; i < 9 * 6 * 3; ++i) img.pixels.push_back(static_cast<std::uint8_t>(rng.below(256)));
        frames.push_back(img);
    }
    write_png(tmp.str("a.png"), frames[0]);
    const Image back = read_png(tmp.str("a.png"));
    CHECK(back.width == 9);
    CHECK(back.height == 6);
    CHECK(back.pixels == frames[0].pixels);

    write_packed(tmp.str("f.pack"), frames);
    CHECK(packed_frame_count(tmp.str("f.pack")) == 3);
    const auto packed = read_packed(tmp.str("f.pack"));
    REQUIRE(packed.size() == 3);
    for (int f = 0; f < 3; ++f) CHECK(packed[f].pixels == frames[f].pixels);

    std::string bytes = csts::testing::read_bytes(tmp.path() / "f.pack");
    csts::testing::write_text(tmp.path() / "trunc.pack", bytes.substr(0, bytes.size() - 10));
    CHECK_THROWS_AS(read_packed(tmp.str("trunc.pack")), FormatError);
    bytes[0] = 'X';
    csts::testing::write_text(tmp.path() / "bad.pack", bytes);
    CHECK_THROWS_AS(read_packed(tmp.str("bad.pack")), FormatError);
    CHECK_THROWS_AS(read_png(tmp.str("missing.png")), IoError);
}

TEST_CASE("manifest validation") {
    TempDir tmp("manifest");
    csts::testing::write_text(tmp.path() / "empty.json", "[]");
    CHECK(load_manifest(tmp.str("empty.json")).empty());
    CHECK_THROWS_AS(load_manifest(tmp.str("absent.json")), IoError);
    csts::testing::write_text(tmp.path() / "obj.json", "{}");
    CHECK_THROWS_AS(load_manifest(tmp.str("obj.json")), FormatError);
    csts::testing::write_text(tmp.path() / "broken.json", "[{");
    CHECK_THROWS_AS(load_manifest(tmp.str("broken.json")), FormatError);

    write_plain_clip(tmp.path() / "c", 4, 2.0);
    nlohmann::json m = nlohmann::json::array();
    m.push_back({{"id", "good"}, {"frames", "c/frames"}, {"audio", "c/audio.wav"}, {"gaze", "c/gaze.csv"}, {"fps", 2.0}});
    m.push_back({{"id", "offscreen"},
                 {"frames", "c/frames"},
                 {"audio", "c/audio.wav"},
                 {"gaze", nlohmann::json::array({{{"frame", 1}, {"x", 1.2}, {"y", 0.5}}})},
                 {"fps", 2.0}});
    m.push_back({{"id", "dangling"}, {"frames", "nowhere"}, {"audio", "c/audio.wav"}, {"gaze", "c/gaze.csv"}, {"fps", 2.0}});
    m.push_back({{"id", "no_fps"}, {"frames", "c/frames"}, {"audio", "c/audio.wav"}, {"gaze", "c/gaze.csv"}});
    csts::testing::write_text(tmp.path() / "mixed.json", m.dump());
    try {
        load_manifest(tmp.str("mixed.json"));
        FAIL("expected a validation error");
    } catch (const ValidationError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("'offscreen'") != std::string::npos);
        CHECK(msg.find("1.2") != std::string::npos);
        CHECK(msg.find("'dangling'") != std::string::npos);
        CHECK(msg.find("'no_fps'") != std::string::npos);
        CHECK(msg.find("'good'") == std::string::npos);
    }

    const auto single = nlohmann::json::array({m[0]});
    csts::testing::write_text(tmp.path() / "good.json", single.dump());
    const auto clips = load_manifest(tmp.str("good.json"));
    REQUIRE(clips.size() == 1);
    CHECK(clips[0].n_frames == 4);
    CHECK(clips[0].split == "train");
    CHECK(filter_split(clips, "test").empty());
}

TEST_CASE("synthetic corpus layout and determinism") {
    TempDir a("synth_a"), b("synth_b"), c("synth_c");
    const auto infos = synth_generate(a.str(), small_synth(1, 7, false));
    REQUIRE(infos.size() == 1);
    CHECK(fs::is_directory(a.path() / "clip_0000" / "frames"));
    CHECK(fs::is_regular_file(a.path() / "clip_0000" / "audio.wav"));
    CHECK(fs::is_regular_file(a.path() / "clip_0000" / "gaze.csv"));
    const auto one = load_manifest(a.str("manifest.json"));
    REQUIRE(one.size() == 1);
    CHECK(one[0].n_frames == 50);
    CHECK(!one[0].packed);

    synth_generate(b.str(), small_synth(5, 11));
    synth_generate(c.str(), small_synth(5, 11));
    CHECK(csts::testing::tree_bytes(b.path()) == csts::testing::tree_bytes(c.path()));
    const auto clips = load_manifest(b.str("manifest.json"));
    CHECK(clips.size() == 5);
    CHECK(clips[4].split == "test");
    CHECK(filter_split(clips, "train").size() == 4);

    synth_generate(c.str(), small_synth(5, 12));
    CHECK(csts::testing::tree_bytes(b.path()) != csts::testing::tree_bytes(c.path()));
    CHECK_THROWS_AS(synth_generate(c.str(), small_synth(0, 1)), ContractError);
    CHECK_THROWS_AS(synth_generate("/proc/csts_unwritable", small_synth(1, 1)), IoError);
}

TEST_CASE("png and packed corpora load identically") {
    TempDir a("synth_png"), b("synth_pack");
    synth_generate(a.str(), small_synth(1, 5, false));
    synth_generate(b.str(), small_synth(1, 5, true));
    const auto sa = load_clip(load_manifest(a.str("manifest.json"))[0], 3.0, desk_sampling());
    const auto sb = load_clip(load_manifest(b.str("manifest.json"))[0], 3.0, desk_sampling());
    CHECK(csts::testing::max_abs_diff(sa.frames.data(), sb.frames.data()) == 0.0);
    CHECK(csts::testing::max_abs_diff(sa.spectrograms.data(), sb.spectrograms.data()) == 0.0);
}

TEST_CASE("synthetic cue statistics") {
    TempDir tmp("synth_stats");
    SynthOptions opt = small_synth(60, 21);
    const auto infos = synth_generate(tmp.str(), opt);
    const auto clips = load_manifest(tmp.str("manifest.json"));

    // Empirical mutual information between tone side and drift side.
    std::map<std::pair<int, int>, double> joint;
    for (const auto& i : infos) joint[{i.tone_side, i.drift_side}] += 1.0 / static_cast<double>(infos.size());
    double mi = 0.0;
    for (const auto& [k, p] : joint) {
        double pt = 0.0, pd = 0.0;
        for (const auto& [k2, p2] : joint) {
            if (k2.first == k.first) pt += p2;
            if (k2.second == k.second) pd += p2;
        }
        if (p > 0) mi += p * std::log(p / (pt * pd));
    }
    CHECK(mi > 0.1);
    double agree = 0.0;
    for (const auto& i : infos) agree += i.tone_side == i.drift_side;
    agree /= static_cast<double>(infos.size());
    CHECK(agree > 0.75);  // 0.9 validity; 60 draws put 0.75 about 4 sigma out
    CHECK(agree < 1.0);

    // The planted geometry: last labelled gaze sits on the drift side, the
    // anchor gaze near the centre; the tone is audible at its own frequency.
    const SamplingConfig s = desk_sampling();
    for (std::size_t k = 0; k < 6; ++k) {
        const auto& clip = clips[k];
        const auto& g_end = clip.gaze.back();
        if (g_end.valid) CHECK((g_end.x - 0.5) * infos[k].drift_side > 0.2);
        const auto& g_anchor = clip.gaze[29];
        if (g_anchor.valid) CHECK(std::abs(g_anchor.x - 0.5) < 0.25);

        const auto cue = nlohmann::json::parse(csts::testing::read_bytes(tmp.path() / clip.id / "cue.json"));
        const double mid = cue["onset"].get<double>() + 0.5 * cue["burst"].get<double>();
        const auto track = audio::read_wav(clip.audio);
        const Tensor spec = audio::spectrogram_stack(track, {mid}, s.spectrogram).values;
        auto band = [&](double hz) {
            const Index bin = std::lround(hz * 512.0 / 24000.0) - 1;
            double e = 0.0;
            for (Index col = 0; col < 256; ++col) e += spec[bin * 256 + col];
            return e;
        };
        const double on = band(cue["tone_hz"].get<double>());
        const double off = band(cue["tone_hz"].get<double>() == opt.left_tone_hz ? opt.right_tone_hz : opt.left_tone_hz);
        CHECK(on > 3.0 * off);
    }
}

TEST_CASE("checkpoint round trip") {
    TempDir tmp("ckpt");
    model::CstsModel m(model::ModelConfig::desk(), 1);
    Checkpoint ck;
    ck.config = {{"model", model::to_json(m.config())}};
    ck.step = 17;
    ck.tensors = snapshot(m.params());
    OptimizerState o;
    o.step = 17;
    Rng rng(2);
    for (const auto& t : ck.tensors) {
        std::vector<double> mv(static_cast<std::size_t>(t.value.numel()));
        for (auto& x : mv) x = rng.normal();
        o.m.push_back(mv);
        o.v.push_back(mv);
    }
    ck.optimizer = o;
    save_checkpoint(tmp.str("a.ckpt"), ck);
    const Checkpoint back = load_checkpoint(tmp.str("a.ckpt"));
    save_checkpoint(tmp.str("b.ckpt"), back);
    const std::string bytes = csts::testing::read_bytes(tmp.path() / "a.ckpt");
    CHECK(bytes == csts::testing::read_bytes(tmp.path() / "b.ckpt"));
    CHECK(back.step == 17);
    REQUIRE(back.optimizer.has_value());
    CHECK(back.optimizer->m == o.m);

    ck.optimizer.reset();
    save_checkpoint(tmp.str("c.ckpt"), ck);
    CHECK(!load_checkpoint(tmp.str("c.ckpt")).optimizer.has_value());

    std::string bad = bytes;
    bad[2] = 'Z';
    csts::testing::write_text(tmp.path() / "magic.ckpt", bad);
    CHECK_THROWS_WITH_AS(load_checkpoint(tmp.str("magic.ckpt")), doctest::Contains("magic"), FormatError);
    bad = bytes;
    bad[8] = 9;
    csts::testing::write_text(tmp.path() / "version.ckpt", bad);
    CHECK_THROWS_WITH_AS(load_checkpoint(tmp.str("version.ckpt")), doctest::Contains("version"), FormatError);
    csts::testing::write_text(tmp.path() / "trunc.ckpt", bytes.substr(0, bytes.size() / 2));
    CHECK_THROWS_WITH_AS(load_checkpoint(tmp.str("trunc.ckpt")), doctest::Contains("truncated"), FormatError);
    CHECK_THROWS_AS(load_checkpoint(tmp.str("none.ckpt")), IoError);
}

TEST_CASE("restore reproduces the saved model's loss bitwise") {
    TempDir tmp("restore");
    const auto cfg = model::ModelConfig::desk();
    model::CstsModel a(cfg, 1), b(cfg, 2);
    Rng rng(9);
    csts::testing::randomize(a.params(), rng);
    csts::testing::randomize(b.params(), rng);
    model::ModelInput in{csts::testing::random_tensor(rng, {8, 64, 64, 3}, 0.0, 1.0),
                         csts::testing::random_tensor(rng, {8, 256, 256}, 0.0, 2.0)};
    const auto target = model::gaussian_target(std::vector<model::GazePoint>(8, {0.3, 0.6, true}), 64, 64);
    auto loss = [&](const model::CstsModel& m) { return model::kld_loss(m.forward(in).heat.probs, target).item(); };

    Checkpoint ck;
    ck.tensors = snapshot(a.params());
    save_checkpoint(tmp.str("a.ckpt"), ck);
    const double la = loss(a);
    CHECK(loss(b) != la);
    restore(b.params(), load_checkpoint(tmp.str("a.ckpt")));
    CHECK(loss(b) == la);

    model::ModelConfig vcfg = cfg;
    vcfg.strategy = model::FusionStrategy::vision_only;
    vcfg.contrastive = false;
    model::CstsModel v(vcfg, 1);
    try {
        restore(v.params(), ck);
        FAIL("expected a validation error");
    } catch (const ValidationError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("extra:") != std::string::npos);
        CHECK(msg.find("audio.embed") != std::string::npos);
    }
    Checkpoint partial;
    partial.tensors = snapshot(v.params());
    CHECK_THROWS_WITH_AS(restore(a.params(), partial), doctest::Contains("missing:"), ValidationError);
}
