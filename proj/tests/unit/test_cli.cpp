#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <string>

#include "doctest.h"
#include "json.hpp"
#include "support/temp_dir.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using csts::testing::TempDir;
using csts::testing::read_bytes;
using csts::testing::tree_bytes;

namespace {

struct Run {
    int code = -1;
    std::string output;
};

// Runs the CLI with stdout and stderr captured.
Run cli(const std::string& args) {
    static TempDir logs("cli_logs");
    static int counter = 0;
    const std::string log = logs.str("run" + std::to_string(counter++) + ".txt");
    const std::string cmd = std::string(CSTS_CLI_PATH) + " " + args + " > " + log + " 2>&1";
    const int status = std::system(cmd.c_str());
    Run r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.output = read_bytes(log);
    return r;
}

struct Corpus {
    TempDir dir{"cli"};
    std::string manifest;

    Corpus() {
        const Run r = cli("synth --clips 6 --seed 4 --out " + dir.str("data"));
        REQUIRE_MESSAGE(r.code == 0, r.output);
        manifest = dir.str("data/manifest.json");
    }

    std::string train_args(const std::string& out) const {
        return "train --data " + manifest + " --epochs 1 --batch-size 2 --lr 1e-3 --threads 1 --out " + dir.str(out);
    }
};

Corpus& corpus() {
    static Corpus c;
    return c;
}

} // namespace

TEST_CASE("usage errors exit 2, help exits 0") {
    CHECK(cli("--help").code == 0);
    CHECK(cli("train --help").code == 0);
    CHECK(cli("").code == 2);
    CHECK(cli("frobnicate").code == 2);
    CHECK(cli("gradcheck --no-such-flag").code == 2);
    CHECK(cli("train").code == 2);  // --data is required
    CHECK(cli("gradcheck --precision f16").code == 2);
    CHECK(cli("gradcheck --tolerance -1").code == 2);
    const Run bad = cli("train --data " + corpus().manifest + " --strategy nope");
    CHECK(bad.code == 2);
    CHECK(bad.output.find("nope") != std::string::npos);
}

TEST_CASE("I/O problems exit 3") {
    Corpus& c = corpus();
    CHECK(cli("train --data /nonexistent/manifest.json").code == 3);
    CHECK(cli("eval --checkpoint /nonexistent/model.ckpt --data " + c.manifest).code == 3);
    CHECK(cli("eval --checkpoint " + c.manifest + " --data " + c.manifest).code == 3);
    csts::testing::write_text(c.dir.path() / "broken.json", "{ not json");
    CHECK(cli("train --config " + c.dir.str("broken.json") + " --data " + c.manifest).code == 3);
}

TEST_CASE("synth output is identical across runs and directories") {
    TempDir dir("cli_synth");
    REQUIRE(cli("synth --clips 3 --seed 9 --out " + dir.str("a")).code == 0);
    REQUIRE(cli("synth --clips 3 --seed 9 --out " + dir.str("b")).code == 0);
    REQUIRE(cli("synth --clips 3 --seed 9 --out " + dir.str("a")).code == 0);
    CHECK(tree_bytes(dir.path() / "a") == tree_bytes(dir.path() / "b"));
    REQUIRE(cli("synth --clips 3 --seed 10 --out " + dir.str("c")).code == 0);
    CHECK(tree_bytes(dir.path() / "a") != tree_bytes(dir.path() / "c"));
}

TEST_CASE("train is reproducible and eval matches the training report") {
    Corpus& c = corpus();
    const Run a = cli(c.train_args("run_a"));
    REQUIRE_MESSAGE(a.code == 0, a.output);
    REQUIRE(cli(c.train_args("run_b")).code == 0);
    CHECK(tree_bytes(c.dir.path() / "run_a") == tree_bytes(c.dir.path() / "run_b"));
    for (const char* f : {"config.json", "train_log.jsonl", "eval_log.jsonl", "model.ckpt", "eval.json", "per_frame.csv"})
        CHECK_MESSAGE(fs::exists(c.dir.path() / "run_a" / f), f);

    const Run e = cli("eval --checkpoint " + c.dir.str("run_a/model.ckpt") + " --data " + c.manifest + " --out " + c.dir.str("ev"));
    REQUIRE_MESSAGE(e.code == 0, e.output);
    CHECK(read_bytes(c.dir.path() / "ev" / "eval.json") == read_bytes(c.dir.path() / "run_a" / "eval.json"));
    CHECK(e.output.find("all") != std::string::npos);
}

TEST_CASE("flags override the config file") {
    Corpus& c = corpus();
    csts::testing::write_text(c.dir.path() / "cfg.json", R"({"epochs": 3, "lr": 0.002, "weight_decay": 0.01})");
    const Run r = cli(c.train_args("run_cfg") + " --config " + c.dir.str("cfg.json") + " --seed 7 --precision f32");
    REQUIRE_MESSAGE(r.code == 0, r.output);
    const json cfg = json::parse(read_bytes(c.dir.path() / "run_cfg" / "config.json"));
    CHECK(cfg.at("epochs") == 1);
    CHECK(cfg.at("lr").get<double>() == 1e-3);
    CHECK(cfg.at("weight_decay").get<double>() == 0.01);
    CHECK(cfg.at("seed") == 7);
    CHECK(cfg.at("precision") == "f32");
}

TEST_CASE("dump-attn and render-pred file contracts") {
    Corpus& c = corpus();
    if (!fs::exists(c.dir.path() / "run_a" / "model.ckpt")) REQUIRE(cli(c.train_args("run_a")).code == 0);
    const std::string base = " --checkpoint " + c.dir.str("run_a/model.ckpt") + " --data " + c.manifest + " --clip clip_0001";

    REQUIRE(cli("dump-attn" + base + " --out " + c.dir.str("attn1")).code == 0);
    REQUIRE(cli("dump-attn" + base + " --out " + c.dir.str("attn2")).code == 0);
    const auto attn = tree_bytes(c.dir.path() / "attn1");
    CHECK(attn.size() == 8);
    for (int k = 0; k < 4; ++k) {
        CHECK(fs::exists(c.dir.path() / "attn1" / ("clip_clip_0001_t" + std::to_string(k) + "_attn.png")));
        CHECK(fs::exists(c.dir.path() / "attn1" / ("clip_clip_0001_t" + std::to_string(k) + "_overlay.png")));
    }
    CHECK(attn == tree_bytes(c.dir.path() / "attn2"));

    REQUIRE(cli("render-pred" + base + " --out " + c.dir.str("pred1")).code == 0);
    REQUIRE(cli("render-pred" + base + " --out " + c.dir.str("pred2")).code == 0);
    CHECK(tree_bytes(c.dir.path() / "pred1").size() == 8);
    CHECK(tree_bytes(c.dir.path() / "pred1") == tree_bytes(c.dir.path() / "pred2"));

    CHECK(cli("render-pred --checkpoint " + c.dir.str("run_a/model.ckpt") + " --data " + c.manifest +
              " --clip missing --out " + c.dir.str("pred3"))
              .code == 3);
    CHECK(cli("dump-attn --checkpoint " + c.dir.str("run_a/model.ckpt") + " --data " + c.manifest + " --clip clip_0001")
              .code == 2);  // --out is required
}

TEST_CASE("ablate runs a JSON grid file") {
    Corpus& c = corpus();
    csts::testing::write_text(c.dir.path() / "grid.json",
                              R"([{"name": "V", "strategy": "vision_only"}, {"name": "S", "strategy": "s_fusion", "alpha": 0}])");
    const Run r = cli("ablate --data " + c.manifest + " --grid " + c.dir.str("grid.json") +
                      " --seeds 0,1 --epochs 1 --batch-size 2 --threads 1 --out " + c.dir.str("abl"));
    REQUIRE_MESSAGE(r.code == 0, r.output);
    const json j = json::parse(read_bytes(c.dir.path() / "abl" / "ablation.json"));
    CHECK(j.at("cells").size() == 4);
    CHECK(r.output.find("V/seed1") != std::string::npos);
}

TEST_CASE("gradcheck fails on a sabotaged op and on zero tolerance") {
    const Run sab = cli("gradcheck --sabotage gelu");
    CHECK(sab.code == 1);
    CHECK(sab.output.find("gelu") != std::string::npos);
    CHECK(sab.output.find("FAILED") != std::string::npos);

    const Run zero = cli("gradcheck --tolerance 0");
    CHECK(zero.code == 1);
    CHECK(zero.output.find("FAILED") != std::string::npos);
}
