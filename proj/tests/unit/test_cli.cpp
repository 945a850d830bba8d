#include "support.hpp"

#include "astropretext/cli.hpp"
#include "astropretext/trainer.hpp"

#include <doctest.h>

#include <fstream>
#include <sstream>

using namespace astropretext;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    int code = 0;
    std::string out;
    std::string err;
};

Outcome run(std::vector<std::string> args) {
    args.insert(args.begin(), "astropretext");
    std::vector<const char*> argv;
    for (const auto& a : args) {
        argv.push_back(a.c_str());
    }
    std::ostringstream out, err;
    const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
    return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

// Small labeled and unlabeled datasets shared by the tests below.
struct Data {
    fs::path root;
    fs::path labeled;
    fs::path pool;
};

const Data& data() {
    static const Data d = [] {
        Data d;
        d.root = testing::scratch_dir("cli");
        d.labeled = d.root / "sg";
        d.pool = d.root / "pool";
        REQUIRE(run({"synth", "--classes", "star:130,galaxy:130", "--size", "16", "--psf", "1", "--gain", "200",
                     "--seed", "1", "--out", d.labeled.string()})
                    .code == 0);
        REQUIRE(run({"synth", "--classes", "star:60,galaxy:60", "--size", "16", "--psf", "1", "--unlabeled",
                     "--prefix", "u", "--seed", "2", "--out", d.pool.string()})
                    .code == 0);
        return d;
    }();
    return d;
}

}  // namespace

TEST_CASE("hash: git blob ids") {
    CHECK(cli::content_hash("") == "e69de29bb2d1d6434b8b29ae775ad8c2e48c5391");
    CHECK(cli::content_hash("hello\n") == "ce013625030ba8dba906f756967f9e9ca394464a");
}

TEST_CASE("cli: usage errors exit 2, help exits 0") {
    CHECK(run({}).code == cli::kExitUsage);
    CHECK(run({"--help"}).code == cli::kExitSuccess);
    CHECK(run({"frobnicate"}).code == cli::kExitUsage);
    const Outcome no_out = run({"synth", "--classes", "star:5"});
    CHECK(no_out.code == cli::kExitUsage);
    CHECK(no_out.err.find("--out") != std::string::npos);
    CHECK(run({"synth", "--out", "x"}).code == cli::kExitUsage);
    CHECK(run({"synth", "--classes", "star:5", "--out", "x", "--bogus"}).code == cli::kExitUsage);
    CHECK(run({"train", "--scheme", "nope", "--out", "x", "--data", data().labeled.string()}).code ==
          cli::kExitUsage);
}

TEST_CASE("cli: synth writes a dataset and reruns byte-identically") {
    const auto dir = testing::scratch_dir("cli-synth");
    const std::vector<std::string> args = {"synth", "--classes", "star:6,galaxy:4", "--size", "32", "--seed", "7",
                                           "--gain", "50"};
    auto a = args;
    a.insert(a.end(), {"--out", (dir / "a").string()});
    auto b = args;
    b.insert(b.end(), {"--out", (dir / "b").string()});
    REQUIRE(run(a).code == 0);
    REQUIRE(run(b).code == 0);
    CHECK(slurp(dir / "a" / "catalog.csv") == slurp(dir / "b" / "catalog.csv"));
    CHECK(load_catalog(dir / "a" / "catalog.csv", dir / "a" / "images").entries.size() == 10);
    CHECK(fs::exists(dir / "a" / "config_snapshot.json"));
    CHECK(fs::exists(dir / "a" / "dataset_manifest.json"));
}

TEST_CASE("cli: config file values, flag overrides and unknown keys") {
    const auto dir = testing::scratch_dir("cli-config");
    std::ofstream(dir / "good.json") << R"({"classes": "star:3", "image_size": 16, "seed": 4, "out": ")"
                                     << (dir / "from-file").generic_string() << "\"}";
    REQUIRE(run({"synth", "--config", (dir / "good.json").string()}).code == 0);
    CHECK(load_catalog(dir / "from-file" / "catalog.csv").entries.size() == 3);
    REQUIRE(run({"synth", "--config", (dir / "good.json").string(), "--classes", "star:5"}).code == 0);
    CHECK(load_catalog(dir / "from-file" / "catalog.csv").entries.size() == 5);
    std::ofstream(dir / "bad.json") << R"({"classes": "star:3", "colour": 1})";
    const Outcome bad = run({"synth", "--config", (dir / "bad.json").string(), "--out", (dir / "x").string()});
    CHECK(bad.code == cli::kExitUsage);
    CHECK(bad.err.find("colour") != std::string::npos);
}

TEST_CASE("cli: pretrain reports raw MAE as 30x scaled and rejects empty filters") {
    const auto out = data().root / "pretrain";
    const Outcome zero = run({"pretrain", "--data", data().labeled.string(), "--out", out.string(), "--threshold", "0"});
    CHECK(zero.code == cli::kExitFailure);
    CHECK(zero.err.find("no objects retained") != std::string::npos);

    const Outcome ok = run({"pretrain", "--data", data().pool.string(), "--out", out.string(), "--epochs", "2",
                            "--hidden", "16", "--exclude", (data().labeled / "catalog.csv").string()});
    REQUIRE(ok.code == cli::kExitSuccess);
    const RunResult r = read_run(out);
    CHECK(r.raw_mae == 30.0 * r.final_metric);
    CHECK(ok.out.find("raw") != std::string::npos);
    CHECK(read_checkpoint_info(out / "checkpoint").provenance == Pretraining::magnitudes);
    const auto snapshot = nlohmann::json::parse(slurp(out / "config_snapshot.json"));
    CHECK(snapshot["_command"] == "pretrain");
    CHECK(snapshot["_inputs"]["catalog.csv"] == cli::file_hash(data().pool / "catalog.csv"));
    CHECK(snapshot["epochs"] == 2);
}

TEST_CASE("cli: train without a checkpoint names the fix") {
    const Outcome o = run({"train", "--scheme", "finetune-magnitudes", "--data", data().labeled.string(), "--out",
                           (data().root / "runs-missing").string()});
    CHECK(o.code == cli::kExitFailure);
    CHECK(o.err.find("run pretrain first or pass --checkpoint") != std::string::npos);
}

TEST_CASE("cli: train runs, snapshot re-execution and report") {
    const auto runs = data().root / "runs";
    const Outcome o = run({"train", "--scheme", "scratch", "--data", data().labeled.string(), "--out", runs.string(),
                           "--epoch-cap", "2", "--hidden", "16", "--seeds", "0,1"});
    REQUIRE(o.code == 0);
    const auto dir = runs / "sg" / "scratch" / "full" / "1";
    REQUIRE(fs::exists(dir / "config_snapshot.json"));
    const std::string history = slurp(dir / "history.csv");

    const auto again = data().root / "rerun";
    REQUIRE(run({"train", "--config", (dir / "config_snapshot.json").string(), "--out", again.string()}).code == 0);
    CHECK(slurp(again / "sg" / "scratch" / "full" / "1" / "history.csv") == history);
    CHECK_FALSE(fs::exists(again / "sg" / "scratch" / "full" / "0"));

    const Outcome report = run({"report", runs.string()});
    CHECK(report.code == cli::kExitFailure);  // four of five columns missing
    CHECK(fs::exists(runs / "report.csv"));
    CHECK(report.out.find("INCOMPLETE") != std::string::npos);
    CHECK(run({"report", (data().root / "nowhere").string()}).code == cli::kExitFailure);
}

TEST_CASE("cli: curve fans out over the truncated schedule") {
    const auto out = data().root / "curve";
    const Outcome o = run({"curve", "--scheme", "scratch", "--data", data().labeled.string(), "--out", out.string(),
                           "--epoch-cap", "1", "--hidden", "16", "--seeds", "0", "--jobs", "2"});
    REQUIRE(o.code == 0);
    // 208 training objects: sizes 100 and 200
    for (const char* size : {"100", "200"}) {
        CHECK(fs::exists(out / "sg" / "scratch" / size / "0" / "result.json"));
        CHECK(fs::exists(out / "sg" / "scratch" / size / "0" / "config_snapshot.json"));
    }
    CHECK_FALSE(fs::exists(out / "sg" / "scratch" / "300"));
    CHECK(fs::exists(out / "sg" / "curves.png"));
    const std::string csv = slurp(out / "sg" / "curves.csv");
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);
}

TEST_CASE("cli: project writes coordinates for the validation subsample") {
    const auto ckpt = data().root / "pretrain";
    if (!fs::exists(ckpt / "checkpoint")) {
        REQUIRE(run({"pretrain", "--data", data().pool.string(), "--out", ckpt.string(), "--epochs", "1", "--hidden",
                     "16"})
                    .code == 0);
    }
    const auto out = data().root / "project";
    const Outcome o = run({"project", "--data", data().labeled.string(), "--checkpoint", ckpt.string(), "--out",
                           out.string(), "--perplexity", "5"});
    REQUIRE(o.code == 0);
    const std::string csv = slurp(out / "projection.csv");
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 27);  // header + 26 validation objects
    const Outcome small = run({"project", "--data", data().labeled.string(), "--checkpoint", ckpt.string(), "--out",
                               out.string(), "--perplexity", "50"});
    CHECK(small.code == cli::kExitUsage);
}

TEST_CASE("cli: data root from the environment") {
    ::setenv("ASTROPRETEXT_DATA", data().root.string().c_str(), 1);
    const Outcome o = run({"train", "--scheme", "scratch", "--data", "sg", "--out", (data().root / "env").string(),
                           "--epoch-cap", "1", "--hidden", "16"});
    ::unsetenv("ASTROPRETEXT_DATA");
    CHECK(o.code == 0);
    CHECK(fs::exists(data().root / "env" / "sg" / "scratch" / "full" / "0" / "result.json"));
}
