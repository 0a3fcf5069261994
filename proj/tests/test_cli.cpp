#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "adhdnet/cli.hpp"
#include "adhdnet/errors.hpp"

using namespace adhdnet;
namespace fs = std::filesystem;

namespace {

int run(std::vector<std::string> args) {
    args.insert(args.begin(), "adhdnet-cli");
    args.push_back("--quiet");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    return run_cli(int(argv.size()), argv.data());
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream s;
    s << in.rdbuf();
    return s.str();
}

struct Scratch {
    fs::path dir;
    explicit Scratch(const std::string& name) : dir(fs::temp_directory_path() / ("adhdnet_cli_" + name)) {
        fs::remove_all(dir);
        fs::create_directories(dir);
    }
    ~Scratch() { fs::remove_all(dir); }
    std::string operator/(const std::string& leaf) const { return (dir / leaf).string(); }
};

}  // namespace

TEST_CASE("synth writes a loadable dataset and its run config") {
    Scratch s("synth");
    REQUIRE(run({"synth", "--subjects", "20", "--seconds", "12", "--separation", "0.8", "--seed", "7", "--out",
                 s / "d"}) == 0);
    const auto data = load_dataset(s / "d/manifest.json");
    CHECK(data.recordings.size() == 20);
    CHECK(fs::exists(s / "d/run_config.json"));
    const auto cfg = RunConfig::from_json(nlohmann::json::parse(slurp(s / "d/run_config.json")));
    CHECK(cfg.seed == 7);
    CHECK(cfg.subjects == 20);
}

TEST_CASE("evaluate writes ten folds and reruns byte-identically from run_config.json") {
    Scratch s("eval");
    REQUIRE(run({"synth", "--subjects", "20", "--seconds", "12", "--seed", "3", "--out", s / "d"}) == 0);
    REQUIRE(run({"evaluate", "--data", s / "d", "--mode", "no-da", "--model", "desk", "--no-tune", "--epochs", "1",
                 "--seed", "5", "--out", s / "e1"}) == 0);
    const auto report = nlohmann::json::parse(slurp(s / "e1/report.json"));
    CHECK(report["folds"].size() == 10);
    CHECK(fs::exists(s / "e1/report.txt"));
    CHECK(fs::exists(s / "e1/weights/fold_01.adnw"));
    REQUIRE(run({"evaluate", "--config", s / "e1/run_config.json", "--out", s / "e2"}) == 0);
    CHECK(slurp(s / "e1/report.json") == slurp(s / "e2/report.json"));
}

TEST_CASE("synthetic sources, train and explain chain together") {
    Scratch s("chain");
    REQUIRE(run({"train", "--data", "synth:subjects=6,seconds=16,separation=0.9", "--model", "desk", "--epochs", "2",
                 "--seed", "1", "--out", s / "t"}) == 0);
    CHECK(fs::exists(s / "t/model.adnw"));
    CHECK(fs::exists(s / "t/model.json"));
    REQUIRE(run({"explain", "--weights", s / "t/model.adnw", "--data", "synth:subjects=6,seconds=40", "--seed", "1",
                 "--tsne-iterations", "100", "--out", s / "x"}) == 0);
    for (const char* f : {"spectra.csv", "bands.csv", "maps.csv", "maps.svg", "tsne_pool1.csv", "tsne_se2.svg"})
        CHECK_MESSAGE(fs::exists(s / ("x/" + std::string(f))), f);
}

TEST_CASE("seed falls back to ADHDNET_SEED") {
    Scratch s("env");
    ::setenv("ADHDNET_SEED", "41", 1);
    REQUIRE(run({"synth", "--subjects", "2", "--seconds", "8", "--out", s / "d"}) == 0);
    ::unsetenv("ADHDNET_SEED");
    CHECK(RunConfig::from_json(nlohmann::json::parse(slurp(s / "d/run_config.json"))).seed == 41);
}

TEST_CASE("user errors exit with 1") {
    Scratch s("errors");
    CHECK(run({"evaluate", "--bogus"}) == 1);
    CHECK(run({"frobnicate"}) == 1);
    CHECK(run({"evaluate", "--data", s / "missing", "--out", s / "o"}) == 1);
    CHECK(run({"evaluate", "--data", "synth:subjects=4,colour=blue", "--out", s / "o"}) == 1);
    CHECK(run({"synth", "--subjects", "3", "--out", s / "o"}) == 1);
    CHECK(run({"explain", "--data", "synth:subjects=2", "--out", s / "o"}) == 1);
}

TEST_CASE("the installed binary reports usage errors") {
    const std::string cmd = std::string(ADHDNET_CLI_PATH) + " evaluate --no-such-flag > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    CHECK(WEXITSTATUS(status) == 1);
}

TEST_CASE("run config JSON round-trip") {
    RunConfig c;
    c.command = "evaluate";
    c.data = "synth:subjects=8";
    c.seed = 9;
    c.model = nlohmann::json{{"preset", "desk"}, {"se_ratio", 2}};
    c.combos = nlohmann::json::array({1, 2});
    c.protocol.folds = 4;
    CHECK(RunConfig::from_json(c.to_json()).to_json() == c.to_json());
    CHECK(resolve_model(c.model).se_ratio == 2);
    CHECK(resolve_model("desk").temporal_filters == 8);
    CHECK_THROWS_AS(resolve_model("huge"), ArgumentError);
    CHECK(parse_synth_spec("synth:subjects=8,seconds=30,separation=0.5", 1).subjects_per_class == 4);
}
