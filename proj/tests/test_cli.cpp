// CLI contract suite: determinism across invocations, exit codes, output
// container layout, and the export formats. Runs the dispatcher in-process.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstring>
#include <filesystem>
#include <fstream>

#include "dmg/cli.hpp"
#include "dmg/data.hpp"
#include "dmg/svg.hpp"

using namespace dmg;
namespace fs = std::filesystem;

namespace {

int run_cli(std::vector<std::string> args) {
    std::vector<char*> argv;
    args.insert(args.begin(), "dmg");
    for (auto& a : args) argv.push_back(a.data());
    return cli_main(static_cast<int>(argv.size()), argv.data());
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

} // namespace

TEST_CASE("gen-data: identical seeds give identical manifests; files validate") {
    fs::path dir = fs::temp_directory_path() / "dmg_cli_gen";
    fs::remove_all(dir);
    CHECK(run_cli({"gen-data", "--out", (dir / "a").string(), "--seed", "7", "--train", "56",
                   "--test", "14", "--heldout", "4"}) == 0);
    CHECK(run_cli({"gen-data", "--out", (dir / "b").string(), "--seed", "7", "--train", "56",
                   "--test", "14", "--heldout", "4"}) == 0);
    CHECK(manifest_fingerprint((dir / "a").string()) == manifest_fingerprint((dir / "b").string()));
    CHECK(slurp(dir / "a" / "train.dmg1") == slurp(dir / "b" / "train.dmg1"));
    Dataset ds = load_dataset((dir / "a").string());
    CHECK(ds.train.size() == 56);
    fs::remove_all(dir);
}

TEST_CASE("exit codes: usage errors 2, missing inputs 3, domain errors 1") {
    CHECK(run_cli({"no-such-subcommand"}) == 2);
    CHECK(run_cli({"gen-data", "--no-such-flag"}) == 2);
    CHECK(run_cli({"sample", "--data", "/absent", "--vae", "/absent", "--eval", "/absent",
                   "--diffusion", "/absent", "--texts", "straight"}) == 3);
    fs::path dir = fs::temp_directory_path() / "dmg_cli_err";
    fs::remove_all(dir);
    // bad held-out pair -> domain error
    CHECK(run_cli({"gen-data", "--out", dir.string(), "--seed", "1", "--heldout-pairs",
                   "circle:swim,zigzag:wave_left"}) == 1);
    fs::remove_all(dir);
}

TEST_CASE("export: CSV always, SVG on demand, input untouched") {
    fs::path dir = fs::temp_directory_path() / "dmg_cli_export";
    fs::remove_all(dir);
    fs::create_directories(dir);
    Rng rng(3);
    std::vector<Array<f32>> motions;
    motions.push_back(compose_pair(synth_concept_motion(sample_concept("circle", rng), 64),
                                   synth_concept_motion(sample_concept("wave_left", rng), 64)));
    fs::path in = dir / "in.dmg1";
    write_dmg1(in.string(), motions);
    std::string before = slurp(in);

    CHECK(run_cli({"export", "--in", in.string(), "--out", (dir / "render").string(), "--svg"}) ==
          0);
    CHECK(fs::exists(dir / "render" / "motion_000.csv"));
    CHECK(fs::exists(dir / "render" / "motion_000.svg"));
    std::string csv = slurp(dir / "render" / "motion_000.csv");
    CHECK(csv.rfind("frame,root_x,root_y", 0) == 0);
    // 64 data rows + header
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 65);
    std::string svg = slurp(dir / "render" / "motion_000.svg");
    CHECK(svg.find("<svg") != std::string::npos);
    CHECK(svg.find("polyline") != std::string::npos);
    CHECK(slurp(in) == before); // inputs never mutated
    fs::remove_all(dir);
}

TEST_CASE("config file values apply but flags win") {
    fs::path dir = fs::temp_directory_path() / "dmg_cli_cfg";
    fs::remove_all(dir);
    fs::create_directories(dir);
    {
        std::ofstream f(dir / "conf.ini");
        f << "[gen-data]\nseed=9\ntrain=40\ntest=14\nheldout=4\nout=" << (dir / "c").string()
          << "\n";
    }
    CHECK(run_cli({"--config", (dir / "conf.ini").string(), "gen-data"}) == 0);
    Dataset ds = load_dataset((dir / "c").string());
    CHECK(ds.train.size() == 40);
    CHECK(ds.config.seed == 9);
    // flag overrides the config value
    CHECK(run_cli({"--config", (dir / "conf.ini").string(), "gen-data", "--train", "28", "--out",
                   (dir / "d").string()}) == 0);
    Dataset ds2 = load_dataset((dir / "d").string());
    CHECK(ds2.train.size() == 28);
    CHECK(ds2.config.seed == 9);
    fs::remove_all(dir);
}
