#include "doctest.h"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <sys/wait.h>

namespace fs = std::filesystem;

namespace {

int run(const std::string& args)
{
    const std::string cmd = std::string(AMAO_CLI) + " " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

fs::path scratch(const std::string& name)
{
    const auto p = fs::temp_directory_path() / ("amao_cli_" + name);
    fs::remove_all(p);
    return p;
}

} // namespace

TEST_CASE("help and usage errors")
{
    CHECK(run("--help") == 0);
    CHECK(run("attack --help") == 0);
    CHECK(run("") == 1);
    CHECK(run("frobnicate") == 1);
    CHECK(run("synth --no-such-flag") == 1);
    CHECK(run("--set no.such.key=1 synth") == 1);
    CHECK(run("--set seed synth") == 1);
}

TEST_CASE("data errors")
{
    const auto dir = scratch("data");
    // No corpus, then a corpus but no trained model.
    CHECK(run("attack --out " + dir.string()) == 2);
    CHECK(run("--set per_class=4 synth --out " + dir.string()) == 0);
    CHECK(fs::exists(dir / "corpus" / "corpus.jsonl"));
    CHECK(run("attack --out " + dir.string()) == 2);
    CHECK(run("attack --model " + (dir / "missing.bin").string() + " --out " + dir.string()) == 2);

    const auto cfg = dir / "bad.cfg";
    std::ofstream(cfg) << "cnn.epochs = lots\n";
    CHECK(run("--config " + cfg.string() + " synth --out " + dir.string()) == 2);
}

TEST_CASE("stages chain through the run directory")
{
    const auto dir = scratch("stages");
    const std::string common = " --out " + dir.string();
    CHECK(run("--set per_class=6 --set cnn.epochs=1 --set attack_per_class=1 --set attack.max_loops=1 "
              "--set random_seeds=2 --set adv_per_class=1 synth" + common) == 0);
    // Later stages pick the settings up from the manifest.
    CHECK(run("train" + common) == 0);
    CHECK(run("attack" + common) == 0);
    CHECK(run("stats" + common) == 0);
    CHECK(run("baseline" + common) == 0);
    CHECK(run("report" + common) == 0);
    CHECK(fs::exists(dir / "tables" / "table1.csv"));
    CHECK(fs::exists(dir / "tables" / "table3.csv"));
    CHECK(fs::exists(dir / "summary.txt"));
}
