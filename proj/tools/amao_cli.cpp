#include <filesystem>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "amao/align.hpp"
#include "amao/codec.hpp"
#include "amao/error.hpp"
#include "amao/harness.hpp"
#include "amao/isa.hpp"

namespace fs = std::filesystem;
using namespace amao;

namespace {

enum Exit { kOk = 0, kUsage = 1, kData = 2, kInternal = 3 };

struct Options {
    std::optional<std::uint64_t> seed;
    std::string config_file;
    std::string out;
    std::vector<std::string> sets;
    std::string model;
    std::optional<std::size_t> per_class;
    std::string metric;
};

std::string keys_help()
{
    std::string s = "Configuration keys (--set key=value, or key = value lines in --config):\n";
    for (const auto& k : harness::config_keys())
        s += "  " + k + "  " + harness::config_help(k) + " [" + harness::get(harness::Config{}, k) + "]\n";
    return s;
}

// Built-in defaults, then the run directory's manifest, then the config
// file, then flags.
harness::Config resolve(const Options& o, const fs::path& run_dir)
{
    harness::Config c;
    if (!run_dir.empty() && fs::exists(run_dir / "manifest.json"))
        c = harness::load_manifest(run_dir);
    if (!o.config_file.empty())
        harness::apply_config_file(c, fs::path(o.config_file));
    for (const auto& kv : o.sets) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos)
            throw CLI::ValidationError("--set", "expected key=value, got '" + kv + "'");
        try {
            harness::set(c, kv.substr(0, eq), kv.substr(eq + 1));
        } catch (const DataError& e) {
            throw CLI::ValidationError("--set", e.what());
        }
    }
    if (o.seed)
        c.seed = *o.seed;
    if (o.per_class)
        c.per_class = *o.per_class;
    if (!o.metric.empty())
        c.metric = o.metric;
    if (!o.model.empty())
        c.model_path = o.model;
    harness::validate(c);
    return c;
}

int run_stage(const Options& o, const std::string& name)
{
    const fs::path dir = o.out.empty() ? fs::path("run") : fs::path(o.out);
    const auto c = resolve(o, dir);
    fs::create_directories(dir);
    for (const auto& st : harness::pipeline())
        if (st.name == name) {
            st.run(c, dir, std::cout);
            harness::write_manifest(c, dir);
            return kOk;
        }
    throw Error("no stage named " + name);
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Adversarial alignment obfuscation experiments on a toy x86 subset.\n"
                 "Stage subcommands read and write the run directory given by --out."};
    app.footer(keys_help());
    app.require_subcommand(1);
    app.fallthrough();

    Options o;
    app.add_option("--seed", o.seed, "master seed");
    app.add_option("--config", o.config_file, "flat key = value configuration file")->check(CLI::ExistingFile);
    app.add_option("--out", o.out, "run directory (run-all: parent directory, default runs)");
    app.add_option("--set", o.sets, "override one configuration key, key=value (repeatable)");

    auto* synth = app.add_subcommand("synth", "generate the synthetic corpus");
    synth->add_option("--per-class", o.per_class, "samples per class");
    app.add_subcommand("train", "train the CNN and the n-gram surrogate");
    auto* attack = app.add_subcommand("attack", "closed-loop AMAO on the test subset; random baseline; metric comparison");
    attack->add_option("--model", o.model, "CNN checkpoint (default <out>/models/cnn.bin)");
    attack->add_option("--metric", o.metric, "alignment metric")->check(CLI::IsMember({"bit", "byte_l0", "pixel_l2"}));
    auto* defend = app.add_subcommand("defend", "adversarial training and distillation matrix");
    defend->add_option("--model", o.model, "CNN checkpoint (default <out>/models/cnn.bin)");
    auto* baseline = app.add_subcommand("baseline", "comparison obfuscators on both classifiers");
    baseline->add_option("--model", o.model, "CNN checkpoint (default <out>/models/cnn.bin)");
    app.add_subcommand("stats", "insertion statistics from the AMAO traces");
    app.add_subcommand("report", "summarise the tables into summary.txt");
    auto* all = app.add_subcommand("run-all", "every stage into <out>/<timestamp>-<seed>/");
    all->add_option("--per-class", o.per_class, "samples per class");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? kOk : kUsage;
    }

    try {
        const auto* sub = app.get_subcommands().front();
        if (sub == all) {
            const auto c = resolve(o, {});
            const auto res = harness::run_experiment(c, o.out.empty() ? fs::path("runs") : fs::path(o.out), std::cout);
            std::cout << "done: " << res.dir.string() << "\n";
            return kOk;
        }
        return run_stage(o, sub->get_name());
    } catch (const CLI::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kUsage;
    } catch (const DataError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kData;
    } catch (const CodecError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kData;
    } catch (const isa::AsmError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kData;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return kInternal;
    }
}
