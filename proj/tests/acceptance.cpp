// Acceptance runner: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails. Criteria 5-12 and 14 are read from two full seed-7 runs
// written under the directory given as the first argument (default
// ./acceptance_runs). --properties-only runs 1-4 and 13 and exits non-zero,
// since the remaining criteria were not checked.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "amao/align.hpp"
#include "amao/baselines.hpp"
#include "amao/codec.hpp"
#include "amao/corpus.hpp"
#include "amao/harness.hpp"
#include "amao/heuristics.hpp"
#include "amao/progen.hpp"
#include "oracles.hpp"

using namespace amao;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

int failures = 0;

void report(int id, const std::string& name, const Outcome& o)
{
    std::printf("criterion %2d %-34s %s  %s\n", id, name.c_str(), o.pass ? "PASS" : "FAIL", o.detail.c_str());
    std::fflush(stdout);
    failures += !o.pass;
}

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, double a, double b = 0, double c = 0, double d = 0, double e = 0)
{
    char buf[256];
    std::snprintf(buf, sizeof buf, f, a, b, c, d, e);
    return buf;
}

// ---------------------------------------------------------------------------

Outcome dp_optimality()
{
    const auto t0 = Clock::now();
    std::mt19937_64 rng(2024);
    std::size_t exact = 0, total = 0;
    double worst_rel = 0.0;
    for (int t = 0; t < 500; ++t) {
        const auto metric = static_cast<align::Metric>(t % 3);
        const auto p = oracle::random_align_instance(rng, metric);
        const auto dp = align::align(p);
        const auto bf = align::brute_force_align(p, p.target.size() - p.original.text.size());
        ++total;
        if (metric == align::Metric::pixel_l2) {
            const double rel = std::abs(dp.trace.total_cost - bf.cost) / std::max(1.0, std::abs(bf.cost));
            worst_rel = std::max(worst_rel, rel);
            exact += rel <= 1e-9;
        } else {
            exact += dp.trace.raw_cost == bf.raw_cost;
        }
    }
    const double secs = seconds_since(t0);
    return {exact == total && secs < 120.0,
            fmt("%.0f/%.0f optimal, worst pixel_l2 rel err %.1e, %.1f s", double(exact), double(total), worst_rel, secs)};
}

Outcome functionality()
{
    const auto t0 = Clock::now();
    std::mt19937_64 rng(31337);
    const auto vocab = isa::default_vocabulary();
    std::size_t checked = 0, bad = 0, reordered = 0;
    std::vector<heur::TraceRecord> traces;
    const auto same = [&](const isa::ByteProgram& a, ByteView b) {
        ++checked;
        const bool ok = isa::equivalent(isa::execute(a, isa::default_inputs()), isa::execute(b, isa::default_inputs()));
        bad += !ok;
    };
    // Half straight random programs, half multi-subroutine family programs so
    // that subroutine reordering has something to move.
    const auto templates = default_templates();
    std::vector<isa::ByteProgram> progs;
    for (int t = 0; t < 1000; ++t)
        progs.push_back(t % 2 ? progen::random_program(rng) : synth_program(templates[(t / 2) % templates.size()], rng));

    for (std::size_t t = 0; t < progs.size(); ++t) {
        const auto& prog = progs[t];
        const std::size_t m = prog.text.size();
        const auto n = static_cast<std::size_t>(std::ceil(1.25 * static_cast<double>(m)));
        // A random target standing in for an adversarial byte string.
        Bytes target(n);
        for (auto& b : target)
            b = rng() % 2 ? prog.text[rng() % m] : static_cast<std::uint8_t>(rng());
        try {
            const auto al = align::align(align::make_problem(target, prog, vocab, align::Metric::pixel_l2));
            const auto out = align::apply_trace(prog, al.trace, vocab);
            same(prog, out.text);
            traces.push_back({al.trace, 0, isa::find_insertion_points(prog, std::max<std::size_t>(1, isa::max_length(vocab)))});
        } catch (const align::AlignError& e) {
            if (e.code() != align::AlignErrc::DisplacementOverflow)
                throw;
        }
        const baselines::Budget b{1.25, t};
        same(prog, baselines::random_nop_insert(prog, vocab, b).text);
        same(prog, baselines::instruction_substitute(prog, {1.0, false, true}, b).text);
        same(prog, baselines::instruction_substitute(prog, {1.0, true, false}, b).text);
        same(prog, baselines::mix_control_flow(prog, b).text);
        same(prog, baselines::payload_append(prog.text, Bytes(n - m, 0xCC), b));
        bool reorderable = true;
        try {
            baselines::subroutine_starts(prog);
        } catch (const DataError&) {
            reorderable = false;
        }
        if (reorderable) {
            same(prog, baselines::subroutine_reorder(prog, t).text);
            ++reordered;
        }
    }
    const auto stats = heur::collect_stats(traces, vocab);
    for (std::size_t t = 0; t < progs.size(); ++t)
        same(progs[t], heur::heuristic_insert(progs[t], stats, 0, vocab, {1.25, t}).text);
    const double secs = seconds_since(t0);
    return {bad == 0 && secs < 300.0,
            fmt("%.0f/%.0f equivalent over 1000 programs (%.0f reorderable), %.1f s", double(checked - bad),
                double(checked), double(reordered), secs)};
}

Outcome codec_identity()
{
    std::mt19937_64 rng(7);
    std::size_t ok = 0;
    for (int t = 0; t < 10000; ++t) {
        Bytes d(1 + rng() % 4096);
        for (auto& b : d)
            b = static_cast<std::uint8_t>(rng());
        const auto policy = t % 2 ? WidthPolicy::default_table() : WidthPolicy::fixed(1 + rng() % 256);
        ok += image_to_bytes(bytes_to_image(d, policy)) == d;
    }
    return {ok == 10000, fmt("%.0f/10000 bit-exact", double(ok))};
}

Outcome gradients()
{
    std::mt19937_64 rng(4);
    double worst = 0.0;
    std::size_t checked = 0;
    for (int k = 0; k < 20; ++k) {
        nn::CnnShape shape;
        shape.classes = 8;
        const auto m = nn::TinyCnn::init(shape, 100 + k);
        const auto x = oracle::random_canvas(shape.input_side, rng);
        const auto r = oracle::finite_difference_check(m, x, k % 8, 100, rng);
        worst = std::max(worst, r.max_rel_error);
        checked += r.checked;
    }
    return {worst <= 1e-4, fmt("%.0f coordinates, worst relative error %.2e", double(checked), worst)};
}

Outcome linf_regression()
{
    const Bytes target{0x90, 0x00};
    const int one = align::linf_distance(target, Bytes{0x90, 0x90});
    const int two = align::linf_distance(target, Bytes{0x90, 0x90, 0x85, 0x85});
    char buf[64];
    std::snprintf(buf, sizeof buf, "L-inf 0x%02x vs 0x%02x", one, two);
    return {one == 0x90 && two == 0x90, buf};
}

// ---------------------------------------------------------------------------
// Table lookups

using Table = std::vector<std::vector<std::string>>;

// Accuracy in points from the first row whose leading cells equal `key`.
double points(const Table& t, const std::vector<std::string>& key, std::size_t col)
{
    for (std::size_t i = 1; i < t.size(); ++i) {
        bool match = t[i].size() > col;
        for (std::size_t k = 0; match && k < key.size(); ++k)
            match = t[i][k] == key[k];
        if (match)
            return 100.0 * std::stod(t[i][col]);
    }
    throw std::runtime_error("row not found");
}

std::string slurp(const fs::path& p)
{
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

} // namespace

int main(int argc, char** argv)
{
    const bool properties_only = argc > 1 && std::string(argv[1]) == "--properties-only";
    const fs::path root = argc > 1 && !properties_only ? fs::path(argv[1]) : fs::path("acceptance_runs");

    report(1, "dp optimality", dp_optimality());
    report(2, "functionality preservation", functionality());
    report(3, "codec identity", codec_identity());
    report(4, "gradient correctness", gradients());

    if (properties_only) {
        report(13, "L-inf degeneracy", linf_regression());
        std::printf("criteria 5-12 and 14 not run\n");
        return 1;
    }

    harness::Config cfg;
    cfg.seed = 7;
    fs::remove_all(root);
    std::ostringstream log1, log2;
    auto t0 = Clock::now();
    harness::RunResult a, b;
    try {
        a = harness::run_experiment(cfg, root, log1);
    } catch (const std::exception& e) {
        std::printf("run-all failed: %s\n%s", e.what(), log1.str().c_str());
        return 1;
    }
    const double run_secs = seconds_since(t0);
    std::ofstream(root / "run1.log") << log1.str();

    const auto dir = a.dir / "tables";
    const auto clean = harness::read_csv(dir / "clean.csv");
    const auto t1 = harness::read_csv(dir / "table1.csv");
    const auto t2 = harness::read_csv(dir / "table2.csv");
    const auto t3 = harness::read_csv(dir / "table3.csv");
    const auto mt = harness::read_csv(dir / "metrics.csv");

    {
        const double test = points(clean, {"cnn", "test"}, 2);
        const double amao = points(t1, {"cnn", "amao_f"}, 2);
        report(5, "white-box evasion", {test >= 85.0 && amao <= 5.0 && run_secs < 1800.0,
                                        fmt("clean test %.2f%%, AMAO_f %.2f%%, full run %.0f s", test, amao, run_secs)});
    }
    {
        const double amao = points(t1, {"cnn", "amao_f"}, 2);
        const double rmin = points(t1, {"cnn", "random_min"}, 2);
        const double rmax = points(t1, {"cnn", "random_max"}, 2);
        report(6, "AMAO vs random", {amao <= rmin - 10.0, fmt("AMAO_f %.2f%%, random %.2f-%.2f%%", amao, rmin, rmax)});
    }
    {
        const double one = points(t1, {"cnn", "amao_1"}, 2);
        const double fin = points(t1, {"cnn", "amao_f"}, 2);
        report(7, "one loop vs full", {one > fin, fmt("AMAO_1 %.2f%%, AMAO_f %.2f%%", one, fin)});
    }
    {
        const double none = points(t1, {"surrogate", "none"}, 2);
        const double amao = points(t1, {"surrogate", "amao_f"}, 2);
        report(8, "black-box transfer", {none >= 90.0 && amao <= none - 30.0,
                                         fmt("surrogate clean %.2f%%, transferred AMAO %.2f%%", none, amao)});
    }
    {
        const double amao0 = points(t2, {"cnn", "none", "amao"}, 3);
        const double amaoA = points(t2, {"cnn", "adversarial_training", "amao"}, 3);
        const double amaoD = points(t2, {"cnn", "distillation", "amao"}, 3);
        const double true0 = points(t2, {"cnn", "none", "true"}, 3);
        const double trueA = points(t2, {"cnn", "adversarial_training", "true"}, 3);
        const double trueD = points(t2, {"cnn", "distillation", "true"}, 3);
        const bool ok = std::abs(amaoA - amao0) <= 10.0 && std::abs(amaoD - amao0) <= 10.0 &&
                        std::abs(trueA - true0) <= 3.0 && std::abs(trueD - true0) <= 3.0;
        report(9, "defense insensitivity",
               {ok, fmt("AMAO %.2f/%.2f/%.2f%%, clean %.2f/%.2f", amao0, amaoA, amaoD, true0, trueA) +
                        fmt("/%.2f%% (none/adv/distilled)", trueD)});
    }
    {
        const double none = points(t3, {"none", "cnn"}, 2);
        const double pay = points(t3, {"payload_append", "cnn"}, 2);
        report(10, "payload weakness", {std::abs(pay - none) < 5.0, fmt("clean %.2f%%, payload %.2f%%", none, pay)});
    }
    {
        const double none = points(t3, {"none", "surrogate"}, 2);
        const double isub = points(t3, {"instruction_substitution", "surrogate"}, 2);
        const double reo = points(t3, {"subroutine_reorder", "surrogate"}, 2);
        const double rnd = points(t3, {"random_insertion", "surrogate"}, 2);
        const double mix = points(t3, {"control_flow_mixing", "surrogate"}, 2);
        const double amao = points(t3, {"amao", "surrogate"}, 2);
        const double top = std::min({none, isub, reo});
        const bool close = std::max({none, isub, reo}) - top <= 5.0;
        const bool ok = close && top > rnd && rnd > mix && mix > amao && amao <= 5.0;
        report(11, "obfuscation ordering",
               {ok, fmt("none %.2f isub %.2f reorder %.2f random %.2f mix %.2f", none, isub, reo, rnd, mix) +
                        fmt(" amao %.2f (%%)", amao)});
    }
    {
        const double l2 = points(mt, {"pixel_l2"}, 1);
        const double l0 = points(mt, {"byte_l0"}, 1);
        report(12, "metric comparison", {l2 >= l0, fmt("evasion pixel_l2 %.2f%%, byte_l0 %.2f%%", l2, l0)});
    }
    report(13, "L-inf degeneracy", linf_regression());

    try {
        b = harness::run_experiment(cfg, root, log2);
    } catch (const std::exception& e) {
        report(14, "determinism", {false, std::string("second run failed: ") + e.what()});
        return 1;
    }
    std::ofstream(root / "run2.log") << log2.str();
    {
        std::size_t files = 0, same = 0;
        for (const auto& e : fs::directory_iterator(dir)) {
            ++files;
            const auto other = b.dir / "tables" / e.path().filename();
            same += fs::exists(other) && slurp(e.path()) == slurp(other);
        }
        std::size_t files_b = 0;
        for ([[maybe_unused]] const auto& e : fs::directory_iterator(b.dir / "tables"))
            ++files_b;
        report(14, "determinism", {files > 0 && same == files && files_b == files,
                                   fmt("%.0f/%.0f CSV tables byte-identical", double(same), double(files))});
    }

    std::printf("%d of 14 criteria failed\n", failures);
    return failures ? 1 : 0;
}
