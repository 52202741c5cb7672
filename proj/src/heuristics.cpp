#include "amao/heuristics.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>
#include <ostream>
#include <random>
#include <set>

#include "amao/error.hpp"

namespace amao::heur {

bool InsertionStats::has_class(int label) const
{
    return std::any_of(slots.begin(), slots.end(), [&](const auto& kv) { return kv.first.first == label; });
}

double InsertionStats::frequency(std::size_t nop, int label, std::size_t bucket) const
{
    const auto s = slots.find({label, bucket});
    if (s == slots.end() || s->second == 0)
        return 0.0;
    const auto m = mass.find({nop, label, bucket});
    return m == mass.end() ? 0.0 : m->second / static_cast<double>(s->second);
}

std::size_t bucket_of(std::size_t position, std::size_t total)
{
    if (total == 0)
        return 0;
    return std::min(kBuckets - 1, position * kBuckets / total);
}

InsertionStats collect_stats(std::span<const TraceRecord> traces, const isa::Vocabulary& vocab)
{
    InsertionStats s;
    for (const auto& n : vocab)
        s.nops.push_back(n.name);
    for (const auto& rec : traces) {
        const std::size_t nb = rec.boundaries.size();
        std::map<std::size_t, std::vector<std::size_t>> at; // boundary -> nops
        for (const auto& d : rec.trace.decisions)
            if (d.kind == align::Decision::Kind::Insert) {
                if (d.nop >= vocab.size())
                    throw DataError("collect_stats: nop index out of range");
                at[d.boundary].push_back(d.nop);
            }
        for (std::size_t p = 0; p < nb; ++p) {
            const std::size_t bucket = bucket_of(p, nb);
            ++s.slots[{rec.label, bucket}];
            const auto it = at.find(rec.boundaries[p]);
            if (it == at.end())
                continue;
            const double share = 1.0 / static_cast<double>(it->second.size());
            for (auto v : it->second) {
                s.mass[{v, rec.label, bucket}] += share;
                ++s.count[{v, rec.label, bucket}];
                ++s.raw[{v, rec.label, rec.boundaries[p]}];
            }
        }
        for (const auto& [boundary, nops] : at)
            if (!std::binary_search(rec.boundaries.begin(), rec.boundaries.end(), boundary))
                throw DataError("collect_stats: insertion at a boundary outside the legal list");
    }
    return s;
}

namespace {

std::set<int> classes_of(const InsertionStats& s)
{
    std::set<int> out;
    for (const auto& [k, n] : s.slots)
        out.insert(k.first);
    return out;
}

template <class T>
T lookup(const std::map<std::tuple<std::size_t, int, std::size_t>, T>& m, std::size_t v, int c, std::size_t b)
{
    const auto it = m.find({v, c, b});
    return it == m.end() ? T{} : it->second;
}

void header(std::ostream& out) { out << "nop,class,bucket,frequency,count\n"; }

std::string fmt(double x)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", x);
    return buf;
}

} // namespace

void write_joint_csv(const InsertionStats& s, std::ostream& out)
{
    header(out);
    for (int c : classes_of(s))
        for (std::size_t v = 0; v < s.nops.size(); ++v)
            for (std::size_t b = 0; b < kBuckets; ++b)
                if (s.slots.count({c, b}))
                    out << s.nops[v] << ',' << c << ',' << b << ',' << fmt(s.frequency(v, c, b)) << ','
                        << lookup(s.count, v, c, b) << '\n';
}

void write_by_class_csv(const InsertionStats& s, std::ostream& out)
{
    header(out);
    for (int c : classes_of(s))
        for (std::size_t b = 0; b < kBuckets; ++b) {
            if (!s.slots.count({c, b}))
                continue;
            double f = 0.0;
            std::size_t n = 0;
            for (std::size_t v = 0; v < s.nops.size(); ++v) {
                f += s.frequency(v, c, b);
                n += lookup(s.count, v, c, b);
            }
            out << "*," << c << ',' << b << ',' << fmt(f) << ',' << n << '\n';
        }
}

void write_by_nop_csv(const InsertionStats& s, std::ostream& out)
{
    header(out);
    const auto cls = classes_of(s);
    for (std::size_t v = 0; v < s.nops.size(); ++v)
        for (std::size_t b = 0; b < kBuckets; ++b) {
            double m = 0.0;
            std::size_t slots = 0, n = 0;
            for (int c : cls) {
                const auto it = s.slots.find({c, b});
                if (it == s.slots.end())
                    continue;
                slots += it->second;
                m += lookup(s.mass, v, c, b);
                n += lookup(s.count, v, c, b);
            }
            if (slots)
                out << s.nops[v] << ",*," << b << ',' << fmt(m / static_cast<double>(slots)) << ',' << n << '\n';
        }
}

void write_raw_csv(const InsertionStats& s, std::ostream& out)
{
    out << "nop,class,index,count\n";
    for (const auto& [k, n] : s.raw)
        out << s.nops.at(std::get<0>(k)) << ',' << std::get<1>(k) << ',' << std::get<2>(k) << ',' << n << '\n';
}

isa::ByteProgram heuristic_insert(const isa::ByteProgram& prog, const InsertionStats& stats, int label,
                                  const isa::Vocabulary& vocab, const baselines::Budget& b)
{
    if (!stats.has_class(label))
        throw DataError("heuristic_insert: no statistics for class " + std::to_string(label));
    if (stats.nops.size() != vocab.size())
        throw DataError("heuristic_insert: statistics were collected with a different vocabulary");
    const std::size_t m = prog.text.size();
    const std::size_t room = baselines::size_limit(m, b) - m;
    const auto points = isa::find_insertion_points(prog, room);
    std::mt19937_64 rng(b.seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);

    std::vector<std::vector<std::size_t>> inserts(points.size());
    std::size_t used = 0;
    // Sweep the boundaries in random order, each time inserting with the
    // bucket's recorded frequency, until nothing fits or a sweep adds nothing.
    std::vector<std::size_t> order(points.size());
    std::iota(order.begin(), order.end(), 0);
    for (int sweep = 0; sweep < 64; ++sweep) {
        std::shuffle(order.begin(), order.end(), rng);
        bool added = false, fits_any = false;
        for (auto p : order) {
            const std::size_t bucket = bucket_of(p, points.size());
            std::vector<double> w(vocab.size());
            double total = 0.0;
            for (std::size_t v = 0; v < vocab.size(); ++v) {
                if (used + vocab[v].length() > room)
                    continue;
                fits_any = true;
                w[v] = stats.frequency(v, label, bucket);
                total += w[v];
            }
            if (total <= 0.0 || u(rng) >= total)
                continue;
            const std::size_t v = std::discrete_distribution<std::size_t>(w.begin(), w.end())(rng);
            inserts[p].push_back(v);
            used += vocab[v].length();
            added = true;
        }
        if (!added || !fits_any)
            break;
    }

    return align::apply_trace(prog, baselines::insertion_trace(prog, points, inserts, vocab), vocab);
}

} // namespace amao::heur
