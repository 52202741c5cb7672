#include "amao/align.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>

namespace amao::align {

std::string_view metric_name(Metric m)
{
    switch (m) {
    case Metric::bit: return "bit";
    case Metric::byte_l0: return "byte_l0";
    case Metric::pixel_l2: return "pixel_l2";
    }
    return "?";
}

Metric parse_metric(std::string_view name)
{
    if (name == "bit")
        return Metric::bit;
    if (name == "byte_l0" || name == "l0")
        return Metric::byte_l0;
    if (name == "pixel_l2" || name == "l2")
        return Metric::pixel_l2;
    throw DataError("unknown metric '" + std::string(name) + "'");
}

Bytes front_pad(ByteView s, std::size_t n)
{
    Bytes out(n > s.size() ? n - s.size() : 0, 0);
    out.insert(out.end(), s.begin(), s.end());
    return out;
}

namespace {

inline std::int64_t byte_cost(std::uint8_t a, std::uint8_t b, Metric m)
{
    switch (m) {
    case Metric::bit: return std::popcount(static_cast<unsigned>(a ^ b));
    case Metric::byte_l0: return a != b;
    case Metric::pixel_l2: {
        const int d = int(a) - int(b);
        return d * d;
    }
    }
    return 0;
}

// Cost of placing `piece` at target positions [begin, begin + size).
inline std::int64_t piece_cost(const Bytes& target, std::size_t begin, ByteView piece, Metric m)
{
    std::int64_t c = 0;
    for (std::size_t i = 0; i < piece.size(); ++i)
        c += byte_cost(target[begin + i], piece[i], m);
    return c;
}

} // namespace

std::int64_t raw_cost(ByteView a, ByteView b, Metric m)
{
    if (a.size() != b.size())
        throw DataError("raw_cost needs equal lengths");
    std::int64_t c = 0;
    for (std::size_t i = 0; i < a.size(); ++i)
        c += byte_cost(a[i], b[i], m);
    return c;
}

double finalize_cost(std::int64_t raw, Metric m)
{
    return m == Metric::pixel_l2 ? std::sqrt(static_cast<double>(raw)) : static_cast<double>(raw);
}

double distance(ByteView a, ByteView b, Metric m)
{
    const std::size_t n = std::max(a.size(), b.size());
    return finalize_cost(raw_cost(front_pad(a, n), front_pad(b, n), m), m);
}

int linf_distance(ByteView a, ByteView b)
{
    const std::size_t n = std::max(a.size(), b.size());
    const auto pa = front_pad(a, n), pb = front_pad(b, n);
    int worst = 0;
    for (std::size_t i = 0; i < n; ++i)
        worst = std::max(worst, std::abs(int(pa[i]) - int(pb[i])));
    return worst;
}

std::size_t AlignmentTrace::insert_count() const
{
    return static_cast<std::size_t>(
        std::count_if(decisions.begin(), decisions.end(), [](const Decision& d) { return d.kind == Decision::Kind::Insert; }));
}

AlignmentProblem make_problem(Bytes target, isa::ByteProgram original, isa::Vocabulary vocab, Metric metric)
{
    AlignmentProblem p;
    p.boundaries = isa::find_insertion_points(original, std::max<std::size_t>(1, isa::max_length(vocab)));
    p.target = std::move(target);
    p.original = std::move(original);
    p.vocab = std::move(vocab);
    p.metric = metric;
    return p;
}

namespace {

struct Prepared {
    std::size_t n = 0, m = 0, K = 0;
    std::vector<std::size_t> unit_len;
    std::vector<std::size_t> prefix; // prefix[k] = bytes of units 0..k-1
    std::vector<char> legal;
};

Prepared prepare(const AlignmentProblem& p)
{
    Prepared pr;
    pr.n = p.target.size();
    pr.m = p.original.text.size();
    pr.K = p.original.size();
    if (pr.n < pr.m)
        throw AlignError(AlignErrc::TargetShorter, "target shorter than original");
    pr.prefix.assign(pr.K + 1, 0);
    for (std::size_t k = 0; k < pr.K; ++k) {
        pr.unit_len.push_back(p.original.instructions[k].encoding.size());
        pr.prefix[k + 1] = pr.prefix[k] + pr.unit_len[k];
    }
    pr.legal.assign(pr.K + 1, 0);
    for (auto b : p.boundaries) {
        if (b > pr.K)
            throw AlignError(AlignErrc::InvalidTrace, "insertion point out of range");
        pr.legal[b] = 1;
    }
    for (const auto& nop : p.vocab)
        if (nop.encoding.empty())
            throw AlignError(AlignErrc::InvalidTrace, "empty semantic nop '" + nop.name + "'");
    return pr;
}

inline void fill_cell(const AlignmentProblem& p, const Prepared& pr, DPTable& t, std::size_t r, std::size_t k)
{
    const std::size_t idx = r * t.cols + k;
    // Suffix from k needs at least prefix[K]-prefix[k] bytes and must leave room
    // for the units before it.
    if (r < pr.prefix[pr.K] - pr.prefix[k] || r + pr.prefix[k] > pr.n) {
        t.cost[idx] = DPTable::kInf;
        t.back[idx] = DPTable::kNone;
        return;
    }
    if (k == pr.K && r == 0) {
        t.cost[idx] = 0;
        t.back[idx] = DPTable::kNone;
        return;
    }
    const std::size_t begin_of = pr.n - r; // target position of this suffix's first byte
    std::int64_t best = DPTable::kInf;
    std::int32_t choice = DPTable::kNone;
    if (k < pr.K && r >= pr.unit_len[k]) {
        const auto prev = t.cost[(r - pr.unit_len[k]) * t.cols + (k + 1)];
        if (prev < DPTable::kInf) {
            best = prev + piece_cost(p.target, begin_of, p.original.instructions[k].encoding, p.metric);
            choice = DPTable::kMatch;
        }
    }
    if (pr.legal[k]) {
        for (std::size_t c = 0; c < p.vocab.size(); ++c) {
            const auto& enc = p.vocab[c].encoding;
            if (r < enc.size())
                continue;
            const auto prev = t.cost[(r - enc.size()) * t.cols + k];
            if (prev >= DPTable::kInf)
                continue;
            const auto cand = prev + piece_cost(p.target, begin_of, enc, p.metric);
            if (cand < best) {
                best = cand;
                choice = static_cast<std::int32_t>(c);
            }
        }
    }
    t.cost[idx] = best;
    t.back[idx] = choice;
}

AlignmentTrace trace_back(const AlignmentProblem& p, const Prepared& pr, const DPTable& t)
{
    // Exact length first, then shorter outputs with front padding.
    std::size_t best_r = pr.n;
    std::int64_t best = DPTable::kInf;
    std::int64_t pad = 0; // cost of target[0 .. n-r) against zeros
    std::vector<std::int64_t> pad_cost(pr.n + 1, 0);
    for (std::size_t i = 0; i < pr.n; ++i) {
        pad += byte_cost(p.target[i], 0, p.metric);
        pad_cost[i + 1] = pad;
    }
    for (std::size_t r = pr.n + 1; r-- > pr.m;) {
        const auto c = t.at(r, 0);
        if (c >= DPTable::kInf)
            continue;
        const auto total = c + pad_cost[pr.n - r];
        if (total < best) {
            best = total;
            best_r = r;
        }
    }
    if (best >= DPTable::kInf)
        throw AlignError(AlignErrc::InvalidTrace, "no alignment reaches the target");

    AlignmentTrace trace;
    trace.raw_cost = best;
    trace.total_cost = finalize_cost(best, p.metric);
    trace.achieved_length = best_r;
    std::size_t r = best_r, k = 0;
    while (!(k == pr.K && r == 0)) {
        const auto ch = t.choice(r, k);
        if (ch == DPTable::kMatch) {
            trace.decisions.push_back(Decision::match(k));
            r -= pr.unit_len[k];
            ++k;
        } else if (ch >= 0) {
            trace.decisions.push_back(Decision::insert(static_cast<std::size_t>(ch), k));
            r -= p.vocab[static_cast<std::size_t>(ch)].length();
        } else {
            throw AlignError(AlignErrc::InvalidTrace, "broken backpointer chain");
        }
    }
    return trace;
}

DPTable new_table(const Prepared& pr)
{
    DPTable t;
    t.rows = pr.n + 1;
    t.cols = pr.K + 1;
    t.cost.assign(t.rows * t.cols, DPTable::kInf);
    t.back.assign(t.rows * t.cols, DPTable::kNone);
    return t;
}

} // namespace

Alignment align_serial(const AlignmentProblem& p)
{
    const auto pr = prepare(p);
    Alignment out;
    out.table = new_table(pr);
    for (std::size_t r = 0; r <= pr.n; ++r)
        for (std::size_t k = 0; k <= pr.K; ++k)
            fill_cell(p, pr, out.table, r, k);
    out.trace = trace_back(p, pr, out.table);
    return out;
}

Alignment align(const AlignmentProblem& p)
{
    const auto pr = prepare(p);
    Alignment out;
    out.table = new_table(pr);
    auto& table = out.table;
    const auto cols = static_cast<std::ptrdiff_t>(table.cols);
    // Every cell of row r reads only rows < r, so a row is embarrassingly parallel.
    for (std::size_t r = 0; r <= pr.n; ++r) {
#pragma omp parallel for schedule(static) if (cols > 512)
        for (std::ptrdiff_t k = 0; k < cols; ++k)
            fill_cell(p, pr, table, r, static_cast<std::size_t>(k));
    }
    out.trace = trace_back(p, pr, table);
    return out;
}

// ---------------------------------------------------------------------------

namespace {

struct BruteState {
    const AlignmentProblem& p;
    const Prepared& pr;
    std::size_t cap;
    std::size_t budget;
    Bytes padded_target;
    Bytes output;
    std::vector<Decision> decisions;
    BruteForceResult best;
    bool have_best = false;

    void finish()
    {
        if (++best.candidates > budget)
            throw AlignError(AlignErrc::EnumerationBudget, "enumeration budget exceeded");
        const auto c = raw_cost(padded_target, front_pad(output, pr.n), p.metric);
        if (!have_best || c < best.raw_cost) {
            have_best = true;
            best.raw_cost = c;
            best.trace.decisions = decisions;
            best.trace.achieved_length = output.size();
        }
    }

    // At boundary k with `left` insertion bytes remaining.
    void visit(std::size_t k, std::size_t left)
    {
        // Option: stop inserting here and place unit k (or finish).
        if (k == pr.K) {
            finish();
        } else {
            const auto& enc = p.original.instructions[k].encoding;
            output.insert(output.end(), enc.begin(), enc.end());
            decisions.push_back(Decision::match(k));
            visit(k + 1, left);
            decisions.pop_back();
            output.resize(output.size() - enc.size());
        }
        if (!pr.legal[k])
            return;
        for (std::size_t c = 0; c < p.vocab.size(); ++c) {
            const auto& enc = p.vocab[c].encoding;
            if (enc.size() > left)
                continue;
            output.insert(output.end(), enc.begin(), enc.end());
            decisions.push_back(Decision::insert(c, k));
            visit(k, left - enc.size());
            decisions.pop_back();
            output.resize(output.size() - enc.size());
        }
    }
};

} // namespace

BruteForceResult brute_force_align(const AlignmentProblem& p, std::size_t cap, std::size_t budget)
{
    const auto pr = prepare(p);
    BruteState st{p, pr, cap, budget, p.target, {}, {}, {}, false};
    st.visit(0, std::min(cap, pr.n - pr.m));
    st.best.cost = finalize_cost(st.best.raw_cost, p.metric);
    st.best.trace.raw_cost = st.best.raw_cost;
    st.best.trace.total_cost = st.best.cost;
    return st.best;
}

// ---------------------------------------------------------------------------

isa::ByteProgram apply_trace(const isa::ByteProgram& prog, const AlignmentTrace& trace, const isa::Vocabulary& vocab)
{
    const std::size_t K = prog.size();
    std::vector<isa::Instruction> out;
    std::vector<std::size_t> new_index(K + 1, 0);
    std::size_t next_match = 0;
    for (const auto& d : trace.decisions) {
        if (d.kind == Decision::Kind::Match) {
            if (d.instruction != next_match)
                throw AlignError(AlignErrc::InvalidTrace, "match decisions out of order");
            new_index[next_match] = out.size();
            out.push_back(prog.instructions[next_match]);
            ++next_match;
        } else {
            if (d.boundary != next_match || d.nop >= vocab.size())
                throw AlignError(AlignErrc::InvalidTrace, "insert decision at inconsistent boundary");
            auto dis = isa::disassemble(vocab[d.nop].encoding);
            if (dis.error_offset)
                throw AlignError(AlignErrc::InvalidTrace, "nop '" + vocab[d.nop].name + "' does not decode");
            for (auto& insn : dis.instructions) {
                insn.target.reset(); // position-independent: keep the raw displacement
                out.push_back(std::move(insn));
            }
        }
    }
    if (next_match != K)
        throw AlignError(AlignErrc::InvalidTrace, "trace does not cover every instruction");
    new_index[K] = out.size();

    // Only original instructions still carry targets.
    for (auto& insn : out)
        if (insn.target)
            insn.target = new_index[*insn.target];
    std::map<std::string, std::size_t> labels;
    for (const auto& [name, idx] : prog.labels)
        labels.emplace(name, new_index[idx]);
    try {
        return isa::layout(std::move(out), std::move(labels));
    } catch (const isa::AsmError& e) {
        throw AlignError(AlignErrc::DisplacementOverflow, std::string("branch displacement overflow after insertion: ") + e.what());
    }
}

void write_trace(const AlignmentTrace& trace, const isa::Vocabulary& vocab, std::ostream& out)
{
    for (const auto& d : trace.decisions) {
        if (d.kind == Decision::Kind::Match)
            out << "MAT " << d.instruction << '\n';
        else
            out << "INS " << d.boundary << ' ' << vocab.at(d.nop).name << '\n';
    }
}

AlignmentTrace read_trace(std::istream& in, const isa::Vocabulary& vocab)
{
    AlignmentTrace t;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        std::istringstream ls(line);
        std::string tag;
        if (!(ls >> tag))
            continue;
        const auto bad = [&] { return AlignError(AlignErrc::InvalidTrace, "trace line " + std::to_string(line_no) + ": malformed"); };
        if (tag == "MAT") {
            std::size_t k;
            if (!(ls >> k))
                throw bad();
            t.decisions.push_back(Decision::match(k));
        } else if (tag == "INS") {
            std::size_t b;
            std::string name;
            if (!(ls >> b >> name))
                throw bad();
            auto it = std::find_if(vocab.begin(), vocab.end(), [&](const auto& n) { return n.name == name; });
            if (it == vocab.end())
                throw AlignError(AlignErrc::InvalidTrace, "trace line " + std::to_string(line_no) + ": unknown nop '" + name + "'");
            t.decisions.push_back(Decision::insert(static_cast<std::size_t>(it - vocab.begin()), b));
        } else {
            throw bad();
        }
    }
    return t;
}

} // namespace amao::align
