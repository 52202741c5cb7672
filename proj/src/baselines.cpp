#include "amao/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>

#include "amao/error.hpp"

namespace amao::baselines {

using isa::Op;

void validate(const Budget& b)
{
    if (!(b.max_growth >= 1.0) || !std::isfinite(b.max_growth))
        throw DataError("budget: max_growth must be >= 1");
}

std::size_t size_limit(std::size_t original_len, const Budget& b)
{
    validate(b);
    return static_cast<std::size_t>(std::ceil(b.max_growth * static_cast<double>(original_len)));
}

isa::ByteProgram rewrite(const isa::ByteProgram& prog, const Expansion& expand)
{
    const std::size_t K = prog.size();
    std::vector<isa::Instruction> out;
    std::vector<std::size_t> new_index(K + 1, 0);
    std::vector<bool> remap;
    for (std::size_t i = 0; i < K; ++i) {
        new_index[i] = out.size();
        for (auto& insn : expand(i)) {
            remap.push_back(insn.target.has_value());
            out.push_back(std::move(insn));
        }
    }
    new_index[K] = out.size();
    for (std::size_t j = 0; j < out.size(); ++j)
        if (remap[j])
            out[j].target = new_index.at(*out[j].target);
    std::map<std::string, std::size_t> labels;
    for (const auto& [name, idx] : prog.labels)
        labels.emplace(name, new_index[idx]);
    return isa::layout(std::move(out), std::move(labels));
}

// ---------------------------------------------------------------------------

align::AlignmentTrace insertion_trace(const isa::ByteProgram& prog, const std::vector<std::size_t>& points,
                                      const std::vector<std::vector<std::size_t>>& inserts,
                                      const isa::Vocabulary& vocab)
{
    align::AlignmentTrace t;
    std::size_t p = 0;
    for (std::size_t k = 0; k <= prog.size(); ++k) {
        if (p < points.size() && points[p] == k) {
            for (auto v : inserts[p])
                t.decisions.push_back(align::Decision::insert(v, k));
            ++p;
        }
        if (k < prog.size())
            t.decisions.push_back(align::Decision::match(k));
    }
    t.achieved_length = prog.text.size();
    for (const auto& at : inserts)
        for (auto v : at)
            t.achieved_length += vocab.at(v).length();
    return t;
}

align::AlignmentTrace random_nop_trace(const isa::ByteProgram& prog, const isa::Vocabulary& vocab, const Budget& b)
{
    const std::size_t m = prog.text.size();
    const std::size_t room = size_limit(m, b) - m;
    const auto points = isa::find_insertion_points(prog, room);
    std::mt19937_64 rng(b.seed);

    // inserts[k] holds the nops placed at points[k], in insertion order.
    std::vector<std::vector<std::size_t>> inserts(points.size());
    std::size_t used = 0;
    if (!points.empty()) {
        for (;;) {
            std::vector<std::size_t> fits;
            for (std::size_t v = 0; v < vocab.size(); ++v)
                if (vocab[v].length() > 0 && used + vocab[v].length() <= room)
                    fits.push_back(v);
            if (fits.empty())
                break;
            const std::size_t at = rng() % points.size();
            const std::size_t v = fits[rng() % fits.size()];
            inserts[at].push_back(v);
            used += vocab[v].length();
        }
    }

    return insertion_trace(prog, points, inserts, vocab);
}

isa::ByteProgram random_nop_insert(const isa::ByteProgram& prog, const isa::Vocabulary& vocab, const Budget& b)
{
    return align::apply_trace(prog, random_nop_trace(prog, vocab, b), vocab);
}

Bytes payload_append(ByteView text, ByteView payload, const Budget& b)
{
    const std::size_t limit = size_limit(text.size(), b);
    if (text.size() + payload.size() > limit)
        throw DataError("payload of " + std::to_string(payload.size()) + " bytes exceeds the size budget of " +
                        std::to_string(limit - text.size()));
    Bytes out(text.begin(), text.end());
    out.insert(out.end(), payload.begin(), payload.end());
    return out;
}

// ---------------------------------------------------------------------------

std::vector<std::size_t> subroutine_starts(const isa::ByteProgram& prog)
{
    const std::size_t K = prog.size();
    if (K == 0 || isa::falls_through(prog.instructions.back().op))
        throw DataError("subroutine_reorder: program does not end in jmp/ret/hlt");
    std::vector<std::size_t> starts{0};
    for (std::size_t i = 0; i + 1 < K; ++i)
        if (!isa::falls_through(prog.instructions[i].op))
            starts.push_back(i + 1);
    if (starts.size() < 2)
        throw DataError("subroutine_reorder: fewer than two blocks");
    return starts;
}

isa::ByteProgram subroutine_reorder_with(const isa::ByteProgram& prog, const std::vector<std::size_t>& order)
{
    const auto starts = subroutine_starts(prog);
    const std::size_t nb = starts.size();
    auto sorted = order;
    std::sort(sorted.begin(), sorted.end());
    if (order.size() != nb || order.front() != 0 || sorted != [&] {
            std::vector<std::size_t> id(nb);
            std::iota(id.begin(), id.end(), 0);
            return id;
        }())
        throw DataError("subroutine_reorder: order must be a permutation starting with the entry block");

    // Physical sequence of original indices; rewrite() cannot reorder, so
    // remap through an explicit list instead.
    std::vector<std::size_t> seq;
    for (auto blk : order) {
        const std::size_t end = blk + 1 < nb ? starts[blk + 1] : prog.size();
        for (std::size_t i = starts[blk]; i < end; ++i)
            seq.push_back(i);
    }
    std::vector<std::size_t> new_index(prog.size() + 1, 0);
    for (std::size_t j = 0; j < seq.size(); ++j)
        new_index[seq[j]] = j;
    new_index[prog.size()] = seq.size();
    std::vector<isa::Instruction> out;
    for (auto i : seq) {
        auto insn = prog.instructions[i];
        if (insn.target)
            insn.target = new_index[*insn.target];
        out.push_back(std::move(insn));
    }
    std::map<std::string, std::size_t> labels;
    for (const auto& [name, idx] : prog.labels)
        labels.emplace(name, new_index[idx]);
    return isa::layout(std::move(out), std::move(labels));
}

isa::ByteProgram subroutine_reorder(const isa::ByteProgram& prog, std::uint64_t seed)
{
    const std::size_t nb = subroutine_starts(prog).size();
    std::mt19937_64 rng(seed);
    std::vector<std::size_t> order(nb);
    std::iota(order.begin(), order.end(), 0);
    for (int attempt = 0; attempt < 20; ++attempt) {
        // Prefer a permutation that actually moves something.
        for (int k = 0; k < 8; ++k) {
            std::shuffle(order.begin() + 1, order.end(), rng);
            if (!std::is_sorted(order.begin(), order.end()))
                break;
        }
        try {
            return subroutine_reorder_with(prog, order);
        } catch (const isa::AsmError& e) {
            if (e.code() != isa::AsmErrc::DisplacementOverflow)
                throw;
        }
    }
    return prog;
}

// ---------------------------------------------------------------------------

isa::ByteProgram mix_control_flow_with(const isa::ByteProgram& prog, const std::vector<std::size_t>& cuts,
                                       const std::vector<std::size_t>& order)
{
    const std::size_t K = prog.size();
    std::vector<std::size_t> starts{0};
    for (auto c : cuts) {
        if (c <= starts.back() || c >= K)
            throw DataError("mix_control_flow: cuts must be increasing and inside the program");
        starts.push_back(c);
    }
    const std::size_t nr = starts.size();
    auto sorted = order;
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t j = 0; j < nr; ++j)
        if (sorted.size() != nr || sorted[j] != j)
            throw DataError("mix_control_flow: order must be a permutation of the regions");
    const auto region_end = [&](std::size_t r) { return r + 1 < nr ? starts[r + 1] : K; };

    // Glue jmps carry targets in original index space; K means "past the end".
    struct Slot {
        isa::Instruction insn;
        std::optional<std::size_t> original;
    };
    std::vector<Slot> seq;
    if (order.front() != 0)
        seq.push_back({isa::make_branch(Op::Jmp, starts[0]), std::nullopt});
    for (std::size_t p = 0; p < nr; ++p) {
        const std::size_t r = order[p];
        for (std::size_t i = starts[r]; i < region_end(r); ++i)
            seq.push_back({prog.instructions[i], i});
        const bool next_is_successor = p + 1 < nr ? order[p + 1] == r + 1 : r + 1 == nr;
        if (isa::falls_through(prog.instructions[region_end(r) - 1].op) && !next_is_successor)
            seq.push_back({isa::make_branch(Op::Jmp, region_end(r)), std::nullopt});
    }

    std::vector<std::size_t> new_index(K + 1, seq.size());
    for (std::size_t j = 0; j < seq.size(); ++j)
        if (seq[j].original)
            new_index[*seq[j].original] = j;
    std::vector<isa::Instruction> out;
    for (auto& s : seq) {
        if (s.insn.target)
            s.insn.target = new_index[*s.insn.target];
        out.push_back(std::move(s.insn));
    }
    std::map<std::string, std::size_t> labels;
    for (const auto& [name, idx] : prog.labels)
        labels.emplace(name, new_index[idx]);
    return isa::layout(std::move(out), std::move(labels));
}

isa::ByteProgram mix_control_flow(const isa::ByteProgram& prog, const Budget& b)
{
    const std::size_t K = prog.size();
    const std::size_t limit = size_limit(prog.text.size(), b);
    if (K < 2)
        return prog;
    std::mt19937_64 rng(b.seed);
    std::vector<std::size_t> all(K - 1);
    std::iota(all.begin(), all.end(), 1);
    std::shuffle(all.begin(), all.end(), rng);
    // Every region adds at most one 2-byte jmp, plus the entry jmp.
    const std::size_t room = limit - prog.text.size();
    std::size_t ncuts = std::min(all.size(), room / 2 >= 3 ? room / 2 - 2 : 0);
    while (ncuts > 0) {
        std::vector<std::size_t> cuts(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(ncuts));
        std::sort(cuts.begin(), cuts.end());
        std::vector<std::size_t> order(ncuts + 1);
        std::iota(order.begin(), order.end(), 0);
        std::shuffle(order.begin(), order.end(), rng);
        try {
            auto out = mix_control_flow_with(prog, cuts, order);
            if (out.text.size() <= limit)
                return out;
        } catch (const isa::AsmError& e) {
            if (e.code() != isa::AsmErrc::DisplacementOverflow)
                throw;
        }
        // Fall back to splitting fewer regions.
        --ncuts;
    }
    return prog;
}

// ---------------------------------------------------------------------------

std::vector<bool> zf_dead_after(const isa::ByteProgram& prog)
{
    const std::size_t K = prog.size();
    // live_in[i]: ZF on entry to instruction i may be observed. Terminators
    // expose ZF in the end state; running off the end or an unresolved
    // branch is treated as observing it.
    std::vector<bool> live_in(K + 1, true);
    const auto live_at = [&](std::size_t i) { return i >= K ? true : static_cast<bool>(live_in[i]); };
    bool changed = true;
    while (changed) {
        changed = false;
        for (std::size_t i = K; i-- > 0;) {
            const auto& insn = prog.instructions[i];
            bool out_live = false;
            if (isa::is_terminator(insn.op))
                out_live = true;
            else {
                if (isa::falls_through(insn.op))
                    out_live = out_live || live_at(i + 1);
                if (isa::is_branch(insn.op))
                    out_live = out_live || !insn.target || live_at(*insn.target);
            }
            const bool in = isa::reads_zf(insn.op) || (!isa::writes_zf(insn.op) && out_live);
            if (in != live_in[i]) {
                live_in[i] = in;
                changed = true;
            }
        }
    }
    // Fixed point from "all live" is the greatest one; recompute the
    // per-instruction out-liveness from it.
    std::vector<bool> dead(K, false);
    for (std::size_t i = 0; i < K; ++i) {
        const auto& insn = prog.instructions[i];
        bool out_live = isa::is_terminator(insn.op);
        if (isa::falls_through(insn.op))
            out_live = out_live || live_at(i + 1);
        if (isa::is_branch(insn.op))
            out_live = out_live || !insn.target || live_at(*insn.target);
        dead[i] = !out_live;
    }
    return dead;
}

std::vector<isa::Instruction> static_value_sequence(isa::Reg r, std::uint32_t imm, std::uint32_t m, std::int8_t a)
{
    const std::uint32_t x = (m + static_cast<std::uint32_t>(static_cast<std::int32_t>(a))) ^ imm;
    return {isa::make(Op::MovImm, r, isa::Reg::eax, static_cast<std::int32_t>(m)),
            isa::make(Op::AddImm8, r, isa::Reg::eax, a),
            isa::make(Op::XorImm32, r, isa::Reg::eax, static_cast<std::int32_t>(x))};
}

isa::ByteProgram instruction_substitute(const isa::ByteProgram& prog, const SubstituteConfig& cfg, const Budget& b)
{
    if (!(cfg.p >= 0.0 && cfg.p <= 1.0))
        throw DataError("instruction_substitute: p must lie in [0, 1]");
    const std::size_t limit = size_limit(prog.text.size(), b);
    const auto dead = zf_dead_after(prog);
    std::mt19937_64 rng(b.seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);

    // Pick sites in random order so the budget is not spent on the prefix.
    std::vector<std::size_t> idx(prog.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::shuffle(idx.begin(), idx.end(), rng);
    std::vector<std::vector<isa::Instruction>> repl(prog.size());
    std::size_t size = prog.text.size();
    for (auto i : idx) {
        const auto& insn = prog.instructions[i];
        std::vector<isa::Instruction> seq;
        // mov leaves ZF alone, so the add/xor replacement is only safe when
        // nothing downstream can read the flag.
        if (cfg.static_values && insn.op == Op::MovImm && dead[i]) {
            const auto m = static_cast<std::uint32_t>(rng());
            const auto a = static_cast<std::int8_t>(1 + rng() % 127);
            seq = static_value_sequence(insn.dst, static_cast<std::uint32_t>(insn.imm), m, a);
        } else if (cfg.binary_ops && insn.op == Op::AddRR && insn.dst != insn.src) {
            // r1 + R + r2 - R; the final sub sets ZF exactly as the add did.
            const auto r = static_cast<std::int32_t>(rng());
            seq = {isa::make(Op::AddImm32, insn.dst, isa::Reg::eax, r), insn,
                   isa::make(Op::SubImm32, insn.dst, isa::Reg::eax, r)};
        } else {
            continue;
        }
        if (u(rng) >= cfg.p)
            continue;
        std::size_t grow = 0;
        for (const auto& s : seq)
            grow += s.encoding.size();
        grow -= insn.encoding.size();
        if (size + grow > limit)
            continue;
        size += grow;
        repl[i] = std::move(seq);
    }

    const auto build = [&] {
        return rewrite(prog, [&](std::size_t i) {
            return repl[i].empty() ? std::vector<isa::Instruction>{prog.instructions[i]} : repl[i];
        });
    };
    // Drop substitutions until no branch overflows.
    for (;;) {
        try {
            return build();
        } catch (const isa::AsmError& e) {
            if (e.code() != isa::AsmErrc::DisplacementOverflow)
                throw;
            auto it = std::find_if(idx.rbegin(), idx.rend(), [&](std::size_t i) { return !repl[i].empty(); });
            if (it == idx.rend())
                throw;
            repl[*it].clear();
        }
    }
}

} // namespace amao::baselines
