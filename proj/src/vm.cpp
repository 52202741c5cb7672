#include "amao/isa.hpp"

#include <algorithm>
#include <cctype>
#include <istream>
#include <ostream>
#include <random>
#include <sstream>

namespace amao::isa {

RegisterFile default_inputs()
{
    RegisterFile r{};
    r[static_cast<std::size_t>(Reg::esp)] = kStackTop;
    return r;
}

MachineState initial_state(const RegisterFile& inputs)
{
    MachineState s;
    s.regs = inputs;
    return s;
}

ExecError::ExecError(ExecErrc code, std::size_t pc, const std::string& what)
    : Error(what + " (pc=" + std::to_string(pc) + ")"), code_(code), pc_(pc)
{
}

namespace {

std::uint32_t& reg_ref(MachineState& s, Reg r) { return s.regs[static_cast<std::size_t>(r)]; }

void push32(MachineState& s, std::uint32_t v)
{
    auto& esp = reg_ref(s, Reg::esp);
    if (esp < 4 || esp > kMemSize)
        throw ExecError(ExecErrc::StackFault, s.pc, "stack overflow");
    esp -= 4;
    for (int i = 0; i < 4; ++i)
        s.mem[esp + i] = static_cast<std::uint8_t>(v >> (8 * i));
}

std::uint32_t pop32(MachineState& s)
{
    auto& esp = reg_ref(s, Reg::esp);
    if (esp > kMemSize - 4)
        throw ExecError(ExecErrc::StackFault, s.pc, "stack underflow");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
        v |= static_cast<std::uint32_t>(s.mem[esp + i]) << (8 * i);
    esp += 4;
    return v;
}

} // namespace

void step(MachineState& s, ByteView text)
{
    if (s.pc >= text.size())
        throw ExecError(ExecErrc::WildJump, s.pc, "wild jump");
    const auto insn = decode_one(text, s.pc);
    if (!insn)
        throw ExecError(ExecErrc::IllegalInstruction, s.pc, "illegal instruction");
    std::size_t next = s.pc + insn->encoding.size();
    const auto imm = static_cast<std::uint32_t>(insn->imm);
    auto& d = reg_ref(s, insn->dst);
    const std::uint32_t src = s.reg(insn->src);

    switch (insn->op) {
    case Op::Nop:
    case Op::XchgAx:
        break;
    case Op::MovImm: d = imm; break;
    case Op::MovRR: d = src; break;
    case Op::XchgRR: {
        auto& o = reg_ref(s, insn->src);
        std::swap(d, o);
        break;
    }
    case Op::AddRR: d += src; s.zf = d == 0; break;
    case Op::XorRR: d ^= src; s.zf = d == 0; break;
    case Op::AddImm8:
    case Op::AddImm32: d += imm; s.zf = d == 0; break;
    case Op::SubImm8:
    case Op::SubImm32: d -= imm; s.zf = d == 0; break;
    case Op::XorImm32: d ^= imm; s.zf = d == 0; break;
    case Op::CmpImm8: s.zf = d - imm == 0; break;
    case Op::Lea: d = src + imm; break;
    case Op::Push: push32(s, d); break;
    case Op::Pop: {
        const auto v = pop32(s);
        reg_ref(s, insn->dst) = v;
        break;
    }
    case Op::Jmp:
    case Op::Jz:
    case Op::Jnz: {
        const bool taken = insn->op == Op::Jmp || (insn->op == Op::Jz) == s.zf;
        if (taken) {
            const auto dest = static_cast<std::int64_t>(next) + insn->imm;
            if (dest < 0 || static_cast<std::size_t>(dest) > text.size())
                throw ExecError(ExecErrc::WildJump, s.pc, "wild jump");
            next = static_cast<std::size_t>(dest);
        }
        break;
    }
    // There is no call in the subset, so every ret returns from the entry frame.
    case Op::Ret:
    case Op::Hlt:
        s.halted = true;
        break;
    case Op::Emit: s.output.push_back(s.reg(Reg::eax)); break;
    }
    ++s.steps;
    if (!s.halted)
        s.pc = next;
}

void run(MachineState& s, ByteView text, std::size_t budget, std::optional<std::size_t> stop_at)
{
    while (!s.halted) {
        if (stop_at && s.pc == *stop_at)
            return;
        if (s.steps >= budget)
            throw ExecError(ExecErrc::NonTermination, s.pc, "non-termination within budget");
        step(s, text);
    }
}

MachineState execute(ByteView text, const RegisterFile& inputs, std::size_t budget)
{
    auto s = initial_state(inputs);
    run(s, text, budget);
    return s;
}

MachineState execute(const ByteProgram& prog, const RegisterFile& inputs, std::size_t budget)
{
    return execute(ByteView(prog.text), inputs, budget);
}

bool equivalent(const MachineState& a, const MachineState& b)
{
    if (a.regs != b.regs || a.zf != b.zf || a.output != b.output)
        return false;
    const std::size_t from = std::min<std::size_t>(a.reg(Reg::esp), kMemSize);
    return std::equal(a.mem.begin() + static_cast<std::ptrdiff_t>(from), a.mem.end(),
                      b.mem.begin() + static_cast<std::ptrdiff_t>(from));
}

// ---------------------------------------------------------------------------

Vocabulary default_vocabulary()
{
    return {
        {"nop", {0x90}},
        {"xchg_ax_ax", {0x66, 0x90}},
        {"mov_eax_eax", {0x89, 0xC0}},
        {"mov_ecx_ecx", {0x89, 0xC9}},
        {"mov_edx_edx", {0x89, 0xD2}},
        {"mov_ebx_ebx", {0x89, 0xDB}},
        {"lea_eax_0", {0x8D, 0x40, 0x00}},
        {"lea_ecx_0", {0x8D, 0x49, 0x00}},
        {"lea_edx_0", {0x8D, 0x52, 0x00}},
        {"lea_ebx_0", {0x8D, 0x5B, 0x00}},
        {"push_pop_eax", {0x50, 0x58}},
        {"push_pop_ecx", {0x51, 0x59}},
        {"push_pop_edx", {0x52, 0x5A}},
        {"push_pop_ebx", {0x53, 0x5B}},
        {"jmp_0", {0xEB, 0x00}},
        {"xchg_ecx_ecx", {0x87, 0xC9}},
    };
}

std::size_t max_length(std::span<const SemanticNop> vocab)
{
    std::size_t m = 0;
    for (const auto& n : vocab)
        m = std::max(m, n.length());
    return m;
}

Vocabulary parse_vocabulary(std::istream& in)
{
    Vocabulary out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        line = line.substr(0, line.find('#'));
        std::istringstream ls(line);
        std::vector<std::string> toks;
        for (std::string t; ls >> t;)
            toks.push_back(t);
        if (toks.empty())
            continue;
        if (toks.size() < 2)
            throw DataError("vocabulary line " + std::to_string(line_no) + ": expected hex bytes and a name");
        SemanticNop nop;
        nop.name = toks.back();
        for (std::size_t k = 0; k + 1 < toks.size(); ++k) {
            const auto& t = toks[k];
            if (t.size() != 2 || !std::isxdigit(static_cast<unsigned char>(t[0])) ||
                !std::isxdigit(static_cast<unsigned char>(t[1])))
                throw DataError("vocabulary line " + std::to_string(line_no) + ": bad hex byte '" + t + "'");
            nop.encoding.push_back(static_cast<std::uint8_t>(std::stoul(t, nullptr, 16)));
        }
        out.push_back(std::move(nop));
    }
    return out;
}

void write_vocabulary(std::span<const SemanticNop> vocab, std::ostream& out)
{
    static const char* digits = "0123456789ABCDEF";
    for (const auto& n : vocab) {
        for (auto b : n.encoding)
            out << digits[b >> 4] << digits[b & 15] << ' ';
        out << n.name << '\n';
    }
}

VocabReport verify_vocabulary(std::span<const SemanticNop> vocab, std::size_t trials, std::uint64_t seed)
{
    VocabReport report;
    report.trials = trials;
    std::vector<bool> failed(vocab.size(), false);

    for (std::size_t k = 0; k < vocab.size(); ++k) {
        const auto d = disassemble(vocab[k].encoding);
        if (d.error_offset || d.instructions.empty()) {
            report.violations.push_back({vocab[k].name, "does not decode", MachineState{}});
            failed[k] = true;
        }
    }

    std::mt19937_64 rng(seed);
    for (std::size_t t = 0; t < trials; ++t) {
        MachineState start;
        for (auto& r : start.regs)
            r = static_cast<std::uint32_t>(rng());
        start.regs[static_cast<std::size_t>(Reg::esp)] =
            static_cast<std::uint32_t>(64 + 4 * (rng() % ((kMemSize - 128) / 4)));
        start.zf = rng() & 1;
        for (std::size_t i = 0; i < kMemSize; i += 8) {
            const auto w = rng();
            for (std::size_t b = 0; b < 8; ++b)
                start.mem[i + b] = static_cast<std::uint8_t>(w >> (8 * b));
        }

        for (std::size_t k = 0; k < vocab.size(); ++k) {
            if (failed[k])
                continue;
            const auto& nop = vocab[k];
            MachineState s = start;
            std::string reason;
            try {
                run(s, nop.encoding, 64, nop.length());
                if (s.halted)
                    reason = "halts";
                else if (!equivalent(s, start))
                    reason = "changes observable state";
            } catch (const ExecError& e) {
                reason = e.what();
            }
            if (!reason.empty()) {
                report.violations.push_back({nop.name, reason, start});
                failed[k] = true;
            }
        }
    }
    return report;
}

std::vector<std::size_t> find_insertion_points(const ByteProgram& prog, std::size_t max_insert_len)
{
    const std::size_t K = prog.size();
    std::vector<bool> legal(K + 1, true);
    for (std::size_t s = 0; s < K; ++s) {
        const auto& insn = prog.instructions[s];
        if (!is_branch(insn.op) || !insn.target)
            continue;
        const std::size_t t = *insn.target;
        const std::int64_t disp = insn.imm;
        // Labels stay attached to original instructions, so nops at the
        // target's own boundary land inside a forward span but outside a
        // backward one.
        std::size_t lo, hi;
        std::int64_t slack;
        if (t > s) {
            lo = s + 1;
            hi = t;
            slack = 127 - disp;
        } else {
            lo = t + 1;
            hi = s;
            slack = disp + 128;
        }
        if (slack >= static_cast<std::int64_t>(max_insert_len))
            continue;
        for (std::size_t b = lo; b <= hi; ++b)
            legal[b] = false;
    }
    std::vector<std::size_t> out;
    for (std::size_t b = 0; b <= K; ++b)
        if (legal[b])
            out.push_back(b);
    return out;
}

} // namespace amao::isa
