#include "amao/isa.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdlib>
#include <sstream>

namespace amao::isa {

namespace {

constexpr std::array<std::string_view, kNumRegs> kRegNames = {"eax", "ecx", "edx", "ebx",
                                                               "esp", "ebp", "esi", "edi"};

std::uint8_t modrm_rr(Reg src, Reg dst)
{
    return static_cast<std::uint8_t>(0xC0 | (static_cast<unsigned>(src) << 3) | static_cast<unsigned>(dst));
}

void put32(Bytes& out, std::uint32_t v)
{
    for (int i = 0; i < 4; ++i)
        out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get32(ByteView text, std::size_t at)
{
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
        v |= static_cast<std::uint32_t>(text[at + i]) << (8 * i);
    return v;
}

std::int32_t sext8(std::uint8_t b) { return static_cast<std::int8_t>(b); }

bool fits8(std::int64_t v) { return v >= -128 && v <= 127; }

} // namespace

std::size_t encoded_length(Op op)
{
    switch (op) {
    case Op::Nop:
    case Op::Push:
    case Op::Pop:
    case Op::Ret:
    case Op::Hlt:
        return 1;
    case Op::XchgAx:
    case Op::MovRR:
    case Op::AddRR:
    case Op::XorRR:
    case Op::XchgRR:
    case Op::Jmp:
    case Op::Jz:
    case Op::Jnz:
    case Op::Emit:
        return 2;
    case Op::AddImm8:
    case Op::SubImm8:
    case Op::CmpImm8:
    case Op::Lea:
        return 3;
    case Op::MovImm:
        return 5;
    case Op::AddImm32:
    case Op::SubImm32:
    case Op::XorImm32:
        return 6;
    }
    return 0;
}

bool is_branch(Op op) { return op == Op::Jmp || op == Op::Jz || op == Op::Jnz; }
bool is_terminator(Op op) { return op == Op::Ret || op == Op::Hlt; }
bool falls_through(Op op) { return op != Op::Jmp && !is_terminator(op); }

bool writes_zf(Op op)
{
    switch (op) {
    case Op::AddRR:
    case Op::XorRR:
    case Op::AddImm8:
    case Op::SubImm8:
    case Op::CmpImm8:
    case Op::AddImm32:
    case Op::SubImm32:
    case Op::XorImm32:
        return true;
    default:
        return false;
    }
}

bool reads_zf(Op op) { return op == Op::Jz || op == Op::Jnz; }

bool Instruction::same_instruction(const Instruction& o) const
{
    return op == o.op && dst == o.dst && src == o.src && imm == o.imm && encoding == o.encoding;
}

Instruction make(Op op, Reg dst, Reg src, std::int32_t imm)
{
    Instruction i;
    i.op = op;
    i.dst = dst;
    i.src = src;
    i.imm = imm;
    if (op == Op::Lea && src == Reg::esp)
        throw AsmError(AsmErrc::BadOperand, 0, "lea with esp base needs a SIB byte");
    i.encoding = encode(i);
    return i;
}

Instruction make_branch(Op op, std::size_t target)
{
    Instruction i;
    i.op = op;
    i.target = target;
    i.encoding = encode(i);
    return i;
}

Bytes encode(const Instruction& insn)
{
    Bytes out;
    const auto r = [](Reg x) { return static_cast<std::uint8_t>(x); };
    const auto ib = static_cast<std::uint8_t>(insn.imm & 0xFF);
    switch (insn.op) {
    case Op::Nop: out = {0x90}; break;
    case Op::XchgAx: out = {0x66, 0x90}; break;
    case Op::MovImm:
        out = {static_cast<std::uint8_t>(0xB8 + r(insn.dst))};
        put32(out, static_cast<std::uint32_t>(insn.imm));
        break;
    case Op::MovRR: out = {0x89, modrm_rr(insn.src, insn.dst)}; break;
    case Op::AddRR: out = {0x01, modrm_rr(insn.src, insn.dst)}; break;
    case Op::XorRR: out = {0x31, modrm_rr(insn.src, insn.dst)}; break;
    case Op::XchgRR: out = {0x87, modrm_rr(insn.src, insn.dst)}; break;
    case Op::AddImm8: out = {0x83, static_cast<std::uint8_t>(0xC0 + r(insn.dst)), ib}; break;
    case Op::SubImm8: out = {0x83, static_cast<std::uint8_t>(0xE8 + r(insn.dst)), ib}; break;
    case Op::CmpImm8: out = {0x83, static_cast<std::uint8_t>(0xF8 + r(insn.dst)), ib}; break;
    case Op::AddImm32:
        out = {0x81, static_cast<std::uint8_t>(0xC0 + r(insn.dst))};
        put32(out, static_cast<std::uint32_t>(insn.imm));
        break;
    case Op::SubImm32:
        out = {0x81, static_cast<std::uint8_t>(0xE8 + r(insn.dst))};
        put32(out, static_cast<std::uint32_t>(insn.imm));
        break;
    case Op::XorImm32:
        out = {0x81, static_cast<std::uint8_t>(0xF0 + r(insn.dst))};
        put32(out, static_cast<std::uint32_t>(insn.imm));
        break;
    case Op::Lea:
        out = {0x8D, static_cast<std::uint8_t>(0x40 | (r(insn.dst) << 3) | r(insn.src)), ib};
        break;
    case Op::Push: out = {static_cast<std::uint8_t>(0x50 + r(insn.dst))}; break;
    case Op::Pop: out = {static_cast<std::uint8_t>(0x58 + r(insn.dst))}; break;
    case Op::Jmp: out = {0xEB, ib}; break;
    case Op::Jz: out = {0x74, ib}; break;
    case Op::Jnz: out = {0x75, ib}; break;
    case Op::Ret: out = {0xC3}; break;
    case Op::Hlt: out = {0xF4}; break;
    case Op::Emit: out = {0xE7, 0x00}; break;
    }
    return out;
}

std::optional<Instruction> decode_one(ByteView text, std::size_t offset)
{
    if (offset >= text.size())
        return std::nullopt;
    const std::size_t avail = text.size() - offset;
    const std::uint8_t b0 = text[offset];
    Instruction i;
    i.offset = offset;

    auto need = [&](std::size_t n) { return avail >= n; };
    auto rr = [&](Op op) -> bool {
        if (!need(2) || text[offset + 1] < 0xC0)
            return false;
        const std::uint8_t m = text[offset + 1];
        i.op = op;
        i.src = static_cast<Reg>((m >> 3) & 7);
        i.dst = static_cast<Reg>(m & 7);
        return true;
    };

    bool ok = true;
    if (b0 == 0x90) {
        i.op = Op::Nop;
    } else if (b0 == 0x66) {
        ok = need(2) && text[offset + 1] == 0x90;
        i.op = Op::XchgAx;
    } else if (b0 >= 0xB8 && b0 <= 0xBF) {
        ok = need(5);
        if (ok) {
            i.op = Op::MovImm;
            i.dst = static_cast<Reg>(b0 - 0xB8);
            i.imm = static_cast<std::int32_t>(get32(text, offset + 1));
        }
    } else if (b0 == 0x89) {
        ok = rr(Op::MovRR);
    } else if (b0 == 0x01) {
        ok = rr(Op::AddRR);
    } else if (b0 == 0x31) {
        ok = rr(Op::XorRR);
    } else if (b0 == 0x87) {
        ok = rr(Op::XchgRR);
    } else if (b0 == 0x83 || b0 == 0x81) {
        const bool wide = b0 == 0x81;
        ok = need(wide ? 6 : 3) && text[offset + 1] >= 0xC0;
        if (ok) {
            const std::uint8_t m = text[offset + 1];
            const unsigned ext = (m >> 3) & 7;
            i.dst = static_cast<Reg>(m & 7);
            i.imm = wide ? static_cast<std::int32_t>(get32(text, offset + 2)) : sext8(text[offset + 2]);
            if (ext == 0)
                i.op = wide ? Op::AddImm32 : Op::AddImm8;
            else if (ext == 5)
                i.op = wide ? Op::SubImm32 : Op::SubImm8;
            else if (ext == 7 && !wide)
                i.op = Op::CmpImm8;
            else if (ext == 6 && wide)
                i.op = Op::XorImm32;
            else
                ok = false;
        }
    } else if (b0 == 0x8D) {
        ok = need(3) && (text[offset + 1] & 0xC0) == 0x40 && (text[offset + 1] & 7) != 4;
        if (ok) {
            i.op = Op::Lea;
            i.dst = static_cast<Reg>((text[offset + 1] >> 3) & 7);
            i.src = static_cast<Reg>(text[offset + 1] & 7);
            i.imm = sext8(text[offset + 2]);
        }
    } else if (b0 >= 0x50 && b0 <= 0x57) {
        i.op = Op::Push;
        i.dst = static_cast<Reg>(b0 - 0x50);
    } else if (b0 >= 0x58 && b0 <= 0x5F) {
        i.op = Op::Pop;
        i.dst = static_cast<Reg>(b0 - 0x58);
    } else if (b0 == 0xEB || b0 == 0x74 || b0 == 0x75) {
        ok = need(2);
        i.op = b0 == 0xEB ? Op::Jmp : b0 == 0x74 ? Op::Jz : Op::Jnz;
        if (ok)
            i.imm = sext8(text[offset + 1]);
    } else if (b0 == 0xC3) {
        i.op = Op::Ret;
    } else if (b0 == 0xF4) {
        i.op = Op::Hlt;
    } else if (b0 == 0xE7) {
        ok = need(2) && text[offset + 1] == 0x00;
        i.op = Op::Emit;
    } else {
        ok = false;
    }
    if (!ok)
        return std::nullopt;
    i.encoding = encode(i);
    return i;
}

std::string_view reg_name(Reg r) { return kRegNames[static_cast<std::size_t>(r)]; }

namespace {

std::string hex(std::uint32_t v)
{
    std::ostringstream s;
    s << "0x" << std::hex << v;
    return s.str();
}

std::string signed_imm(std::int32_t v) { return v < 0 ? "-" + hex(static_cast<std::uint32_t>(-static_cast<std::int64_t>(v))) : hex(static_cast<std::uint32_t>(v)); }

std::string rel(std::int32_t v) { return v < 0 ? std::to_string(v) : "+" + std::to_string(v); }

} // namespace

std::string to_string(const Instruction& i, std::string_view label)
{
    const auto d = std::string(reg_name(i.dst));
    const auto s = std::string(reg_name(i.src));
    switch (i.op) {
    case Op::Nop: return "nop";
    case Op::XchgAx: return "xchg ax, ax";
    case Op::MovImm: return "mov " + d + ", " + hex(static_cast<std::uint32_t>(i.imm));
    case Op::MovRR: return "mov " + d + ", " + s;
    case Op::AddRR: return "add " + d + ", " + s;
    case Op::XorRR: return "xor " + d + ", " + s;
    case Op::XchgRR: return "xchg " + d + ", " + s;
    case Op::AddImm8: return "add " + d + ", " + signed_imm(i.imm);
    case Op::SubImm8: return "sub " + d + ", " + signed_imm(i.imm);
    case Op::CmpImm8: return "cmp " + d + ", " + signed_imm(i.imm);
    case Op::AddImm32: return "add " + d + ", dword " + hex(static_cast<std::uint32_t>(i.imm));
    case Op::SubImm32: return "sub " + d + ", dword " + hex(static_cast<std::uint32_t>(i.imm));
    case Op::XorImm32: return "xor " + d + ", " + hex(static_cast<std::uint32_t>(i.imm));
    case Op::Lea:
        return "lea " + d + ", [" + s + (i.imm < 0 ? "-" : "+") + std::to_string(std::abs(i.imm)) + "]";
    case Op::Push: return "push " + d;
    case Op::Pop: return "pop " + d;
    case Op::Jmp:
    case Op::Jz:
    case Op::Jnz: {
        const char* m = i.op == Op::Jmp ? "jmp short " : i.op == Op::Jz ? "jz " : "jnz ";
        return m + (label.empty() ? rel(i.imm) : std::string(label));
    }
    case Op::Ret: return "ret";
    case Op::Hlt: return "hlt";
    case Op::Emit: return "emit eax";
    }
    return "?";
}

AsmError::AsmError(AsmErrc code, std::size_t line, const std::string& what)
    : Error(line ? "line " + std::to_string(line) + ": " + what : what), code_(code), line_(line)
{
}

// ---------------------------------------------------------------------------
// Assembler

namespace {

std::string trim(std::string_view s)
{
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b])))
        ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1])))
        --e;
    return std::string(s.substr(b, e - b));
}

std::string lower(std::string s)
{
    for (auto& c : s)
        c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return s;
}

std::optional<Reg> parse_reg(std::string_view s)
{
    for (std::size_t r = 0; r < kNumRegs; ++r)
        if (s == kRegNames[r])
            return static_cast<Reg>(r);
    return std::nullopt;
}

std::optional<std::int64_t> parse_int(std::string_view s)
{
    bool neg = false;
    if (!s.empty() && (s[0] == '-' || s[0] == '+')) {
        neg = s[0] == '-';
        s.remove_prefix(1);
    }
    int base = 10;
    if (s.size() > 2 && s[0] == '0' && (s[1] == 'x' || s[1] == 'X')) {
        base = 16;
        s.remove_prefix(2);
    } else if (s.size() > 1 && (s.back() == 'h' || s.back() == 'H')) {
        base = 16;
        s.remove_suffix(1);
    }
    if (s.empty())
        return std::nullopt;
    std::uint64_t v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v, base);
    if (ec != std::errc() || p != s.data() + s.size() || v > 0xFFFFFFFFull)
        return std::nullopt;
    return neg ? -static_cast<std::int64_t>(v) : static_cast<std::int64_t>(v);
}

std::vector<std::string> split_operands(const std::string& s)
{
    std::vector<std::string> out;
    std::string cur;
    int depth = 0;
    for (char c : s) {
        if (c == '[')
            ++depth;
        if (c == ']')
            --depth;
        if (c == ',' && depth == 0) {
            out.push_back(trim(cur));
            cur.clear();
        } else {
            cur += c;
        }
    }
    if (!trim(cur).empty())
        out.push_back(trim(cur));
    return out;
}

struct PendingBranch {
    std::size_t index;
    std::string label;
    std::size_t line;
};

} // namespace

ByteProgram assemble(std::string_view source)
{
    std::vector<Instruction> insns;
    std::map<std::string, std::size_t> labels;
    std::vector<PendingBranch> pending;

    std::size_t line_no = 0;
    std::istringstream in{std::string(source)};
    std::string raw;
    while (std::getline(in, raw)) {
        ++line_no;
        std::string line = raw.substr(0, raw.find(';'));
        line = trim(line);
        // Leading labels.
        for (;;) {
            const auto colon = line.find(':');
            if (colon == std::string::npos || line.find(' ') < colon || line.find('[') < colon)
                break;
            const std::string name = trim(line.substr(0, colon));
            if (name.empty())
                throw AsmError(AsmErrc::BadOperand, line_no, "empty label");
            if (!labels.emplace(name, insns.size()).second)
                throw AsmError(AsmErrc::DuplicateLabel, line_no, "duplicate label '" + name + "'");
            line = trim(line.substr(colon + 1));
        }
        if (line.empty())
            continue;

        const auto sp = line.find_first_of(" \t");
        const std::string mnem = lower(line.substr(0, sp));
        const std::string rest = sp == std::string::npos ? "" : trim(line.substr(sp));
        const auto ops = split_operands(lower(rest));
        const auto bad = [&](const std::string& why) {
            return AsmError(AsmErrc::BadOperand, line_no, why + " in '" + trim(raw) + "'");
        };
        const auto reg_at = [&](std::size_t k) {
            if (k >= ops.size())
                throw bad("missing operand");
            auto r = parse_reg(ops[k]);
            if (!r)
                throw bad("expected a 32-bit register");
            return *r;
        };
        const auto arity = [&](std::size_t n) {
            if (ops.size() != n)
                throw bad("expected " + std::to_string(n) + " operand(s)");
        };

        Instruction insn;
        if (mnem == "nop") {
            arity(0);
            insn = make(Op::Nop);
        } else if (mnem == "ret") {
            arity(0);
            insn = make(Op::Ret);
        } else if (mnem == "hlt") {
            arity(0);
            insn = make(Op::Hlt);
        } else if (mnem == "emit") {
            if (!(ops.empty() || (ops.size() == 1 && ops[0] == "eax")))
                throw bad("emit only takes eax");
            insn = make(Op::Emit);
        } else if (mnem == "push" || mnem == "pop") {
            arity(1);
            insn = make(mnem == "push" ? Op::Push : Op::Pop, reg_at(0));
        } else if (mnem == "xchg") {
            arity(2);
            if (ops[0] == "ax" && ops[1] == "ax")
                insn = make(Op::XchgAx);
            else
                insn = make(Op::XchgRR, reg_at(0), reg_at(1));
        } else if (mnem == "mov" || mnem == "add" || mnem == "xor" || mnem == "sub" || mnem == "cmp") {
            arity(2);
            const Reg d = reg_at(0);
            if (auto s = parse_reg(ops[1])) {
                if (mnem == "mov")
                    insn = make(Op::MovRR, d, *s);
                else if (mnem == "add")
                    insn = make(Op::AddRR, d, *s);
                else if (mnem == "xor")
                    insn = make(Op::XorRR, d, *s);
                else
                    throw bad(mnem + " has no register-register form");
            } else {
                std::string imm_text = ops[1];
                bool force32 = false;
                if (imm_text.rfind("dword ", 0) == 0) {
                    force32 = true;
                    imm_text = trim(imm_text.substr(6));
                }
                const auto v = parse_int(imm_text);
                if (!v)
                    throw bad("bad immediate");
                const auto imm32 = static_cast<std::int32_t>(static_cast<std::uint32_t>(*v & 0xFFFFFFFF));
                if (mnem == "mov") {
                    insn = make(Op::MovImm, d, Reg::eax, imm32);
                } else if (mnem == "xor") {
                    insn = make(Op::XorImm32, d, Reg::eax, imm32);
                } else if (mnem == "cmp") {
                    if (!fits8(*v))
                        throw bad("cmp immediate must fit in 8 bits");
                    insn = make(Op::CmpImm8, d, Reg::eax, static_cast<std::int32_t>(*v));
                } else {
                    const bool add = mnem == "add";
                    if (!force32 && fits8(*v))
                        insn = make(add ? Op::AddImm8 : Op::SubImm8, d, Reg::eax, static_cast<std::int32_t>(*v));
                    else
                        insn = make(add ? Op::AddImm32 : Op::SubImm32, d, Reg::eax, imm32);
                }
            }
        } else if (mnem == "lea") {
            arity(2);
            const Reg d = reg_at(0);
            const std::string& m = ops[1];
            if (m.size() < 3 || m.front() != '[' || m.back() != ']')
                throw bad("lea expects [reg+disp8]");
            const std::string inner = trim(m.substr(1, m.size() - 2));
            const auto pm = inner.find_first_of("+-");
            const auto base = parse_reg(trim(inner.substr(0, pm)));
            if (!base)
                throw bad("bad lea base");
            std::int64_t disp = 0;
            if (pm != std::string::npos) {
                auto v = parse_int(trim(inner.substr(pm + 1)));
                if (!v)
                    throw bad("bad lea displacement");
                disp = inner[pm] == '-' ? -*v : *v;
            }
            if (!fits8(disp))
                throw bad("lea displacement must fit in 8 bits");
            if (*base == Reg::esp)
                throw bad("lea with esp base is not encodable without SIB");
            insn = make(Op::Lea, d, *base, static_cast<std::int32_t>(disp));
        } else if (mnem == "jmp" || mnem == "jz" || mnem == "je" || mnem == "jnz" || mnem == "jne") {
            const Op op = mnem == "jmp" ? Op::Jmp : (mnem == "jz" || mnem == "je") ? Op::Jz : Op::Jnz;
            std::string t = rest;
            if (lower(t).rfind("short ", 0) == 0)
                t = trim(t.substr(6));
            if (t.empty())
                throw bad("missing branch target");
            if (t[0] == '+' || t[0] == '-') {
                auto v = parse_int(t);
                if (!v || !fits8(*v))
                    throw AsmError(AsmErrc::DisplacementOverflow, line_no, "raw displacement out of rel8 range");
                insn = make(op, Reg::eax, Reg::eax, static_cast<std::int32_t>(*v));
            } else {
                insn = make(op);
                pending.push_back({insns.size(), t, line_no});
            }
        } else {
            throw AsmError(AsmErrc::UnknownMnemonic, line_no, "unknown mnemonic '" + mnem + "'");
        }
        insns.push_back(std::move(insn));
    }

    for (const auto& p : pending) {
        auto it = labels.find(p.label);
        if (it == labels.end())
            throw AsmError(AsmErrc::UnresolvedLabel, p.line, "unresolved label '" + p.label + "'");
        insns[p.index].target = it->second;
    }
    std::vector<std::size_t> offsets(insns.size() + 1, 0);
    for (std::size_t k = 0; k < insns.size(); ++k)
        offsets[k + 1] = offsets[k] + encoded_length(insns[k].op);
    for (const auto& p : pending) {
        const auto disp = static_cast<std::int64_t>(offsets[*insns[p.index].target]) -
                          static_cast<std::int64_t>(offsets[p.index + 1]);
        if (!fits8(disp))
            throw AsmError(AsmErrc::DisplacementOverflow, p.line,
                           "branch to '" + p.label + "' (" + std::to_string(disp) + " bytes) does not fit in rel8");
    }
    return layout(std::move(insns), std::move(labels));
}

ByteProgram layout(std::vector<Instruction> insns, std::map<std::string, std::size_t> labels)
{
    ByteProgram prog;
    std::vector<std::size_t> offsets(insns.size() + 1, 0);
    for (std::size_t k = 0; k < insns.size(); ++k)
        offsets[k + 1] = offsets[k] + encoded_length(insns[k].op);

    for (std::size_t k = 0; k < insns.size(); ++k) {
        auto& insn = insns[k];
        insn.offset = offsets[k];
        if (is_branch(insn.op) && insn.target) {
            if (*insn.target > insns.size())
                throw AsmError(AsmErrc::UnresolvedLabel, 0, "branch target out of range");
            const auto disp = static_cast<std::int64_t>(offsets[*insn.target]) - static_cast<std::int64_t>(offsets[k + 1]);
            if (!fits8(disp))
                throw AsmError(AsmErrc::DisplacementOverflow, 0,
                               "instruction " + std::to_string(k) + " branch displacement " + std::to_string(disp) +
                                   " does not fit in rel8");
            insn.imm = static_cast<std::int32_t>(disp);
        }
        insn.encoding = encode(insn);
        prog.text.insert(prog.text.end(), insn.encoding.begin(), insn.encoding.end());
    }
    for (const auto& [name, idx] : labels)
        if (idx > insns.size())
            throw AsmError(AsmErrc::UnresolvedLabel, 0, "label '" + name + "' out of range");
    prog.instructions = std::move(insns);
    prog.labels = std::move(labels);
    return prog;
}

std::string to_source(const ByteProgram& prog)
{
    std::map<std::size_t, std::string> names;
    for (const auto& [name, idx] : prog.labels)
        names.emplace(idx, name);
    for (const auto& insn : prog.instructions)
        if (is_branch(insn.op) && insn.target && !names.count(*insn.target))
            names.emplace(*insn.target, "L" + std::to_string(*insn.target));

    std::ostringstream out;
    for (std::size_t k = 0; k <= prog.instructions.size(); ++k) {
        for (const auto& [name, idx] : prog.labels)
            if (idx == k && names[k] != name)
                out << name << ":\n";
        if (auto it = names.find(k); it != names.end())
            out << it->second << ":\n";
        if (k == prog.instructions.size())
            break;
        const auto& insn = prog.instructions[k];
        out << "    " << to_string(insn, insn.target ? std::string_view(names[*insn.target]) : std::string_view{})
            << '\n';
    }
    return out.str();
}

Disassembly disassemble(ByteView text)
{
    Disassembly d;
    std::size_t at = 0;
    while (at < text.size()) {
        auto insn = decode_one(text, at);
        if (!insn) {
            d.error_offset = at;
            break;
        }
        at += insn->encoding.size();
        d.instructions.push_back(std::move(*insn));
    }
    std::map<std::size_t, std::size_t> index_of;
    for (std::size_t k = 0; k < d.instructions.size(); ++k)
        index_of.emplace(d.instructions[k].offset, k);
    if (!d.error_offset)
        index_of.emplace(text.size(), d.instructions.size());
    for (auto& insn : d.instructions) {
        if (!is_branch(insn.op))
            continue;
        const auto dest = static_cast<std::int64_t>(insn.offset + insn.encoding.size()) + insn.imm;
        if (dest < 0)
            continue;
        if (auto it = index_of.find(static_cast<std::size_t>(dest)); it != index_of.end())
            insn.target = it->second;
    }
    return d;
}

ByteProgram program_from_bytes(ByteView text)
{
    auto d = disassemble(text);
    if (d.error_offset)
        throw AsmError(AsmErrc::UndecodableText, 0, "undecodable byte at offset " + std::to_string(*d.error_offset));
    for (const auto& insn : d.instructions)
        if (is_branch(insn.op) && !insn.target)
            throw AsmError(AsmErrc::UndecodableText, 0,
                           "branch at offset " + std::to_string(insn.offset) + " does not land on an instruction");
    return layout(std::move(d.instructions));
}

} // namespace amao::isa
