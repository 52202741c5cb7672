#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "amao/codec.hpp"
#include "amao/error.hpp"

// A closed x86-32 flavoured instruction subset: encoder, linear-sweep
// decoder, two-pass assembler and a byte-level interpreter.
namespace amao::isa {

enum class Reg : std::uint8_t { eax, ecx, edx, ebx, esp, ebp, esi, edi };
inline constexpr std::size_t kNumRegs = 8;

enum class Op : std::uint8_t {
    Nop,       // 90
    XchgAx,    // 66 90
    MovImm,    // B8+r id
    MovRR,     // 89 /r
    AddRR,     // 01 /r
    XorRR,     // 31 /r
    XchgRR,    // 87 /r
    AddImm8,   // 83 /0 ib
    SubImm8,   // 83 /5 ib
    CmpImm8,   // 83 /7 ib
    AddImm32,  // 81 /0 id
    SubImm32,  // 81 /5 id
    XorImm32,  // 81 /6 id
    Lea,       // 8D /r disp8, mod=01
    Push,      // 50+r
    Pop,       // 58+r
    Jmp,       // EB cb
    Jz,        // 74 cb
    Jnz,       // 75 cb
    Ret,       // C3
    Hlt,       // F4
    Emit,      // E7 00, appends eax to the output stream
};

std::size_t encoded_length(Op op);
bool is_branch(Op op);
bool is_terminator(Op op);           // ret, hlt
bool falls_through(Op op);           // false for jmp, ret, hlt
bool writes_zf(Op op);
bool reads_zf(Op op);

// For register-register forms `dst` is the ModRM r/m operand and `src` the reg
// operand, so "mov eax, ecx" is {MovRR, dst=eax, src=ecx}. Lea keeps its base
// register in `src`. Branches keep the encoded rel8 in `imm`; `target` is the
// index of the destination instruction when known, and layout() recomputes the
// displacement from it. Branches without a target keep `imm` verbatim.
struct Instruction {
    Op op = Op::Nop;
    Reg dst = Reg::eax;
    Reg src = Reg::eax;
    std::int32_t imm = 0;
    std::optional<std::size_t> target;
    std::size_t offset = 0;
    Bytes encoding;

    // Structural equality: ignores offset and target bookkeeping.
    bool same_instruction(const Instruction& other) const;
};

Instruction make(Op op, Reg dst = Reg::eax, Reg src = Reg::eax, std::int32_t imm = 0);
Instruction make_branch(Op op, std::size_t target);

Bytes encode(const Instruction& insn);
std::optional<Instruction> decode_one(ByteView text, std::size_t offset);

std::string_view reg_name(Reg r);
// Mnemonic form; branches print `label` if given, else a signed rel8.
std::string to_string(const Instruction& insn, std::string_view label = {});

enum class AsmErrc {
    UnknownMnemonic,
    BadOperand,
    UnresolvedLabel,
    DuplicateLabel,
    DisplacementOverflow,
    UndecodableText,
};

class AsmError : public Error {
public:
    AsmError(AsmErrc code, std::size_t line, const std::string& what);
    AsmErrc code() const { return code_; }
    std::size_t line() const { return line_; }

private:
    AsmErrc code_;
    std::size_t line_;
};

struct ByteProgram {
    std::vector<Instruction> instructions;
    std::map<std::string, std::size_t> labels;  // label -> instruction index (may equal size())
    Bytes text;

    std::size_t size() const { return instructions.size(); }
};

// Assembly text: one instruction per line, optional `label:` prefix, `;` comments.
ByteProgram assemble(std::string_view source);

// Recomputes offsets, branch displacements and the text section. Throws
// AsmError(DisplacementOverflow) if a resolved branch no longer fits in rel8.
ByteProgram layout(std::vector<Instruction> instructions, std::map<std::string, std::size_t> labels = {});

// Listing that assemble() maps back to the same bytes.
std::string to_source(const ByteProgram& prog);

struct Disassembly {
    std::vector<Instruction> instructions;
    std::optional<std::size_t> error_offset;
};

// Greedy linear sweep. Branch targets are resolved to instruction indices
// whenever they land on a decoded boundary (or the end of the text).
Disassembly disassemble(ByteView text);

// Lifts a raw text section into a ByteProgram. Throws AsmError if the bytes
// do not decode or a branch targets a non-boundary.
ByteProgram program_from_bytes(ByteView text);

// ---------------------------------------------------------------------------
// Interpreter

inline constexpr std::size_t kMemSize = 64 * 1024;
inline constexpr std::uint32_t kStackTop = kMemSize;

using RegisterFile = std::array<std::uint32_t, kNumRegs>;

// All registers zero except esp at the top of memory.
RegisterFile default_inputs();

struct MachineState {
    RegisterFile regs{};
    bool zf = false;
    std::vector<std::uint8_t> mem = std::vector<std::uint8_t>(kMemSize, 0);
    std::size_t pc = 0;
    std::vector<std::uint32_t> output;
    bool halted = false;
    std::size_t steps = 0;

    std::uint32_t reg(Reg r) const { return regs[static_cast<std::size_t>(r)]; }
};

MachineState initial_state(const RegisterFile& inputs);

enum class ExecErrc { NonTermination, WildJump, IllegalInstruction, StackFault };

class ExecError : public Error {
public:
    ExecError(ExecErrc code, std::size_t pc, const std::string& what);
    ExecErrc code() const { return code_; }
    std::size_t pc() const { return pc_; }

private:
    ExecErrc code_;
    std::size_t pc_;
};

// Executes one instruction decoded from `text` at state.pc.
void step(MachineState& state, ByteView text);

// Runs from `state` until hlt/ret or until pc == stop_at (if given).
void run(MachineState& state, ByteView text, std::size_t budget, std::optional<std::size_t> stop_at = {});

inline constexpr std::size_t kDefaultBudget = 100000;

MachineState execute(const ByteProgram& prog, const RegisterFile& inputs, std::size_t budget = kDefaultBudget);
MachineState execute(ByteView text, const RegisterFile& inputs, std::size_t budget = kDefaultBudget);

// Observable-state equality: registers, ZF, output and the live stack
// (memory at or above esp). Memory below esp is dead.
bool equivalent(const MachineState& a, const MachineState& b);

// ---------------------------------------------------------------------------
// Semantic nops

struct SemanticNop {
    std::string name;
    Bytes encoding;

    std::size_t length() const { return encoding.size(); }
    bool operator==(const SemanticNop&) const = default;
};

using Vocabulary = std::vector<SemanticNop>;

Vocabulary default_vocabulary();
std::size_t max_length(std::span<const SemanticNop> vocab);

// One nop per line: hex bytes followed by a name, e.g. "50 58 push_pop_eax".
Vocabulary parse_vocabulary(std::istream& in);
void write_vocabulary(std::span<const SemanticNop> vocab, std::ostream& out);

struct VocabViolation {
    std::string name;
    std::string reason;
    MachineState witness;
};

struct VocabReport {
    std::size_t trials = 0;
    std::vector<VocabViolation> violations;

    bool ok() const { return violations.empty(); }
};

// Executes every nop from `trials` random machine states and reports any
// entry that changes observable state or does not fall through.
VocabReport verify_vocabulary(std::span<const SemanticNop> vocab, std::size_t trials, std::uint64_t seed);

// Instruction boundaries 0..K at which inserting up to `max_insert_len`
// bytes cannot overflow any rel8 branch.
std::vector<std::size_t> find_insertion_points(const ByteProgram& prog, std::size_t max_insert_len);

} // namespace amao::isa
