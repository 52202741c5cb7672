#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <vector>

#include "amao/align.hpp"
#include "amao/isa.hpp"

// Comparison obfuscators. Everything except payload_append returns a program
// that the VM runs to the same observable end state as its input.
namespace amao::baselines {

struct Budget {
    double max_growth = 1.25; // output text length <= ceil(max_growth * input length)
    std::uint64_t seed = 1;
};

void validate(const Budget& b);
std::size_t size_limit(std::size_t original_len, const Budget& b);

// Rebuilds `prog` with instruction i replaced by expand(i). Branches and
// labels that named instruction i now name the first instruction of its
// replacement; targets inside replacements use original indices.
using Expansion = std::function<std::vector<isa::Instruction>(std::size_t)>;
isa::ByteProgram rewrite(const isa::ByteProgram& prog, const Expansion& expand);

// Trace that inserts inserts[j] (vocabulary indices, in order) at points[j]
// and matches every original instruction.
align::AlignmentTrace insertion_trace(const isa::ByteProgram& prog, const std::vector<std::size_t>& points,
                                      const std::vector<std::vector<std::size_t>>& inserts,
                                      const isa::Vocabulary& vocab);

// Random (boundary, nop) insertions until no vocabulary entry fits the
// remaining room. Returned as a trace so it replays through apply_trace.
align::AlignmentTrace random_nop_trace(const isa::ByteProgram& prog, const isa::Vocabulary& vocab, const Budget& b);
isa::ByteProgram random_nop_insert(const isa::ByteProgram& prog, const isa::Vocabulary& vocab, const Budget& b);

// text || payload. Throws DataError if the result exceeds the budget.
Bytes payload_append(ByteView text, ByteView payload, const Budget& b);

// Blocks end after every jmp/ret/hlt. Throws DataError when there are fewer
// than two blocks or the last instruction falls through.
std::vector<std::size_t> subroutine_starts(const isa::ByteProgram& prog);
isa::ByteProgram subroutine_reorder_with(const isa::ByteProgram& prog, const std::vector<std::size_t>& order);
isa::ByteProgram subroutine_reorder(const isa::ByteProgram& prog, std::uint64_t seed);

// `cuts` split the program into regions [cuts[j], cuts[j+1]); regions are
// laid out in `order` with jmps restoring the logical sequence.
isa::ByteProgram mix_control_flow_with(const isa::ByteProgram& prog, const std::vector<std::size_t>& cuts,
                                       const std::vector<std::size_t>& order);
isa::ByteProgram mix_control_flow(const isa::ByteProgram& prog, const Budget& b);

struct SubstituteConfig {
    double p = 0.5;            // chance of rewriting each eligible instruction
    bool static_values = true; // mov r, imm -> mov r, m; add r, a; xor r, x
    bool binary_ops = true;    // add r1, r2 -> add r1, R; add r1, r2; sub r1, R
};

// zf_dead[i] is true when ZF written by instruction i can never be observed.
std::vector<bool> zf_dead_after(const isa::ByteProgram& prog);

// mov r, imm rewritten with a given (m, a): x is solved from (m + a) ^ x == imm.
std::vector<isa::Instruction> static_value_sequence(isa::Reg r, std::uint32_t imm, std::uint32_t m, std::int8_t a);

isa::ByteProgram instruction_substitute(const isa::ByteProgram& prog, const SubstituteConfig& cfg, const Budget& b);

} // namespace amao::baselines
