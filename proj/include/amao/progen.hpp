#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "amao/isa.hpp"

// Random terminating desk-ISA programs. Branch spans stay short so that a
// moderate number of insertions can never overflow a rel8 displacement.
namespace amao::progen {

// Relative weights of straight-line instruction kinds.
struct OpMix {
    double mov_imm = 3;
    double mov_rr = 2;
    double add_rr = 2;
    double xor_rr = 1;
    double add_imm = 2;
    double sub_imm = 1;
    double lea = 1;
    double push_pop = 1;
    double emit = 1;
    double xor_imm = 0;
};

// Immediates for mov/xor are (random & mask) | base.
struct ImmStyle {
    std::uint32_t mask = 0xFFFFFFFF;
    std::uint32_t base = 0;
};

struct Shape {
    std::size_t min_statements = 4;
    std::size_t max_statements = 24;
    double loop_prob = 0.1;     // bounded counted loop
    double skip_prob = 0.1;     // cmp + jz over a short block
    std::size_t max_block = 4;  // statements inside a loop or skip body
    std::uint32_t max_trip = 6; // loop trip count upper bound
    bool end_with_hlt = false;
    OpMix mix;
    ImmStyle imm;
};

// A source-level fragment: instructions whose branch targets are local
// indices within `insns` (index == insns.size() means "just past the end").
struct Fragment {
    std::vector<isa::Instruction> insns;
};

// Appends `frag` to `out`, rebasing its local branch targets.
void append(std::vector<isa::Instruction>& out, const Fragment& frag);

Fragment random_statement(std::mt19937_64& rng, const OpMix& mix, const ImmStyle& imm = {});
Fragment random_block(std::mt19937_64& rng, const Shape& shape);

isa::ByteProgram random_program(std::mt19937_64& rng, const Shape& shape = {});

} // namespace amao::progen
