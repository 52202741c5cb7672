#include "amao/progen.hpp"

namespace amao::progen {

using isa::Op;
using isa::Reg;

namespace {

constexpr std::array<Reg, 5> kDataRegs = {Reg::eax, Reg::ecx, Reg::edx, Reg::ebx, Reg::ebp};
constexpr Reg kCounter = Reg::esi;

Reg data_reg(std::mt19937_64& rng) { return kDataRegs[rng() % kDataRegs.size()]; }

std::int32_t imm8(std::mt19937_64& rng) { return static_cast<std::int32_t>(rng() % 256) - 128; }

bool coin(std::mt19937_64& rng, double p) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng) < p; }

} // namespace

void append(std::vector<isa::Instruction>& out, const Fragment& frag)
{
    const std::size_t base = out.size();
    for (auto insn : frag.insns) {
        if (insn.target)
            insn.target = *insn.target + base;
        out.push_back(std::move(insn));
    }
}

Fragment random_statement(std::mt19937_64& rng, const OpMix& mix, const ImmStyle& imm)
{
    const auto wide = [&] { return static_cast<std::int32_t>((static_cast<std::uint32_t>(rng()) & imm.mask) | imm.base); };
    std::discrete_distribution<int> pick({mix.mov_imm, mix.mov_rr, mix.add_rr, mix.xor_rr, mix.add_imm, mix.sub_imm,
                                          mix.lea, mix.push_pop, mix.emit, mix.xor_imm});
    Fragment f;
    switch (pick(rng)) {
    case 0: f.insns.push_back(isa::make(Op::MovImm, data_reg(rng), Reg::eax, wide())); break;
    case 1: f.insns.push_back(isa::make(Op::MovRR, data_reg(rng), data_reg(rng))); break;
    case 2: f.insns.push_back(isa::make(Op::AddRR, data_reg(rng), data_reg(rng))); break;
    case 3: f.insns.push_back(isa::make(Op::XorRR, data_reg(rng), data_reg(rng))); break;
    case 4: f.insns.push_back(isa::make(Op::AddImm8, data_reg(rng), Reg::eax, imm8(rng))); break;
    case 5: f.insns.push_back(isa::make(Op::SubImm8, data_reg(rng), Reg::eax, imm8(rng))); break;
    case 6: f.insns.push_back(isa::make(Op::Lea, data_reg(rng), data_reg(rng), imm8(rng))); break;
    case 7:
        f.insns.push_back(isa::make(Op::Push, data_reg(rng)));
        f.insns.push_back(isa::make(Op::Pop, data_reg(rng)));
        break;
    case 8: f.insns.push_back(isa::make(Op::Emit)); break;
    default: f.insns.push_back(isa::make(Op::XorImm32, data_reg(rng), Reg::eax, wide())); break;
    }
    return f;
}

Fragment random_block(std::mt19937_64& rng, const Shape& shape)
{
    Fragment f;
    const auto body = [&] {
        Fragment b;
        const std::size_t n = 1 + rng() % std::max<std::size_t>(1, shape.max_block);
        for (std::size_t i = 0; i < n; ++i)
            append(b.insns, random_statement(rng, shape.mix, shape.imm));
        return b;
    };
    if (coin(rng, shape.loop_prob)) {
        const auto trip = static_cast<std::int32_t>(1 + rng() % std::max<std::uint32_t>(1, shape.max_trip));
        f.insns.push_back(isa::make(Op::MovImm, kCounter, Reg::eax, trip));
        const std::size_t head = f.insns.size();
        append(f.insns, body());
        f.insns.push_back(isa::make(Op::SubImm8, kCounter, Reg::eax, 1));
        f.insns.push_back(isa::make_branch(Op::Jnz, head));
    } else if (coin(rng, shape.skip_prob)) {
        f.insns.push_back(isa::make(Op::CmpImm8, data_reg(rng), Reg::eax, imm8(rng)));
        const std::size_t jz = f.insns.size();
        f.insns.push_back(isa::make_branch(rng() & 1 ? Op::Jz : Op::Jnz, 0));
        append(f.insns, body());
        f.insns[jz].target = f.insns.size();
    } else {
        append(f.insns, random_statement(rng, shape.mix, shape.imm));
    }
    return f;
}

isa::ByteProgram random_program(std::mt19937_64& rng, const Shape& shape)
{
    std::vector<isa::Instruction> insns;
    const std::size_t span = shape.max_statements - shape.min_statements + 1;
    const std::size_t n = shape.min_statements + rng() % span;
    for (std::size_t i = 0; i < n; ++i)
        append(insns, random_block(rng, shape));
    insns.push_back(isa::make(shape.end_with_hlt ? Op::Hlt : Op::Ret));
    return isa::layout(std::move(insns));
}

} // namespace amao::progen
