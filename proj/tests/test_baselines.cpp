#include "doctest.h"

#include <random>

#include "amao/baselines.hpp"
#include "amao/corpus.hpp"
#include "amao/progen.hpp"

using namespace amao;
using namespace amao::baselines;

namespace {

bool same_behaviour(const isa::ByteProgram& a, const isa::ByteProgram& b)
{
    return isa::equivalent(isa::execute(a, isa::default_inputs()), isa::execute(b, isa::default_inputs()));
}

} // namespace

TEST_CASE("control flow mixing reproduces the worked listing")
{
    const auto prog = isa::assemble("xor eax, eax\nmov eax, 0x45\nmov ecx, 0x20\nret");
    const auto mixed = mix_control_flow_with(prog, {1, 3}, {1, 0, 2});
    const auto expect = isa::assemble(R"(
        jmp first
    second:
        mov eax, 0x45
        mov ecx, 0x20
        jmp last
    first:
        xor eax, eax
        jmp second
    last:
        ret
    )");
    CHECK(mixed.text == expect.text);
    CHECK(mixed.size() == 7);
    CHECK(same_behaviour(prog, mixed));
    CHECK(mix_control_flow_with(prog, {}, {0}).text == prog.text);
    CHECK_THROWS_AS(mix_control_flow_with(prog, {2, 1}, {0, 1, 2}), DataError);
}

TEST_CASE("static value triple")
{
    const auto seq = static_value_sequence(isa::Reg::eax, 0x12, 0x45, 0x03);
    REQUIRE(seq.size() == 3);
    CHECK(seq[2].imm == 0x5a);
    std::vector<isa::Instruction> body(seq);
    body.push_back(isa::make(isa::Op::Ret));
    const auto s = isa::execute(isa::layout(body), isa::default_inputs());
    CHECK(s.reg(isa::Reg::eax) == 0x12);
    // Negative a and wrap-around.
    const auto wrap = static_value_sequence(isa::Reg::ebx, 0xDEADBEEF, 0xFFFFFFF0, -100);
    body.assign(wrap.begin(), wrap.end());
    body.push_back(isa::make(isa::Op::Ret));
    CHECK(isa::execute(isa::layout(body), isa::default_inputs()).reg(isa::Reg::ebx) == 0xDEADBEEF);
}

TEST_CASE("zf liveness")
{
    const auto prog = isa::assemble(R"(
        mov eax, 1
        cmp eax, 1
        mov ecx, 2
        jz done
        mov edx, 3
        add edx, 1
    done:
        mov ebx, 4
        ret
    )");
    const auto dead = zf_dead_after(prog);
    CHECK(dead[0]);      // cmp overwrites
    CHECK_FALSE(dead[2]); // jz reads
    CHECK(dead[4]);      // add overwrites
    CHECK_FALSE(dead[6]); // ret exposes ZF
}

TEST_CASE("degenerate settings are identities")
{
    std::mt19937_64 rng(4);
    const auto vocab = isa::default_vocabulary();
    for (int t = 0; t < 20; ++t) {
        const auto prog = progen::random_program(rng);
        CHECK(random_nop_insert(prog, vocab, {1.0, 3}).text == prog.text);
        CHECK(instruction_substitute(prog, {0.0, true, true}, {2.0, 3}).text == prog.text);
        CHECK(mix_control_flow(prog, {1.0, 3}).text == prog.text);
        CHECK(payload_append(prog.text, {}, {1.0, 1}) == prog.text);
    }
}

TEST_CASE("payload append")
{
    const auto prog = isa::assemble("mov eax, 7\nemit\nret");
    const Bytes payload{0xFF, 0xFF, 0x0F};
    const auto out = payload_append(prog.text, payload, {1.5, 1});
    CHECK(out.size() == prog.text.size() + 3);
    CHECK(std::equal(prog.text.begin(), prog.text.end(), out.begin()));
    // The terminator runs before the appended bytes would be decoded.
    CHECK(isa::equivalent(isa::execute(prog, isa::default_inputs()),
                          isa::execute(ByteView(out), isa::default_inputs())));
    CHECK_THROWS_AS(payload_append(prog.text, Bytes(6, 0), {1.25, 1}), DataError);
}

TEST_CASE("subroutine reorder")
{
    const auto prog = isa::assemble(R"(
        mov eax, 1
        jmp b
    c:
        emit
        ret
    b:
        add eax, 2
        jmp c
    )");
    CHECK(subroutine_starts(prog) == std::vector<std::size_t>{0, 2, 4});
    CHECK(subroutine_reorder_with(prog, {0, 1, 2}).text == prog.text);
    const auto swapped = subroutine_reorder_with(prog, {0, 2, 1});
    CHECK(swapped.text != prog.text);
    CHECK(swapped.text.size() == prog.text.size());
    CHECK(same_behaviour(prog, swapped));
    CHECK(swapped.labels.at("b") == 2);
    CHECK_THROWS_AS(subroutine_reorder_with(prog, {1, 0, 2}), DataError);
    CHECK_THROWS_AS(subroutine_starts(isa::assemble("mov eax, 1\nret")), DataError);
    CHECK_THROWS_AS(subroutine_starts(isa::assemble("mov eax, 1")), DataError);
}

TEST_CASE("random insertion trace replays")
{
    std::mt19937_64 rng(8);
    const auto vocab = isa::default_vocabulary();
    const auto prog = progen::random_program(rng);
    const Budget b{1.25, 11};
    const auto t = random_nop_trace(prog, vocab, b);
    const auto out = random_nop_insert(prog, vocab, b);
    CHECK(out.text == align::apply_trace(prog, t, vocab).text);
    CHECK(out.text.size() == t.achieved_length);
    // Fills the room: at most the shortest nop is left over.
    CHECK(out.text.size() + 1 > size_limit(prog.text.size(), b));
}

TEST_CASE("every baseline preserves behaviour within budget")
{
    std::mt19937_64 rng(99);
    const auto vocab = isa::default_vocabulary();
    const auto templates = default_templates();
    std::size_t reordered = 0, mixed = 0, substituted = 0;
    for (int t = 0; t < 200; ++t) {
        const auto prog = t % 2 ? progen::random_program(rng) : synth_program(templates[t % templates.size()], rng);
        const Budget b{1.0 + 0.25 * (t % 4), static_cast<std::uint64_t>(t)};
        const std::size_t limit = size_limit(prog.text.size(), b);
        const auto check = [&](const isa::ByteProgram& out) {
            REQUIRE(out.text.size() <= limit);
            REQUIRE(same_behaviour(prog, out));
            REQUIRE(isa::program_from_bytes(out.text).text == out.text);
        };
        check(random_nop_insert(prog, vocab, b));
        const auto mix = mix_control_flow(prog, b);
        check(mix);
        mixed += mix.text != prog.text;
        const auto sub = instruction_substitute(prog, {0.7, true, true}, b);
        check(sub);
        substituted += sub.text != prog.text;
        check(instruction_substitute(prog, {1.0, true, false}, b));
        check(instruction_substitute(prog, {1.0, false, true}, b));
        if (t % 2 == 0) {
            const auto re = subroutine_reorder(prog, b.seed);
            REQUIRE(re.text.size() == prog.text.size());
            REQUIRE(same_behaviour(prog, re));
            reordered += re.text != prog.text;
        }
    }
    CHECK(reordered > 25);
    CHECK(mixed > 100);
    CHECK(substituted > 50);
}
