#include "doctest.h"

#include <random>
#include <sstream>

#include "amao/isa.hpp"
#include "amao/progen.hpp"

using namespace amao;
using namespace amao::isa;

namespace {

const char* kFig1Left = R"(
    xor eax, eax
    mov eax, 0x45
    mov ecx, 0x20
    ret
)";

const char* kFig1Right = R"(
    xor eax, eax
    nop
    mov eax, 0x45
    mov ecx, 0x20
    ret
)";

AsmErrc asm_error_code(const char* src)
{
    try {
        assemble(src);
    } catch (const AsmError& e) {
        return e.code();
    }
    FAIL("expected an assembler error");
    return AsmErrc::BadOperand;
}

} // namespace

TEST_CASE("encodings")
{
    CHECK(assemble("mov eax, ecx").text == Bytes{0x89, 0xC8});
    CHECK(assemble("nop").text == Bytes{0x90});
    CHECK(assemble("xchg ax, ax").text == Bytes{0x66, 0x90});
    CHECK(assemble("lea ecx, [ecx+0]").text == Bytes{0x8D, 0x49, 0x00});
    CHECK(assemble("push ebx\npop ebx").text == Bytes{0x53, 0x5B});
    CHECK(assemble("add eax, 3").text == Bytes{0x83, 0xC0, 0x03});
    CHECK(assemble("sub edx, 1").text == Bytes{0x83, 0xEA, 0x01});
    CHECK(assemble("cmp ebx, -1").text == Bytes{0x83, 0xFB, 0xFF});
    CHECK(assemble("xor eax, 0x5a").text == Bytes{0x81, 0xF0, 0x5A, 0x00, 0x00, 0x00});
    CHECK(assemble("add eax, 0x1000").text == Bytes{0x81, 0xC0, 0x00, 0x10, 0x00, 0x00});
    CHECK(assemble("emit eax\nhlt\nret").text == Bytes{0xE7, 0x00, 0xF4, 0xC3});
    CHECK(assemble("l: jmp l").text == Bytes{0xEB, 0xFE});
    CHECK(assemble("jmp short +0").text == Bytes{0xEB, 0x00});
    CHECK(assemble("xchg ecx, ecx").text == Bytes{0x87, 0xC9});
}

TEST_CASE("worked example program is 13 bytes")
{
    const auto p = assemble(kFig1Left);
    CHECK(p.size() == 4);
    CHECK(p.text.size() == 2 + 5 + 5 + 1);
    CHECK(p.text == Bytes{0x31, 0xC0, 0xB8, 0x45, 0, 0, 0, 0xB9, 0x20, 0, 0, 0, 0xC3});
}

TEST_CASE("disassembly examples")
{
    auto d = disassemble(Bytes{0x89, 0xC8});
    REQUIRE(d.instructions.size() == 1);
    CHECK_FALSE(d.error_offset);
    CHECK(to_string(d.instructions[0]) == "mov eax, ecx");

    d = disassemble(Bytes{0x89, 0xC9});
    REQUIRE(d.instructions.size() == 1);
    CHECK(to_string(d.instructions[0]) == "mov ecx, ecx");

    d = disassemble(Bytes{0xF1});
    CHECK(d.instructions.empty());
    CHECK(d.error_offset == 0u);

    // Partial decode keeps the prefix.
    d = disassemble(Bytes{0x90, 0x90, 0x0F});
    CHECK(d.instructions.size() == 2);
    CHECK(d.error_offset == 2u);

    // Truncated immediates and non-register ModRM forms are rejected.
    CHECK(disassemble(Bytes{0xB8, 0x01}).error_offset == 0u);
    CHECK(disassemble(Bytes{0x89, 0x00}).error_offset == 0u);
    CHECK(disassemble(Bytes{0x8D, 0x44, 0x00}).error_offset == 0u);
}

TEST_CASE("assembler errors are distinct")
{
    CHECK(asm_error_code("frob eax") == AsmErrc::UnknownMnemonic);
    CHECK(asm_error_code("jmp nowhere") == AsmErrc::UnresolvedLabel);
    CHECK(asm_error_code("a:\na: nop") == AsmErrc::DuplicateLabel);
    std::string far = "jmp end\n";
    for (int i = 0; i < 30; ++i)
        far += "mov eax, 1\n";
    far += "end: ret\n";
    CHECK(asm_error_code(far.c_str()) == AsmErrc::DisplacementOverflow);
    CHECK(asm_error_code("mov eax") == AsmErrc::BadOperand);
    CHECK(asm_error_code("lea eax, [esp+4]") == AsmErrc::BadOperand);
}

TEST_CASE("worked example executes and the nop variant matches")
{
    const auto left = execute(assemble(kFig1Left), default_inputs());
    CHECK(left.halted);
    CHECK(left.reg(Reg::eax) == 0x45);
    CHECK(left.reg(Reg::ecx) == 0x20);
    const auto right = execute(assemble(kFig1Right), default_inputs());
    CHECK(equivalent(left, right));
}

TEST_CASE("hlt leaves inputs untouched")
{
    RegisterFile in = default_inputs();
    in[0] = 7;
    in[3] = 0xDEADBEEF;
    const auto s = execute(assemble("hlt"), in);
    CHECK(s.regs == in);
    CHECK(s.steps == 1);
}

TEST_CASE("execution errors")
{
    try {
        execute(assemble("l: jmp l"), default_inputs(), 100);
        FAIL("expected non-termination");
    } catch (const ExecError& e) {
        CHECK(e.code() == ExecErrc::NonTermination);
    }
    try {
        execute(assemble("nop"), default_inputs());
        FAIL("expected wild jump");
    } catch (const ExecError& e) {
        CHECK(e.code() == ExecErrc::WildJump);
    }
    try {
        RegisterFile in = default_inputs();
        in[static_cast<int>(Reg::esp)] = 2;
        execute(assemble("push eax\nret"), in);
        FAIL("expected stack fault");
    } catch (const ExecError& e) {
        CHECK(e.code() == ExecErrc::StackFault);
    }
}

TEST_CASE("loops, flags and output")
{
    const auto s = execute(assemble(R"(
        mov esi, 3
        mov eax, 0
    top:
        add eax, 2
        emit eax
        sub esi, 1
        jnz top
        cmp eax, 6
        jz done
        mov ebx, 1
    done:
        ret
    )"),
                           default_inputs());
    CHECK(s.output == std::vector<std::uint32_t>{2, 4, 6});
    CHECK(s.reg(Reg::ebx) == 0);
    CHECK(s.zf);
}

TEST_CASE("xchg and push/pop of esp follow x86")
{
    auto s = execute(assemble("mov eax, 1\nmov ecx, 2\nxchg eax, ecx\nret"), default_inputs());
    CHECK(s.reg(Reg::eax) == 2);
    CHECK(s.reg(Reg::ecx) == 1);
    s = execute(assemble("push esp\npop eax\nret"), default_inputs());
    CHECK(s.reg(Reg::eax) == kStackTop);
    CHECK(s.reg(Reg::esp) == kStackTop);
}

TEST_CASE("dead stack memory does not count")
{
    auto a = execute(assemble("push eax\npop eax\nret"), default_inputs());
    auto b = execute(assemble("ret"), default_inputs());
    CHECK(equivalent(a, b));
    auto c = execute(assemble("push eax\nret"), default_inputs());
    CHECK_FALSE(equivalent(a, c));
}

TEST_CASE("assemble and disassemble are inverse on random programs")
{
    std::mt19937_64 rng(5);
    progen::Shape shape;
    shape.mix.xor_imm = 1;
    shape.loop_prob = 0.2;
    shape.skip_prob = 0.2;
    for (int t = 0; t < 300; ++t) {
        const auto p = progen::random_program(rng, shape);
        const auto d = disassemble(p.text);
        REQUIRE_FALSE(d.error_offset);
        REQUIRE(d.instructions.size() == p.size());
        for (std::size_t k = 0; k < p.size(); ++k) {
            REQUIRE(d.instructions[k].same_instruction(p.instructions[k]));
            REQUIRE(d.instructions[k].target == p.instructions[k].target);
        }
        const auto again = assemble(to_source(p));
        REQUIRE(again.text == p.text);
        REQUIRE(program_from_bytes(p.text).text == p.text);
        // Generated programs terminate.
        REQUIRE(execute(p, default_inputs()).halted);
    }
}

TEST_CASE("insertion points on straight-line code")
{
    const auto p = assemble(kFig1Left);
    CHECK(find_insertion_points(p, 3) == std::vector<std::size_t>{0, 1, 2, 3, 4});
    CHECK(find_insertion_points(assemble("ret"), 3) == std::vector<std::size_t>{0, 1});
}

namespace {

// Oracle: actually insert every vocabulary entry at every boundary and see
// whether layout survives.
std::vector<std::size_t> insertion_points_by_trial(const ByteProgram& p, const Vocabulary& vocab)
{
    std::vector<std::size_t> ok;
    for (std::size_t b = 0; b <= p.size(); ++b) {
        bool legal = true;
        for (const auto& nop : vocab) {
            std::vector<Instruction> insns;
            std::vector<std::size_t> remap(p.size() + 1);
            for (std::size_t k = 0; k <= p.size(); ++k) {
                if (k == b)
                    for (auto n : disassemble(nop.encoding).instructions) {
                        n.target.reset();
                        insns.push_back(n);
                    }
                remap[k] = insns.size();
                if (k < p.size())
                    insns.push_back(p.instructions[k]);
            }
            for (auto& i : insns)
                if (i.target)
                    i.target = remap[*i.target];
            // Nop instructions were pushed without targets, originals get
            // remapped above; an overflow shows up as an exception.
            try {
                layout(insns);
            } catch (const AsmError&) {
                legal = false;
            }
        }
        if (legal)
            ok.push_back(b);
    }
    return ok;
}

} // namespace

TEST_CASE("insertion points exclude tight branch spans")
{
    // The control-flow-mixing listing with its middle region padded so the
    // backward "jmp L05" sits at displacement -128.
    std::string src = R"(
        jmp short L16
    L05:
        mov eax, 0x45
        mov ecx, 0x20
        jmp short L1d
    L16:
        xor eax, eax
    )";
    std::string pad;
    for (int i = 0; i < 22; ++i)
        pad += "        mov edx, 0x1\n";
    pad += "        xor ebx, ebx\n";
    src += pad;
    src += R"(
        jmp L05
    L1d:
        ret
    )";
    const auto p = assemble(src);
    const auto vocab = default_vocabulary();
    const auto got = find_insertion_points(p, max_length(vocab));
    const auto oracle = insertion_points_by_trial(p, vocab);
    CHECK(p.instructions[p.size() - 2].imm == -128);
    CHECK(got == oracle);
    CHECK(got.size() < p.size() + 1);
    CHECK(got.front() == 0);
    CHECK(got.back() == p.size());

    // Same check on random programs with long loops.
    std::mt19937_64 rng(9);
    progen::Shape shape;
    shape.loop_prob = 0.5;
    shape.max_block = 40;
    for (int t = 0; t < 40; ++t) {
        ByteProgram q;
        try {
            q = progen::random_program(rng, shape);
        } catch (const AsmError&) {
            continue;
        }
        REQUIRE(find_insertion_points(q, max_length(vocab)) == insertion_points_by_trial(q, vocab));
    }
}

TEST_CASE("vocabulary verification")
{
    const auto good = verify_vocabulary(default_vocabulary(), 200, 1);
    CHECK(good.ok());
    CHECK(default_vocabulary().size() == 16);

    CHECK(verify_vocabulary(Vocabulary{{"nop", {0x90}}}, 200, 2).ok());
    CHECK(verify_vocabulary(Vocabulary{{"push_pop", {0x50, 0x58}}}, 200, 3).ok());

    const auto bad = verify_vocabulary(Vocabulary{{"xor_eax", {0x31, 0xC0}}}, 200, 4);
    REQUIRE(bad.violations.size() == 1);
    CHECK(bad.violations[0].name == "xor_eax");
    const auto& w = bad.violations[0].witness;
    CHECK((w.reg(Reg::eax) != 0 || !w.zf));

    // Flag-modifying pseudo-nop is caught through ZF.
    const auto flags = verify_vocabulary(Vocabulary{{"add_eax_0", {0x83, 0xC0, 0x00}}}, 200, 5);
    CHECK_FALSE(flags.ok());

    CHECK_FALSE(verify_vocabulary(Vocabulary{{"junk", {0xF1}}}, 10, 6).ok());
    CHECK_FALSE(verify_vocabulary(Vocabulary{{"jump_away", {0xEB, 0x05}}}, 10, 7).ok());
}

TEST_CASE("vocabulary file round trip")
{
    std::ostringstream out;
    write_vocabulary(default_vocabulary(), out);
    std::istringstream in(out.str() + "# comment\n\n");
    CHECK(parse_vocabulary(in) == default_vocabulary());
    std::istringstream bad("zz nop\n");
    CHECK_THROWS_AS(parse_vocabulary(bad), DataError);
}
