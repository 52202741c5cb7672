#include "amao/corpus.hpp"

#include <cctype>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "amao/error.hpp"

namespace amao {

namespace {

progen::Shape shape(std::size_t lo, std::size_t hi, double loop, double skip, progen::OpMix mix,
                    progen::ImmStyle imm = {})
{
    progen::Shape s;
    s.min_statements = lo;
    s.max_statements = hi;
    s.loop_prob = loop;
    s.skip_prob = skip;
    s.max_block = 3;
    s.max_trip = 5;
    s.mix = mix;
    s.imm = imm;
    return s;
}

std::vector<isa::Instruction> motif_instructions(const std::string& snippet)
{
    auto p = isa::assemble(snippet + "\nret\n");
    p.instructions.pop_back();
    return p.instructions;
}

} // namespace

std::vector<ClassTemplate> default_templates()
{
    using progen::OpMix;
    std::vector<ClassTemplate> t;
    const auto add = [&](std::string name, progen::Shape s, std::vector<std::string> motifs) {
        ClassTemplate c;
        c.id = static_cast<int>(t.size());
        c.name = std::move(name);
        c.shape = s;
        c.motifs = std::move(motifs);
        t.push_back(std::move(c));
    };
    add("loader", shape(4, 7, 0.1, 0.1, OpMix{6, 1, 1, 0, 1, 0, 0, 0, 0, 0}, {0xFFFF, 0x00400000}),
        {"mov eax, 0x401000\nmov ecx, 0x401000", "mov edx, 0x403000\nmov ebx, edx"});
    add("xorer", shape(4, 8, 0.3, 0.0, OpMix{1, 0, 1, 4, 0, 0, 0, 0, 0, 3}, {0xFFFFFFFF, 0}),
        {"xor eax, 0x5a5a5a5a\nxor ecx, eax", "xor edx, edx\nxor ebx, 0x5a5a5a5a"});
    add("stacker", shape(5, 9, 0.0, 0.1, OpMix{1, 1, 0, 0, 0, 0, 0, 6, 0, 0}, {0xFF, 0}),
        {"push ebp\nmov ebp, esp\npush ebx\npop ebx\npop ebp"});
    add("printer", shape(3, 6, 0.2, 0.0, OpMix{2, 0, 0, 0, 1, 0, 0, 0, 4, 0}, {0x7F7F7F7F, 0x20202020}),
        {"mov eax, 0x4c4c4548\nemit eax\nmov eax, 0x0a4f\nemit eax"});
    add("counter", shape(3, 6, 0.6, 0.2, OpMix{1, 0, 2, 0, 4, 2, 0, 0, 0, 0}, {0xF, 0}),
        {"add eax, 1\nadd ecx, 1\ncmp ecx, 10"});
    add("mover", shape(5, 9, 0.0, 0.2, OpMix{1, 5, 1, 0, 0, 0, 4, 0, 0, 0}, {0xFF, 0}),
        {"lea eax, [ecx+8]\nlea edx, [ebx+16]\nmov ebx, eax"});
    add("bigimm", shape(3, 6, 0.1, 0.1, OpMix{6, 0, 0, 1, 0, 0, 0, 0, 0, 2}, {0xFFFFFFFF, 0x80000000}),
        {"mov edx, 0xffffffff\nmov ebx, 0xffffffff"});
    add("tiny", shape(2, 4, 0.1, 0.3, OpMix{1, 1, 1, 1, 1, 3, 1, 0, 0, 0}, {0xFF, 0}),
        {"sub eax, 0x7f\nsub ecx, 0x7f"});
    return t;
}

isa::ByteProgram synth_program(const ClassTemplate& t, std::mt19937_64& rng)
{
    using isa::Op;
    std::vector<std::vector<isa::Instruction>> motifs;
    for (const auto& m : t.motifs)
        motifs.push_back(motif_instructions(m));

    for (int attempt = 0; attempt < 100; ++attempt) {
        const std::size_t subs =
            t.min_subroutines + rng() % (t.max_subroutines - t.min_subroutines + 1);
        std::vector<isa::Instruction> insns;
        std::map<std::string, std::size_t> labels;
        std::vector<std::size_t> tail_jumps;
        for (std::size_t s = 0; s < subs; ++s) {
            if (s > 0) {
                insns[tail_jumps.back()].target = insns.size();
                labels["sub" + std::to_string(s)] = insns.size();
            }
            const std::size_t span = t.shape.max_statements - t.shape.min_statements + 1;
            const std::size_t blocks = t.shape.min_statements + rng() % span;
            std::vector<progen::Fragment> parts;
            for (std::size_t b = 0; b < blocks; ++b)
                parts.push_back(progen::random_block(rng, t.shape));
            const std::size_t nm = motifs.empty() ? 0 : t.motif_min + rng() % (t.motif_max - t.motif_min + 1);
            for (std::size_t k = 0; k < nm; ++k) {
                progen::Fragment f;
                f.insns = motifs[rng() % motifs.size()];
                parts.insert(parts.begin() + static_cast<std::ptrdiff_t>(rng() % (parts.size() + 1)), f);
            }
            for (const auto& f : parts)
                progen::append(insns, f);
            if (s + 1 < subs) {
                tail_jumps.push_back(insns.size());
                insns.push_back(isa::make_branch(Op::Jmp, 0));
            }
        }
        insns.push_back(isa::make(t.shape.end_with_hlt ? Op::Hlt : Op::Ret));
        try {
            auto p = isa::layout(std::move(insns), std::move(labels));
            isa::execute(p, isa::default_inputs());
            return p;
        } catch (const Error&) {
            continue;
        }
    }
    throw DataError("template '" + t.name + "' produced no valid program in 100 attempts");
}

std::vector<LabeledSample> synth_corpus(const std::vector<ClassTemplate>& templates, std::size_t per_class,
                                        std::uint64_t seed, const WidthPolicy& policy)
{
    if (templates.size() < 2)
        throw DataError("synth_corpus: need at least two class templates");
    std::vector<LabeledSample> out;
    for (const auto& t : templates) {
        // Each class draws from its own stream so adding a class leaves the
        // others untouched.
        std::mt19937_64 rng(seed * 0x9E3779B97F4A7C15ULL + static_cast<std::uint64_t>(t.id) + 1);
        for (std::size_t i = 0; i < per_class; ++i) {
            const auto p = synth_program(t, rng);
            char id[64];
            std::snprintf(id, sizeof id, "%s-%04zu", t.name.c_str(), i);
            out.push_back(make_sample(id, p.text, t.id, "template:" + t.name, policy));
        }
    }
    return out;
}

std::string corpus_hash(const std::vector<LabeledSample>& corpus)
{
    std::uint64_t h = 0xcbf29ce484222325ULL;
    const auto mix = [&](std::uint8_t b) {
        h ^= b;
        h *= 0x100000001b3ULL;
    };
    for (const auto& s : corpus) {
        for (char c : s.id)
            mix(static_cast<std::uint8_t>(c));
        mix(0);
        for (int k = 0; k < 4; ++k)
            mix(static_cast<std::uint8_t>(static_cast<std::uint32_t>(s.label) >> (8 * k)));
        for (auto b : s.bytes)
            mix(b);
        mix(0xFF);
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

Bytes ingest_hexdump(std::istream& in)
{
    Bytes out;
    std::string line;
    std::size_t line_no = 0;
    const auto fail = [&](const std::string& why) {
        throw DataError("hexdump line " + std::to_string(line_no) + ": " + why);
    };
    const auto hex = [](const std::string& t) {
        for (char c : t)
            if (!std::isxdigit(static_cast<unsigned char>(c)))
                return false;
        return !t.empty();
    };
    while (std::getline(in, line)) {
        ++line_no;
        std::istringstream ls(line);
        std::string addr;
        if (!(ls >> addr))
            continue;
        if (!hex(addr))
            fail("bad address '" + addr + "'");
        std::size_t count = 0;
        for (std::string tok; ls >> tok;) {
            if (tok == "??")
                out.push_back(0x00);
            else if (tok.size() == 2 && hex(tok))
                out.push_back(static_cast<std::uint8_t>(std::stoul(tok, nullptr, 16)));
            else
                fail("bad byte '" + tok + "'");
            if (++count > 16)
                fail("more than 16 bytes");
        }
    }
    return out;
}

Bytes ingest_hexdump(const std::string& path)
{
    std::ifstream in(path);
    if (!in)
        throw DataError("cannot open " + path);
    return ingest_hexdump(in);
}

} // namespace amao
