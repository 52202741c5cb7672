#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <random>
#include <string>
#include <vector>

#include "amao/dataset.hpp"
#include "amao/isa.hpp"
#include "amao/progen.hpp"

namespace amao {

// A synthetic malware family: programs are chains of 2..max_subroutines
// label-delimited subroutines joined by jmp, built from the family's
// instruction mix and seeded with its signature motifs.
struct ClassTemplate {
    int id = 0;
    std::string name;
    progen::Shape shape;
    std::vector<std::string> motifs; // assembly snippets, no labels
    std::size_t motif_min = 1, motif_max = 2; // motif occurrences per subroutine
    std::size_t min_subroutines = 2, max_subroutines = 3;
};

std::vector<ClassTemplate> default_templates();

// Throws DataError after 100 attempts that fail to assemble or terminate.
isa::ByteProgram synth_program(const ClassTemplate& t, std::mt19937_64& rng);

std::vector<LabeledSample> synth_corpus(const std::vector<ClassTemplate>& templates, std::size_t per_class,
                                        std::uint64_t seed, const WidthPolicy& policy);

// FNV-1a over ids, labels and bytes; stable across platforms.
std::string corpus_hash(const std::vector<LabeledSample>& corpus);

// "ADDRESS b0 b1 ... b15" lines; "??" reads as 0x00. Blank lines are skipped.
Bytes ingest_hexdump(std::istream& in);
Bytes ingest_hexdump(const std::string& path);

} // namespace amao
