#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <limits>
#include <string>
#include <string_view>
#include <vector>

#include "amao/codec.hpp"
#include "amao/isa.hpp"

namespace amao::align {

enum class Metric { bit, byte_l0, pixel_l2 };

std::string_view metric_name(Metric m);
Metric parse_metric(std::string_view name);

// Left-pads `s` with zero bytes up to `n` (no-op if already that long).
Bytes front_pad(ByteView s, std::size_t n);

// Additive integer cost over equal-length strings: differing bits, differing
// bytes, or the sum of squared byte differences (pixel_l2 before the sqrt).
std::int64_t raw_cost(ByteView a, ByteView b, Metric m);
double finalize_cost(std::int64_t raw, Metric m);

// Distance after front-padding the shorter string with zeros.
double distance(ByteView a, ByteView b, Metric m);

// Largest absolute byte difference. Not usable as an alignment metric: padding
// the tail with any byte within the current maximum is free.
int linf_distance(ByteView a, ByteView b);

enum class AlignErrc { TargetShorter, EnumerationBudget, InvalidTrace, DisplacementOverflow };

class AlignError : public Error {
public:
    AlignError(AlignErrc code, const std::string& what) : Error(what), code_(code) {}
    AlignErrc code() const { return code_; }

private:
    AlignErrc code_;
};

struct AlignmentProblem {
    Bytes target;                        // B1, n bytes
    isa::ByteProgram original;           // B2, m text bytes
    std::vector<std::size_t> boundaries; // legal insertion points, subset of 0..K
    isa::Vocabulary vocab;
    Metric metric = Metric::pixel_l2;
};

// Boundaries from find_insertion_points with the vocabulary's longest entry.
AlignmentProblem make_problem(Bytes target, isa::ByteProgram original, isa::Vocabulary vocab, Metric metric);

struct Decision {
    enum class Kind { Match, Insert };
    Kind kind = Kind::Match;
    std::size_t instruction = 0; // Match: instruction index
    std::size_t nop = 0;         // Insert: vocabulary index
    std::size_t boundary = 0;    // Insert: boundary index

    static Decision match(std::size_t k) { return {Kind::Match, k, 0, 0}; }
    static Decision insert(std::size_t nop, std::size_t boundary) { return {Kind::Insert, 0, nop, boundary}; }
    bool operator==(const Decision&) const = default;
};

struct AlignmentTrace {
    std::vector<Decision> decisions;
    std::int64_t raw_cost = 0;
    double total_cost = 0.0;
    std::size_t achieved_length = 0;

    std::size_t insert_count() const;
};

// cost(r, k): best cost of emitting the program suffix starting at boundary k
// (insertions at k first, then unit k, ...) as exactly r bytes, aligned to
// the last r bytes of the target. Front-padding the obfuscated output with
// zeros is then exact: the answer is min_r cost(r, 0) + pad(n - r).
struct DPTable {
    static constexpr std::int64_t kInf = std::numeric_limits<std::int64_t>::max() / 4;
    static constexpr std::int32_t kMatch = -1;
    static constexpr std::int32_t kNone = -2;

    std::size_t rows = 0; // n + 1
    std::size_t cols = 0; // K + 1
    std::vector<std::int64_t> cost;
    std::vector<std::int32_t> back; // kMatch, kNone, or vocabulary index

    std::int64_t at(std::size_t r, std::size_t k) const { return cost[r * cols + k]; }
    std::int32_t choice(std::size_t r, std::size_t k) const { return back[r * cols + k]; }
};

struct Alignment {
    DPTable table;
    AlignmentTrace trace;
};

// Row-parallel DP (OpenMP over boundaries within an output-length row).
Alignment align(const AlignmentProblem& p);
// Single-threaded reference with identical tie-breaking.
Alignment align_serial(const AlignmentProblem& p);

struct BruteForceResult {
    std::int64_t raw_cost = 0;
    double cost = 0.0;
    AlignmentTrace trace;
    std::size_t candidates = 0;
};

// Exhaustive search over every legal insertion sequence adding at most `cap`
// bytes (and never exceeding the target length).
BruteForceResult brute_force_align(const AlignmentProblem& p, std::size_t cap, std::size_t budget = 10'000'000);

// Splices the trace's nops into the instruction list and reassembles.
isa::ByteProgram apply_trace(const isa::ByteProgram& prog, const AlignmentTrace& trace,
                             const isa::Vocabulary& vocab);

// Line records: `MAT <instr-index>` / `INS <boundary> <nop-name>`.
void write_trace(const AlignmentTrace& trace, const isa::Vocabulary& vocab, std::ostream& out);
AlignmentTrace read_trace(std::istream& in, const isa::Vocabulary& vocab);

} // namespace amao::align
