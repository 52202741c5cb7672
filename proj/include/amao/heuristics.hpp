#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "amao/align.hpp"
#include "amao/baselines.hpp"
#include "amao/isa.hpp"

// Where AMAO puts its nops, bucketed by relative position, and a DP-free
// inserter that replays those frequencies.
namespace amao::heur {

inline constexpr std::size_t kBuckets = 10;

struct TraceRecord {
    align::AlignmentTrace trace;
    int label = 0;
    std::vector<std::size_t> boundaries; // the legal boundaries the DP chose from
};

// Each legal boundary carries unit mass, split evenly over the nops inserted
// there, so the frequencies of one (class, bucket) sum to the fraction of
// boundaries that received anything.
struct InsertionStats {
    std::vector<std::string> nops;
    std::map<std::tuple<std::size_t, int, std::size_t>, double> mass;       // (nop, class, bucket)
    std::map<std::tuple<std::size_t, int, std::size_t>, std::size_t> count; // insertions, same key
    std::map<std::pair<int, std::size_t>, std::size_t> slots;               // (class, bucket) -> boundaries
    std::map<std::tuple<std::size_t, int, std::size_t>, std::size_t> raw;   // (nop, class, boundary index)

    bool empty() const { return slots.empty(); }
    bool has_class(int label) const;
    double frequency(std::size_t nop, int label, std::size_t bucket) const;
};

std::size_t bucket_of(std::size_t position, std::size_t total);

InsertionStats collect_stats(std::span<const TraceRecord> traces, const isa::Vocabulary& vocab);

// CSV header: nop,class,bucket,frequency,count. "*" marks a marginalised column.
void write_joint_csv(const InsertionStats& s, std::ostream& out);
void write_by_class_csv(const InsertionStats& s, std::ostream& out);
void write_by_nop_csv(const InsertionStats& s, std::ostream& out);
// nop,class,index,count at absolute boundary indices.
void write_raw_csv(const InsertionStats& s, std::ostream& out);

isa::ByteProgram heuristic_insert(const isa::ByteProgram& prog, const InsertionStats& stats, int label,
                                  const isa::Vocabulary& vocab, const baselines::Budget& b);

} // namespace amao::heur
