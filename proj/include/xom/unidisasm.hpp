#pragma once

#include <cstdint>
#include <functional>
#include <string_view>
#include <vector>

#include "xom/elf_image.hpp"
#include "xom/interval.hpp"
#include "xom/x86_decode.hpp"

namespace xom {

enum class EntrySource : std::uint8_t { program_entry, jump_table, frame_unwind, address_taken, heuristic };

std::string_view to_string(EntrySource source) noexcept;

struct EntryPoint {
    Address vaddr = 0;
    EntrySource source = EntrySource::heuristic;

    friend bool operator==(const EntryPoint &, const EntryPoint &) = default;
};

struct DisassemblyStats {
    unsigned iterations = 0;
    std::uint64_t candidates_tried = 0;
    std::uint64_t candidates_rejected = 0;
};

/// Outcome of unidirectional disassembly. `code` and `superset` partition
/// the executable ranges exactly; `entry_points` lists the entries whose
/// traversal was committed, in commit order.
struct DisassemblyReport {
    IntervalSet code;
    IntervalSet superset;
    std::vector<EntryPoint> entry_points;
    std::uint64_t executable_total = 0;
    DisassemblyStats stats;
};

/// Plain recursive traversal from `entry`, claiming only bytes of `superset`.
/// Paths end at returns, halts, indirect branches, undecodable bytes and
/// bytes outside `superset`. Throws EntryNotInSuperset.
IntervalSet recursive_disassemble(const BinaryImage &image, Address entry, const IntervalSet &superset);

/// Candidate code entries from jump tables referenced by `known_code`, FDEs,
/// address-taken constants and prologue heuristics over `superset`. Sorted
/// by source (in enum order) then address; each address appears once.
std::vector<EntryPoint> detect_entry_points(const BinaryImage &image, const IntervalSet &superset,
                                            const IntervalSet &known_code);

/// Runs the full fixpoint: traverse from the program entry, then accept
/// detected candidates until none is accepted. Bytes only move from the
/// superset to code. Throws NoExecutableCode.
DisassemblyReport compute_superset(const BinaryImage &image);

/// Called after every committed traversal with the entry and the running
/// code / superset byte counts.
using CommitObserver = std::function<void(const EntryPoint &, std::uint64_t code_bytes, std::uint64_t superset_bytes)>;
DisassemblyReport compute_superset(const BinaryImage &image, const CommitObserver &observer);

/// Instructions covering `code`, found by linear sweep of each interval.
/// `code` must be a union of whole instructions (as in a report).
std::vector<Instruction> instructions_in(const BinaryImage &image, const IntervalSet &code);

} // namespace xom
