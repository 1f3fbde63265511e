#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "xom/interval.hpp"

namespace xom {

struct DataCounts {
    unsigned constants = 0;
    unsigned arrays = 0;
    unsigned strings = 0;
    unsigned jump_tables = 0;
};

/// How each generated function can be found by a disassembler.
struct EntryCounts {
    unsigned direct = 0;        // called from reachable code
    unsigned switch_cases = 0;  // jump-table targets
    unsigned address_taken = 0; // only through the .rodata pointer table
    unsigned frame_only = 0;    // only through an FDE
    unsigned heuristic_only = 0;
};

struct GeneratedProgram {
    std::string name;
    std::vector<std::uint8_t> elf;
    IntervalSet truth_data;      // every embedded-data byte in .text
    std::string trace;           // legal reads of the data blocks
    std::string expected_stdout; // what the program prints when run
    DataCounts data;
    EntryCounts entries;
    std::vector<Address> planted; // starts of planted 58 c3 / c3 / 0f 01 ef sequences
};

struct ProgramOptions {
    std::uint64_t seed = 1;
    std::string name; // defaults to program_<seed>
    unsigned min_functions = 12;
    unsigned max_functions = 28;
    bool plant_gadgets = false;
};

/// Small static x86-64 executable (no libc) that interleaves code with
/// embedded constants, arrays, strings and jump tables. The program runs:
/// it prints one line and exits 0.
GeneratedProgram generate_program(const ProgramOptions &opts);

/// write(1, msg) + exit(0), with the message stored inside .text.
GeneratedProgram generate_hello_world();

/// Minimal executable whose .text is `text` (loaded at text_base_of_fixture()), entry at
/// `entry_offset`. Used for hand-written fixtures.
std::vector<std::uint8_t> make_executable(const std::vector<std::uint8_t> &text, std::size_t entry_offset = 0);
Address text_base_of_fixture() noexcept;

/// `count` programs named corpus_NNN; every fourth one has planted gadgets.
std::vector<GeneratedProgram> generate_corpus(std::uint64_t seed, unsigned count);

} // namespace xom
