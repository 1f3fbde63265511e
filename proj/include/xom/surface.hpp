#pragma once

#include <cstdint>
#include <optional>
#include <string_view>
#include <vector>

#include "xom/elf_image.hpp"
#include "xom/interval.hpp"
#include "xom/unidisasm.hpp"

namespace xom {

struct Metrics {
    std::optional<double> code_coverage; // needs ground truth
    double overall_coverage = 0.0;
    std::uint64_t edb_count = 0;
    double avg_edb_size = 0.0;
    double readable_fraction = 0.0;
};

/// |code ∩ truth| / |truth|, where `truth_code` is the set of true code bytes.
/// Throws EmptyGroundTruth.
double code_coverage(const DisassemblyReport &report, const IntervalSet &truth_code);

/// |code| / executable bytes. An empty executable area counts as fully covered.
double overall_coverage(const DisassemblyReport &report);

struct EdbStats {
    std::uint64_t count = 0;
    double avg_size = 0.0;
};

EdbStats edb_stats(const DisassemblyReport &report);

/// True code bytes given the true data bytes: exec − data.
IntervalSet truth_code_from_data(const BinaryImage &image, const IntervalSet &truth_data);

Metrics compute_metrics(const DisassemblyReport &report, const IntervalSet *truth_code = nullptr);

/// reads / executed. Throws ZeroInstructions.
double read_intensity(std::uint64_t reads, std::uint64_t executed);

enum class GadgetEnd : std::uint8_t { ret, jmp_reg, call_reg };

std::string_view to_string(GadgetEnd e) noexcept;

struct Gadget {
    Address start = 0;
    std::uint64_t length = 0;
    unsigned instructions = 0;
    GadgetEnd terminator = GadgetEnd::ret;
    std::size_t block = 0; // index of the maximal superset interval

    friend bool operator==(const Gadget &, const Gadget &) = default;
};

inline constexpr unsigned kDefaultGadgetDepth = 10;

/// Every byte offset of every superset block is decoded forward. A gadget is
/// a run of at most `max_instructions` decodable instructions, all inside the
/// block, whose last one is `ret`/`ret imm16` or a register-indirect jmp/call.
/// Any other control transfer ends the run without a gadget. Sorted by start.
std::vector<Gadget> gadget_scan(const BinaryImage &image, const DisassemblyReport &report,
                                unsigned max_instructions = kDefaultGadgetDepth);

enum class Region : std::uint8_t { inside_superset, inside_code };

std::string_view to_string(Region r) noexcept;

struct WrpkruHit {
    Address vaddr = 0;
    Region region = Region::inside_code; // by the address of the first byte

    friend bool operator==(const WrpkruHit &, const WrpkruHit &) = default;
};

/// Byte-granular search for 0F 01 EF across the executable ranges.
std::vector<WrpkruHit> wrpkru_scan(const BinaryImage &image, const DisassemblyReport &report);

} // namespace xom
