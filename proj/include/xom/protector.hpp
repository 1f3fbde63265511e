#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <vector>

#include "xom/elf_image.hpp"
#include "xom/unidisasm.hpp"
#include "xom/xom_section.hpp"

namespace xom {

/// Blocks with more static references than this go to the optimization list.
inline constexpr std::uint64_t kStaticRefThreshold = 10;

/// One block per maximal superset interval, keyed by the interval.
using RefCounts = std::map<ByteInterval, std::uint64_t>;

/// Counts, per superset block, the instructions in `report.code` whose
/// RIP-relative or absolute memory operand lands inside the block.
RefCounts count_static_refs(const BinaryImage &image, const DisassemblyReport &report);

XomLists build_lists(const DisassemblyReport &report, const RefCounts &refs);

struct ProtectResult {
    std::vector<std::uint8_t> bytes;
    DisassemblyReport report;
    XomLists lists;
};

ProtectResult protect(std::span<const std::uint8_t> input);

/// Flag + `.xom` section; code bytes are never modified.
std::vector<std::uint8_t> protect_binary(std::span<const std::uint8_t> input);

} // namespace xom
