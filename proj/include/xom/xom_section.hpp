#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "xom/elf_image.hpp"
#include "xom/interval.hpp"

namespace xom {

/// e_ident byte used as the protection flag (second byte of EI_PAD).
inline constexpr std::size_t kXomFlagIndex = EI_PAD + 1;
inline constexpr std::uint8_t kXomFlagValue = 0x01;

inline constexpr char kXomSectionName[] = ".xom";
inline constexpr char kXomMagic[4] = {'X', 'O', 'M', '1'};
inline constexpr std::uint32_t kXomVersion = 1;
inline constexpr std::size_t kXomHeaderSize = 24;
inline constexpr std::size_t kXomEntrySize = 24;

/// One readable region inside executable memory. `read_count` is runtime
/// state owned by the monitor and is never persisted.
struct EmbeddedDataBlock {
    ByteInterval interval;
    std::uint64_t static_ref_count = 0;
    std::uint64_t read_count = 0;

    friend bool operator==(const EmbeddedDataBlock &, const EmbeddedDataBlock &) = default;
};

/// The two-tier block store: the optimization list is consulted before the regular list.
struct XomLists {
    std::vector<EmbeddedDataBlock> regular;
    std::vector<EmbeddedDataBlock> optimization;

    std::size_t total() const noexcept { return regular.size() + optimization.size(); }
    IntervalSet covered() const;

    friend bool operator==(const XomLists &, const XomLists &) = default;
};

/// Throws InvariantViolation unless blocks are pairwise disjoint across both
/// lists and each lies inside `executable`.
void validate_lists(const XomLists &lists, const IntervalSet &executable);

std::vector<std::uint8_t> encode_xom_payload(const XomLists &lists);
/// Structural decode only (CorruptXom on layout errors); no range checks.
XomLists decode_xom_payload(std::span<const std::uint8_t> payload);

BinaryImage set_xom_flag(const BinaryImage &image);
bool is_xom_enabled(const BinaryImage &image) noexcept;

/// Appends a non-allocated `.xom` section plus a fresh section-name table and
/// section header table. Program headers are untouched; of the bytes mapped by
/// segments only e_shoff, e_shnum and e_shstrndx in the ELF header change.
BinaryImage attach_xom_section(const BinaryImage &image, const XomLists &lists);
XomLists parse_xom_section(const BinaryImage &image);

} // namespace xom
