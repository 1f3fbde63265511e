#pragma once

#include <elf.h>

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "xom/interval.hpp"

namespace xom {

struct Section {
    std::string name;
    std::uint32_t type = SHT_NULL;
    std::uint64_t flags = 0;
    Address addr = 0;
    std::uint64_t offset = 0;
    std::uint64_t size = 0;
    std::uint32_t link = 0;
    std::uint32_t info = 0;
    std::uint64_t addralign = 0;
    std::uint64_t entsize = 0;

    bool is_alloc() const noexcept { return (flags & SHF_ALLOC) != 0; }
    bool is_exec() const noexcept { return (flags & SHF_EXECINSTR) != 0; }
    bool is_write() const noexcept { return (flags & SHF_WRITE) != 0; }
    bool has_file_data() const noexcept { return type != SHT_NOBITS && type != SHT_NULL; }
};

struct Segment {
    std::uint32_t type = PT_NULL;
    std::uint32_t flags = 0;
    std::uint64_t offset = 0;
    Address vaddr = 0;
    std::uint64_t filesz = 0;
    std::uint64_t memsz = 0;
    std::uint64_t align = 0;

    bool is_load() const noexcept { return type == PT_LOAD; }
    bool executable() const noexcept { return type == PT_LOAD && (flags & PF_X) != 0; }
};

/// A parsed 64-bit little-endian x86-64 ELF file. Immutable once loaded;
/// rewriting operations return a new image built from new bytes.
class BinaryImage {
public:
    static BinaryImage load(std::vector<std::uint8_t> bytes);

    const std::vector<std::uint8_t> &bytes() const noexcept { return bytes_; }
    const Elf64_Ehdr &header() const noexcept { return ehdr_; }
    const std::vector<Section> &sections() const noexcept { return sections_; }
    const std::vector<Segment> &segments() const noexcept { return segments_; }
    Address entry_point() const noexcept { return ehdr_.e_entry; }
    bool is_executable_file() const noexcept { return ehdr_.e_type == ET_EXEC || ehdr_.e_type == ET_DYN; }

    const Section *find_section(std::string_view name) const noexcept;
    std::span<const std::uint8_t> section_data(const Section &s) const noexcept;

    /// File-backed bytes mapped at [vaddr, vaddr+n), or nullopt if any of
    /// them is not backed by a loadable segment's file image.
    std::optional<std::span<const std::uint8_t>> mapped_bytes(Address vaddr, std::size_t n) const noexcept;
    std::optional<std::uint64_t> read_u64(Address vaddr) const noexcept;
    std::optional<std::uint32_t> read_u32(Address vaddr) const noexcept;

private:
    std::vector<std::uint8_t> bytes_;
    Elf64_Ehdr ehdr_{};
    std::vector<Section> sections_;
    std::vector<Segment> segments_;
};

BinaryImage load_elf(std::span<const std::uint8_t> bytes);
BinaryImage load_elf_file(const std::string &path);

/// Union of the virtual ranges of all PT_LOAD segments with execute permission.
IntervalSet executable_ranges(const BinaryImage &image);

/// Byte-addressable copy of the executable ranges, zero-filled past each
/// segment's file size. Decoding reads through this view.
class ExecutableMemory {
public:
    explicit ExecutableMemory(const BinaryImage &image);

    const IntervalSet &ranges() const noexcept { return ranges_; }
    /// Bytes from `a` to the end of the executable range holding `a`.
    std::span<const std::uint8_t> from(Address a) const noexcept;
    std::optional<std::uint8_t> byte_at(Address a) const noexcept;

private:
    struct Region {
        ByteInterval range;
        std::vector<std::uint8_t> bytes;
    };
    IntervalSet ranges_;
    std::vector<Region> regions_;
};

std::vector<std::uint8_t> read_file(const std::string &path);
void write_file(const std::string &path, std::span<const std::uint8_t> bytes, bool executable = false);

} // namespace xom
