#include "xom/elf_image.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <iterator>

#include <sys/stat.h>

#include "xom/error.hpp"

namespace xom {

namespace {

template <typename T>
T read_struct(const std::vector<std::uint8_t> &bytes, std::uint64_t off)
{
    T value;
    std::memcpy(&value, bytes.data() + off, sizeof(T));
    return value;
}

bool in_bounds(std::uint64_t off, std::uint64_t len, std::uint64_t total) noexcept
{
    return off <= total && len <= total - off;
}

} // namespace

BinaryImage BinaryImage::load(std::vector<std::uint8_t> bytes)
{
    if (bytes.size() < SELFMAG || std::memcmp(bytes.data(), ELFMAG, SELFMAG) != 0) {
        throw Error(ErrorKind::NotElf, "missing ELF magic");
    }
    if (bytes.size() < EI_NIDENT) throw Error(ErrorKind::Malformed, "truncated e_ident");
    if (bytes[EI_CLASS] != ELFCLASS64 || bytes[EI_DATA] != ELFDATA2LSB) {
        throw Error(ErrorKind::Unsupported, "only 64-bit little-endian ELF is supported");
    }
    if (bytes.size() < sizeof(Elf64_Ehdr)) throw Error(ErrorKind::Malformed, "truncated ELF header");

    BinaryImage img;
    img.ehdr_ = read_struct<Elf64_Ehdr>(bytes, 0);
    const auto &eh = img.ehdr_;
    if (eh.e_type != ET_EXEC && eh.e_type != ET_DYN) {
        throw Error(ErrorKind::Unsupported, "only ET_EXEC and ET_DYN files are supported");
    }
    if (eh.e_machine != EM_X86_64) throw Error(ErrorKind::Unsupported, "machine is not x86-64");

    if (eh.e_phnum > 0) {
        if (eh.e_phentsize != sizeof(Elf64_Phdr)) throw Error(ErrorKind::Malformed, "bad e_phentsize");
        if (!in_bounds(eh.e_phoff, std::uint64_t{eh.e_phnum} * sizeof(Elf64_Phdr), bytes.size())) {
            throw Error(ErrorKind::Malformed, "program header table out of bounds");
        }
    }
    for (unsigned i = 0; i < eh.e_phnum; ++i) {
        auto ph = read_struct<Elf64_Phdr>(bytes, eh.e_phoff + i * sizeof(Elf64_Phdr));
        if (ph.p_type == PT_LOAD && !in_bounds(ph.p_offset, ph.p_filesz, bytes.size())) {
            throw Error(ErrorKind::Malformed, "segment " + std::to_string(i) + " out of bounds");
        }
        if (ph.p_type == PT_LOAD && ph.p_filesz > ph.p_memsz) {
            throw Error(ErrorKind::Malformed, "segment " + std::to_string(i) + " filesz exceeds memsz");
        }
        img.segments_.push_back({ph.p_type, ph.p_flags, ph.p_offset, ph.p_vaddr, ph.p_filesz, ph.p_memsz,
                                 ph.p_align});
    }

    if (eh.e_shnum == 0 && eh.e_shoff != 0) {
        throw Error(ErrorKind::Unsupported, "extended section numbering");
    }
    if (eh.e_shnum > 0) {
        if (eh.e_shentsize != sizeof(Elf64_Shdr)) throw Error(ErrorKind::Malformed, "bad e_shentsize");
        if (!in_bounds(eh.e_shoff, std::uint64_t{eh.e_shnum} * sizeof(Elf64_Shdr), bytes.size())) {
            throw Error(ErrorKind::Malformed, "section header table out of bounds");
        }
        if (eh.e_shstrndx == SHN_XINDEX) throw Error(ErrorKind::Unsupported, "extended string table index");
        std::vector<Elf64_Shdr> raw;
        for (unsigned i = 0; i < eh.e_shnum; ++i) {
            auto sh = read_struct<Elf64_Shdr>(bytes, eh.e_shoff + i * sizeof(Elf64_Shdr));
            if (sh.sh_type != SHT_NOBITS && sh.sh_type != SHT_NULL && !in_bounds(sh.sh_offset, sh.sh_size, bytes.size())) {
                throw Error(ErrorKind::Malformed, "section " + std::to_string(i) + " out of bounds");
            }
            raw.push_back(sh);
        }
        const Elf64_Shdr *strtab = nullptr;
        if (eh.e_shstrndx != SHN_UNDEF) {
            if (eh.e_shstrndx >= eh.e_shnum) throw Error(ErrorKind::Malformed, "e_shstrndx out of range");
            strtab = &raw[eh.e_shstrndx];
        }
        for (const auto &sh : raw) {
            Section s;
            if (strtab != nullptr && sh.sh_name != 0) {
                if (sh.sh_name >= strtab->sh_size) throw Error(ErrorKind::Malformed, "section name out of bounds");
                const char *base = reinterpret_cast<const char *>(bytes.data() + strtab->sh_offset);
                s.name.assign(base + sh.sh_name, strnlen(base + sh.sh_name, strtab->sh_size - sh.sh_name));
            }
            s.type = sh.sh_type;
            s.flags = sh.sh_flags;
            s.addr = sh.sh_addr;
            s.offset = sh.sh_offset;
            s.size = sh.sh_size;
            s.link = sh.sh_link;
            s.info = sh.sh_info;
            s.addralign = sh.sh_addralign;
            s.entsize = sh.sh_entsize;
            img.sections_.push_back(std::move(s));
        }
    }
    img.bytes_ = std::move(bytes);

    auto exec = executable_ranges(img);
    for (const auto &s : img.sections_) {
        if (s.is_alloc() && s.is_exec() && s.size > 0 && !exec.contains(ByteInterval{s.addr, s.addr + s.size})) {
            throw Error(ErrorKind::Malformed, "executable section " + s.name + " lies outside executable segments");
        }
    }
    if (!exec.empty() && eh.e_entry != 0 && !exec.contains(eh.e_entry)) {
        throw Error(ErrorKind::Malformed, "entry point outside executable ranges");
    }
    return img;
}

const Section *BinaryImage::find_section(std::string_view name) const noexcept
{
    for (const auto &s : sections_) {
        if (s.name == name) return &s;
    }
    return nullptr;
}

std::span<const std::uint8_t> BinaryImage::section_data(const Section &s) const noexcept
{
    if (!s.has_file_data()) return {};
    return {bytes_.data() + s.offset, s.size};
}

std::optional<std::span<const std::uint8_t>> BinaryImage::mapped_bytes(Address vaddr, std::size_t n) const noexcept
{
    for (const auto &seg : segments_) {
        if (!seg.is_load()) continue;
        if (vaddr >= seg.vaddr && vaddr - seg.vaddr <= seg.filesz && n <= seg.filesz - (vaddr - seg.vaddr)) {
            return std::span<const std::uint8_t>(bytes_.data() + seg.offset + (vaddr - seg.vaddr), n);
        }
    }
    return std::nullopt;
}

std::optional<std::uint64_t> BinaryImage::read_u64(Address vaddr) const noexcept
{
    auto b = mapped_bytes(vaddr, 8);
    if (!b) return std::nullopt;
    std::uint64_t v;
    std::memcpy(&v, b->data(), 8);
    return v;
}

std::optional<std::uint32_t> BinaryImage::read_u32(Address vaddr) const noexcept
{
    auto b = mapped_bytes(vaddr, 4);
    if (!b) return std::nullopt;
    std::uint32_t v;
    std::memcpy(&v, b->data(), 4);
    return v;
}

BinaryImage load_elf(std::span<const std::uint8_t> bytes)
{
    if (bytes.empty()) throw Error(ErrorKind::NotElf, "empty input");
    return BinaryImage::load(std::vector<std::uint8_t>(bytes.begin(), bytes.end()));
}

BinaryImage load_elf_file(const std::string &path)
{
    return load_elf(read_file(path));
}

IntervalSet executable_ranges(const BinaryImage &image)
{
    std::vector<ByteInterval> ivs;
    for (const auto &seg : image.segments()) {
        if (seg.executable() && seg.memsz > 0) ivs.emplace_back(seg.vaddr, seg.vaddr + seg.memsz);
    }
    return IntervalSet(std::move(ivs));
}

ExecutableMemory::ExecutableMemory(const BinaryImage &image) : ranges_(executable_ranges(image))
{
    for (const auto &iv : ranges_) regions_.push_back({iv, std::vector<std::uint8_t>(iv.length(), 0)});
    for (const auto &seg : image.segments()) {
        if (!seg.executable()) continue;
        auto region = std::find_if(regions_.begin(), regions_.end(),
                                   [&](const Region &r) { return r.range.contains(seg.vaddr); });
        if (region == regions_.end()) continue;
        const auto *src = image.bytes().data() + seg.offset;
        std::copy(src, src + seg.filesz, region->bytes.begin() + (seg.vaddr - region->range.start));
    }
}

std::span<const std::uint8_t> ExecutableMemory::from(Address a) const noexcept
{
    auto it = std::upper_bound(regions_.begin(), regions_.end(), a,
                               [](Address v, const Region &r) { return v < r.range.end; });
    if (it == regions_.end() || it->range.start > a) return {};
    return std::span<const std::uint8_t>(it->bytes).subspan(a - it->range.start);
}

std::optional<std::uint8_t> ExecutableMemory::byte_at(Address a) const noexcept
{
    auto s = from(a);
    if (s.empty()) return std::nullopt;
    return s[0];
}

std::vector<std::uint8_t> read_file(const std::string &path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorKind::Io, "cannot open " + path);
    return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

void write_file(const std::string &path, std::span<const std::uint8_t> bytes, bool executable)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::Io, "cannot write " + path);
    out.write(reinterpret_cast<const char *>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    out.close();
    if (!out) throw Error(ErrorKind::Io, "short write to " + path);
    if (executable) ::chmod(path.c_str(), 0755);
}

} // namespace xom
