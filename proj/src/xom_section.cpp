#include "xom/xom_section.hpp"

#include <algorithm>
#include <cstring>

#include "xom/error.hpp"

namespace xom {

namespace {

void put_u32(std::vector<std::uint8_t> &out, std::uint32_t v)
{
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u64(std::vector<std::uint8_t> &out, std::uint64_t v)
{
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint64_t get_u64(std::span<const std::uint8_t> b, std::size_t off)
{
    std::uint64_t v;
    std::memcpy(&v, b.data() + off, 8);
    return v;
}

void pad_to(std::vector<std::uint8_t> &out, std::size_t align)
{
    while (out.size() % align != 0) out.push_back(0);
}

template <typename T>
void put_struct(std::vector<std::uint8_t> &out, const T &value)
{
    const auto *p = reinterpret_cast<const std::uint8_t *>(&value);
    out.insert(out.end(), p, p + sizeof(T));
}

} // namespace

IntervalSet XomLists::covered() const
{
    std::vector<ByteInterval> ivs;
    for (const auto &b : optimization) ivs.push_back(b.interval);
    for (const auto &b : regular) ivs.push_back(b.interval);
    return IntervalSet(std::move(ivs));
}

void validate_lists(const XomLists &lists, const IntervalSet &executable)
{
    std::vector<ByteInterval> all;
    for (const auto &b : lists.optimization) all.push_back(b.interval);
    for (const auto &b : lists.regular) all.push_back(b.interval);
    std::sort(all.begin(), all.end());
    for (std::size_t i = 0; i < all.size(); ++i) {
        if (i > 0 && all[i - 1].end > all[i].start) {
            throw Error(ErrorKind::InvariantViolation,
                        "blocks " + to_string(all[i - 1]) + " and " + to_string(all[i]) + " overlap");
        }
        if (!executable.contains(all[i])) {
            throw Error(ErrorKind::InvariantViolation, "block " + to_string(all[i]) + " outside executable ranges");
        }
    }
}

std::vector<std::uint8_t> encode_xom_payload(const XomLists &lists)
{
    std::vector<std::uint8_t> out;
    out.reserve(kXomHeaderSize + kXomEntrySize * lists.total());
    out.insert(out.end(), std::begin(kXomMagic), std::end(kXomMagic));
    put_u32(out, kXomVersion);
    put_u64(out, lists.optimization.size());
    put_u64(out, lists.regular.size());
    for (const auto *list : {&lists.optimization, &lists.regular}) {
        for (const auto &b : *list) {
            put_u64(out, b.interval.start);
            put_u64(out, b.interval.end);
            put_u64(out, b.static_ref_count);
        }
    }
    return out;
}

XomLists decode_xom_payload(std::span<const std::uint8_t> payload)
{
    if (payload.size() < kXomHeaderSize) throw Error(ErrorKind::CorruptXom, "section shorter than header");
    if (std::memcmp(payload.data(), kXomMagic, 4) != 0) throw Error(ErrorKind::CorruptXom, "bad magic");
    std::uint32_t version;
    std::memcpy(&version, payload.data() + 4, 4);
    if (version != kXomVersion) throw Error(ErrorKind::CorruptXom, "unsupported version " + std::to_string(version));
    const std::uint64_t opt = get_u64(payload, 8);
    const std::uint64_t regr = get_u64(payload, 16);
    const std::uint64_t body = payload.size() - kXomHeaderSize;
    if (body % kXomEntrySize != 0 || opt > body / kXomEntrySize || regr != body / kXomEntrySize - opt) {
        throw Error(ErrorKind::CorruptXom, "entry counts (" + std::to_string(opt) + ", " + std::to_string(regr) +
                                               ") disagree with section size " + std::to_string(payload.size()));
    }
    XomLists lists;
    std::size_t off = kXomHeaderSize;
    auto read_entries = [&](std::vector<EmbeddedDataBlock> &dst, std::uint64_t n) {
        for (std::uint64_t i = 0; i < n; ++i, off += kXomEntrySize) {
            Address s = get_u64(payload, off);
            Address e = get_u64(payload, off + 8);
            if (s >= e) throw Error(ErrorKind::InvariantViolation, "empty block in .xom entry table");
            dst.push_back({ByteInterval{s, e}, get_u64(payload, off + 16), 0});
        }
    };
    read_entries(lists.optimization, opt);
    read_entries(lists.regular, regr);
    return lists;
}

BinaryImage set_xom_flag(const BinaryImage &image)
{
    auto bytes = image.bytes();
    bytes[kXomFlagIndex] = kXomFlagValue;
    return BinaryImage::load(std::move(bytes));
}

bool is_xom_enabled(const BinaryImage &image) noexcept
{
    return image.bytes()[kXomFlagIndex] == kXomFlagValue;
}

BinaryImage attach_xom_section(const BinaryImage &image, const XomLists &lists)
{
    if (image.find_section(kXomSectionName) != nullptr) {
        throw Error(ErrorKind::SectionExists, "image already carries a .xom section");
    }
    validate_lists(lists, executable_ranges(image));

    const auto &src = image.bytes();
    Elf64_Ehdr eh = image.header();

    std::vector<Elf64_Shdr> shdrs;
    std::vector<std::uint8_t> shstr;
    if (eh.e_shnum > 0) {
        for (unsigned i = 0; i < eh.e_shnum; ++i) {
            Elf64_Shdr sh;
            std::memcpy(&sh, src.data() + eh.e_shoff + i * sizeof(Elf64_Shdr), sizeof sh);
            shdrs.push_back(sh);
        }
    } else {
        shdrs.push_back(Elf64_Shdr{});
    }

    std::size_t strndx = eh.e_shstrndx;
    if (eh.e_shnum > 0 && strndx != SHN_UNDEF) {
        auto data = image.section_data(image.sections()[strndx]);
        shstr.assign(data.begin(), data.end());
    } else {
        // No usable name table: create one.
        shstr.push_back(0);
        Elf64_Shdr strhdr{};
        strhdr.sh_type = SHT_STRTAB;
        strhdr.sh_addralign = 1;
        strhdr.sh_name = static_cast<Elf64_Word>(shstr.size());
        const char name[] = ".shstrtab";
        shstr.insert(shstr.end(), name, name + sizeof name);
        strndx = shdrs.size();
        shdrs.push_back(strhdr);
    }
    if (shstr.empty() || shstr.back() != 0) shstr.push_back(0);
    const auto xom_name = static_cast<Elf64_Word>(shstr.size());
    shstr.insert(shstr.end(), kXomSectionName, kXomSectionName + sizeof kXomSectionName);

    std::vector<std::uint8_t> out(src.begin(), src.end());
    pad_to(out, 8);
    const auto payload = encode_xom_payload(lists);
    Elf64_Shdr xom{};
    xom.sh_name = xom_name;
    xom.sh_type = SHT_PROGBITS;
    xom.sh_flags = 0;
    xom.sh_offset = out.size();
    xom.sh_size = payload.size();
    xom.sh_addralign = 8;
    out.insert(out.end(), payload.begin(), payload.end());

    shdrs[strndx].sh_offset = out.size();
    shdrs[strndx].sh_size = shstr.size();
    out.insert(out.end(), shstr.begin(), shstr.end());
    shdrs.push_back(xom);

    pad_to(out, 8);
    eh.e_shoff = out.size();
    eh.e_shnum = static_cast<Elf64_Half>(shdrs.size());
    eh.e_shentsize = sizeof(Elf64_Shdr);
    eh.e_shstrndx = static_cast<Elf64_Half>(strndx);
    for (const auto &sh : shdrs) put_struct(out, sh);
    std::memcpy(out.data(), &eh, sizeof eh);
    return BinaryImage::load(std::move(out));
}

XomLists parse_xom_section(const BinaryImage &image)
{
    const Section *sec = image.find_section(kXomSectionName);
    if (sec == nullptr) throw Error(ErrorKind::NoXomSection, "image has no .xom section");
    if (!sec->has_file_data()) throw Error(ErrorKind::CorruptXom, ".xom has no file contents");
    auto lists = decode_xom_payload(image.section_data(*sec));
    validate_lists(lists, executable_ranges(image));
    return lists;
}

} // namespace xom
