#include "xom/eh_frame.hpp"

#include <cstring>
#include <map>
#include <optional>
#include <string>

namespace xom {

namespace {

class Reader {
public:
    Reader(std::span<const std::uint8_t> data, Address base) : data_(data), base_(base) {}

    std::size_t pos() const noexcept { return pos_; }
    void seek(std::size_t p) noexcept { pos_ = p; }
    bool ok() const noexcept { return ok_; }
    Address vaddr() const noexcept { return base_ + pos_; }

    template <typename T>
    T fixed()
    {
        T v{};
        if (pos_ + sizeof(T) > data_.size()) {
            ok_ = false;
            return v;
        }
        std::memcpy(&v, data_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return v;
    }

    std::uint64_t uleb()
    {
        std::uint64_t v = 0;
        unsigned shift = 0;
        while (true) {
            auto b = fixed<std::uint8_t>();
            if (!ok_) return 0;
            if (shift < 64) v |= std::uint64_t{b & 0x7Fu} << shift;
            shift += 7;
            if ((b & 0x80) == 0) return v;
        }
    }

    std::int64_t sleb()
    {
        std::int64_t v = 0;
        unsigned shift = 0;
        std::uint8_t b = 0;
        do {
            b = fixed<std::uint8_t>();
            if (!ok_) return 0;
            if (shift < 64) v |= std::int64_t{b & 0x7F} << shift;
            shift += 7;
        } while (b & 0x80);
        if (shift < 64 && (b & 0x40)) v |= -(std::int64_t{1} << shift);
        return v;
    }

    std::string cstr()
    {
        std::string s;
        while (true) {
            auto c = fixed<char>();
            if (!ok_ || c == 0) return s;
            s.push_back(c);
        }
    }

    /// Reads a DW_EH_PE-encoded pointer. Returns nullopt for encodings that
    /// need runtime context (datarel, textrel, funcrel, indirect).
    std::optional<std::uint64_t> pointer(std::uint8_t enc)
    {
        if (enc == 0xFF) return std::nullopt;
        const Address field = vaddr();
        std::uint64_t v = 0;
        switch (enc & 0x0F) {
        case 0x00: v = fixed<std::uint64_t>(); break;
        case 0x01: v = uleb(); break;
        case 0x02: v = fixed<std::uint16_t>(); break;
        case 0x03: v = fixed<std::uint32_t>(); break;
        case 0x04: v = fixed<std::uint64_t>(); break;
        case 0x09: v = static_cast<std::uint64_t>(sleb()); break;
        case 0x0A: v = static_cast<std::uint64_t>(static_cast<std::int64_t>(fixed<std::int16_t>())); break;
        case 0x0B: v = static_cast<std::uint64_t>(static_cast<std::int64_t>(fixed<std::int32_t>())); break;
        case 0x0C: v = fixed<std::uint64_t>(); break;
        default: ok_ = false; return std::nullopt;
        }
        if (enc & 0x80) return std::nullopt;
        switch (enc & 0x70) {
        case 0x00: return v;
        case 0x10: return field + v;
        default: return std::nullopt;
        }
    }

private:
    std::span<const std::uint8_t> data_;
    Address base_;
    std::size_t pos_ = 0;
    bool ok_ = true;
};

struct CieInfo {
    std::uint8_t fde_encoding = 0; // DW_EH_PE_absptr
    bool has_augmentation_data = false;
};

} // namespace

std::vector<FrameDescription> parse_eh_frame(std::span<const std::uint8_t> data, Address section_vaddr)
{
    std::vector<FrameDescription> out;
    std::map<std::size_t, CieInfo> cies;
    Reader r(data, section_vaddr);
    while (r.pos() + 4 <= data.size()) {
        const std::size_t record = r.pos();
        std::uint64_t length = r.fixed<std::uint32_t>();
        if (length == 0) break;
        if (length == 0xFFFFFFFFu) length = r.fixed<std::uint64_t>();
        const std::size_t body = r.pos();
        if (!r.ok() || length > data.size() - body) break;
        const std::size_t next = body + length;

        const std::size_t id_pos = r.pos();
        const std::uint32_t id = r.fixed<std::uint32_t>();
        if (id == 0) {
            CieInfo cie;
            const auto version = r.fixed<std::uint8_t>();
            const std::string aug = r.cstr();
            if (aug.find("eh") != std::string::npos) r.fixed<std::uint64_t>();
            r.uleb(); // code alignment
            r.sleb(); // data alignment
            if (version == 1) {
                r.fixed<std::uint8_t>();
            } else {
                r.uleb();
            }
            if (!aug.empty() && aug[0] == 'z') {
                cie.has_augmentation_data = true;
                r.uleb();
                for (std::size_t i = 1; i < aug.size() && r.ok(); ++i) {
                    switch (aug[i]) {
                    case 'R': cie.fde_encoding = r.fixed<std::uint8_t>(); break;
                    case 'L': r.fixed<std::uint8_t>(); break;
                    case 'P': {
                        const auto enc = r.fixed<std::uint8_t>();
                        r.pointer(enc & 0x7F);
                        break;
                    }
                    default: break;
                    }
                }
            }
            if (r.ok()) cies[record] = cie;
        } else if (id <= id_pos) {
            auto it = cies.find(id_pos - id);
            if (it != cies.end()) {
                const auto begin = r.pointer(it->second.fde_encoding);
                const auto range = r.pointer(it->second.fde_encoding & 0x0F);
                if (r.ok() && begin && range) out.push_back({*begin, *range, record});
            }
        }
        if (!r.ok()) break;
        r.seek(next);
    }
    return out;
}

std::vector<FrameDescription> frame_descriptions(const BinaryImage &image)
{
    if (const Section *s = image.find_section(".eh_frame"); s != nullptr && s->has_file_data()) {
        return parse_eh_frame(image.section_data(*s), s->addr);
    }
    for (const auto &seg : image.segments()) {
        if (seg.type != PT_GNU_EH_FRAME) continue;
        auto hdr = image.mapped_bytes(seg.vaddr, 4);
        if (!hdr || (*hdr)[0] != 1) return {};
        auto rest = image.mapped_bytes(seg.vaddr, seg.filesz);
        if (!rest) return {};
        Reader r(*rest, seg.vaddr);
        r.seek(4);
        auto frame = r.pointer((*hdr)[1]);
        if (!frame) return {};
        // The frame section size is unknown here; read to the end of its segment.
        for (const auto &load : image.segments()) {
            if (!load.is_load() || *frame < load.vaddr || *frame >= load.vaddr + load.filesz) continue;
            auto bytes = image.mapped_bytes(*frame, load.vaddr + load.filesz - *frame);
            if (bytes) return parse_eh_frame(*bytes, *frame);
        }
    }
    return {};
}

} // namespace xom
