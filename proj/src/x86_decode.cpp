#include "xom/x86_decode.hpp"

#include <array>

#include "xom/error.hpp"

namespace xom {

namespace {

// Opcode attribute bits.
enum : std::uint16_t {
    kM = 1 << 0,      // ModRM follows
    kI8 = 1 << 1,     // imm8 / rel8
    kIz = 1 << 2,     // imm16/32 by operand size; rel32 for branches
    kIv = 1 << 3,     // imm16/32/64 (mov r, imm)
    kI16 = 1 << 4,    // imm16
    kMoffs = 1 << 5,  // address-sized absolute offset
    kBad = 1 << 6,    // undefined in 64-bit mode
    kPfx = 1 << 7,    // legacy prefix
    kRex = 1 << 8,
    kEsc = 1 << 9,    // 0F escape / VEX / EVEX handled specially
};

using Table = std::array<std::uint16_t, 256>;

constexpr Table make_primary()
{
    Table t{};
    for (int op = 0; op < 0x40; ++op) {
        switch (op & 7) {
        case 0: case 1: case 2: case 3: t[op] = kM; break;
        case 4: t[op] = kI8; break;
        case 5: t[op] = kIz; break;
        default: t[op] = kBad; break;
        }
    }
    t[0x0F] = kEsc;
    t[0x26] = t[0x2E] = t[0x36] = t[0x3E] = kPfx;
    for (int op = 0x40; op < 0x50; ++op) t[op] = kRex;
    for (int op = 0x50; op < 0x60; ++op) t[op] = 0;
    t[0x60] = t[0x61] = kBad;
    t[0x62] = kEsc;
    t[0x63] = kM;
    t[0x64] = t[0x65] = t[0x66] = t[0x67] = kPfx;
    t[0x68] = kIz;
    t[0x69] = kM | kIz;
    t[0x6A] = kI8;
    t[0x6B] = kM | kI8;
    for (int op = 0x6C; op < 0x70; ++op) t[op] = 0;
    for (int op = 0x70; op < 0x80; ++op) t[op] = kI8;
    t[0x80] = kM | kI8;
    t[0x81] = kM | kIz;
    t[0x82] = kBad;
    t[0x83] = kM | kI8;
    for (int op = 0x84; op < 0x90; ++op) t[op] = kM;
    for (int op = 0x90; op < 0xA0; ++op) t[op] = 0;
    t[0x9A] = kBad;
    for (int op = 0xA0; op < 0xA4; ++op) t[op] = kMoffs;
    for (int op = 0xA4; op < 0xB0; ++op) t[op] = 0;
    t[0xA8] = kI8;
    t[0xA9] = kIz;
    for (int op = 0xB0; op < 0xB8; ++op) t[op] = kI8;
    for (int op = 0xB8; op < 0xC0; ++op) t[op] = kIv;
    t[0xC0] = t[0xC1] = kM | kI8;
    t[0xC2] = kI16;
    t[0xC3] = 0;
    t[0xC4] = t[0xC5] = kEsc;
    t[0xC6] = kM | kI8;
    t[0xC7] = kM | kIz;
    t[0xC8] = kI16 | kI8;
    t[0xC9] = 0;
    t[0xCA] = kI16;
    t[0xCB] = t[0xCC] = 0;
    t[0xCD] = kI8;
    t[0xCE] = kBad;
    t[0xCF] = 0;
    for (int op = 0xD0; op < 0xD4; ++op) t[op] = kM;
    t[0xD4] = t[0xD5] = t[0xD6] = kBad;
    t[0xD7] = 0;
    for (int op = 0xD8; op < 0xE0; ++op) t[op] = kM;
    for (int op = 0xE0; op < 0xE8; ++op) t[op] = kI8;
    t[0xE8] = t[0xE9] = kIz;
    t[0xEA] = kBad;
    t[0xEB] = kI8;
    for (int op = 0xEC; op < 0xF0; ++op) t[op] = 0;
    t[0xF0] = t[0xF2] = t[0xF3] = kPfx;
    t[0xF1] = t[0xF4] = t[0xF5] = 0;
    t[0xF6] = t[0xF7] = kM;
    for (int op = 0xF8; op < 0xFE; ++op) t[op] = 0;
    t[0xFE] = t[0xFF] = kM;
    return t;
}

constexpr Table make_0f()
{
    Table t{};
    for (auto &v : t) v = kM;
    t[0x04] = t[0x0A] = t[0x0C] = t[0x0E] = t[0x0F] = kBad;
    t[0x05] = t[0x06] = t[0x07] = t[0x08] = t[0x09] = t[0x0B] = 0;
    for (int op = 0x24; op < 0x28; ++op) t[op] = kBad;
    for (int op = 0x30; op < 0x40; ++op) t[op] = kBad;
    t[0x30] = t[0x31] = t[0x32] = t[0x33] = t[0x34] = t[0x35] = t[0x37] = 0;
    t[0x38] = t[0x3A] = kEsc;
    t[0x70] = t[0x71] = t[0x72] = t[0x73] = kM | kI8;
    t[0x77] = 0;
    t[0x7A] = t[0x7B] = kBad;
    for (int op = 0x80; op < 0x90; ++op) t[op] = kIz;
    t[0xA0] = t[0xA1] = t[0xA2] = 0;
    t[0xA4] = t[0xAC] = kM | kI8;
    t[0xA6] = t[0xA7] = kBad;
    t[0xA8] = t[0xA9] = t[0xAA] = 0;
    t[0xBA] = kM | kI8;
    t[0xC2] = t[0xC4] = t[0xC5] = t[0xC6] = kM | kI8;
    for (int op = 0xC8; op < 0xD0; ++op) t[op] = 0;
    return t;
}

constexpr Table make_0f38()
{
    Table t{};
    for (auto &v : t) v = kBad;
    auto range = [&](int lo, int hi) {
        for (int op = lo; op <= hi; ++op) t[op] = kM;
    };
    range(0x00, 0x0B);
    t[0x10] = t[0x14] = t[0x15] = t[0x17] = kM;
    range(0x1C, 0x1E);
    range(0x20, 0x25);
    range(0x28, 0x2B);
    range(0x30, 0x35);
    range(0x37, 0x41);
    range(0x80, 0x82);
    range(0xC8, 0xCD);
    t[0xCF] = kM;
    range(0xF0, 0xF6);
    t[0xF8] = t[0xF9] = t[0xFC] = kM;
    return t;
}

constexpr Table make_0f3a()
{
    Table t{};
    for (auto &v : t) v = kBad;
    auto range = [&](int lo, int hi) {
        for (int op = lo; op <= hi; ++op) t[op] = kM | kI8;
    };
    range(0x08, 0x0F);
    range(0x14, 0x17);
    range(0x20, 0x22);
    range(0x40, 0x42);
    t[0x44] = kM | kI8;
    range(0x60, 0x63);
    t[0xCC] = t[0xCE] = t[0xCF] = t[0xDF] = kM | kI8;
    return t;
}

constexpr Table kPrimary = make_primary();
constexpr Table k0F = make_0f();
constexpr Table k0F38 = make_0f38();
constexpr Table k0F3A = make_0f3a();

bool vex_map1_imm8(std::uint8_t op) noexcept
{
    return (op >= 0x70 && op <= 0x73) || op == 0xC2 || op == 0xC4 || op == 0xC5 || op == 0xC6;
}

// Reserved x87 encodings (memory forms and register forms the SDM leaves
// undefined). Undocumented aliases are treated as invalid.
bool x87_valid(std::uint8_t op, std::uint8_t mod, std::uint8_t r, std::uint8_t rm) noexcept
{
    if (mod != 3) {
        switch (op) {
        case 0xD9: return r != 1;
        case 0xDB: return r != 4 && r != 6;
        case 0xDD: return r != 5;
        default: return true;
        }
    }
    switch (op) {
    case 0xD9:
        if (r == 2) return rm == 0;
        if (r == 3) return false;
        if (r == 4) return rm == 0 || rm == 1 || rm == 4 || rm == 5;
        if (r == 5) return rm != 7;
        return true;
    case 0xDA: return r <= 3 || (r == 5 && rm == 1);
    case 0xDB: return r <= 3 || (r == 4 && rm <= 4) || r == 5 || r == 6;
    case 0xDC: return r != 2 && r != 3;
    case 0xDD: return r == 0 || (r >= 2 && r <= 5);
    case 0xDE: return r != 2 && (r != 3 || rm == 1);
    case 0xDF: return r == 0 || (r == 4 && rm == 0) || r == 5 || r == 6;
    default: return true;
    }
}

bool lockable(const Instruction &in) noexcept
{
    if (in.mod == 3 || !in.has_modrm) return false;
    const std::uint8_t op = in.opcode;
    const std::uint8_t r = in.reg & 7;
    if (in.map == OpcodeMap::primary) {
        if (op < 0x40 && (op & 7) < 2) return true; // ALU r/m, r
        if (op >= 0x80 && op <= 0x83) return r != 7;  // not cmp
        if (op == 0x86 || op == 0x87) return true;
        if (op == 0xF6 || op == 0xF7) return r == 2 || r == 3;
        if (op == 0xFE || op == 0xFF) return r <= 1;
        return false;
    }
    if (in.map == OpcodeMap::map0f) {
        switch (op) {
        case 0xAB: case 0xB3: case 0xBB: case 0xB0: case 0xB1: case 0xC0: case 0xC1: return true;
        case 0xBA: return r >= 5;
        case 0xC7: return r == 1;
        default: return false;
        }
    }
    return false;
}

struct Cursor {
    std::span<const std::uint8_t> code;
    std::size_t pos = 0;
    std::size_t limit = 0;

    bool take(std::size_t n) noexcept
    {
        if (pos + n > limit) return false;
        pos += n;
        return true;
    }
    std::uint8_t peek(std::size_t ahead = 0) const noexcept { return code[pos + ahead]; }
    bool has(std::size_t n) const noexcept { return pos + n <= limit; }

    std::int64_t signed_at(std::size_t at, std::size_t n) const noexcept
    {
        std::uint64_t v = 0;
        for (std::size_t i = 0; i < n; ++i) v |= std::uint64_t{code[at + i]} << (8 * i);
        if (n < 8 && (v >> (8 * n - 1)) & 1) v |= ~std::uint64_t{0} << (8 * n);
        return static_cast<std::int64_t>(v);
    }
};

} // namespace

std::string_view to_string(FlowKind kind) noexcept
{
    switch (kind) {
    case FlowKind::fallthrough: return "fallthrough";
    case FlowKind::direct_jump: return "direct_jump";
    case FlowKind::conditional_jump: return "conditional_jump";
    case FlowKind::direct_call: return "direct_call";
    case FlowKind::indirect_jump: return "indirect_jump";
    case FlowKind::indirect_call: return "indirect_call";
    case FlowKind::ret: return "return";
    case FlowKind::halt: return "halt";
    }
    return "?";
}

bool Instruction::is_nop() const noexcept
{
    if (map == OpcodeMap::primary && opcode == 0x90 && opcode_reg == 0) return true;
    return map == OpcodeMap::map0f && opcode == 0x1F && has_modrm;
}

std::optional<Instruction> decode(std::span<const std::uint8_t> code, Address vaddr)
{
    Cursor c{code, 0, std::min(code.size(), kMaxInstructionLength)};
    bool opsize = false, addrsize = false, rep = false, repne = false, lock = false;
    std::uint8_t rex = 0;

    while (c.has(1)) {
        const std::uint8_t b = c.peek();
        const auto attr = kPrimary[b];
        if (attr & kPfx) {
            if (b == 0x66) opsize = true;
            if (b == 0x67) addrsize = true;
            if (b == 0xF3) rep = true;
            if (b == 0xF2) repne = true;
            if (b == 0xF0) lock = true;
            rex = 0; // a REX prefix only counts when it immediately precedes the opcode
            ++c.pos;
        } else if (attr & kRex) {
            rex = b;
            ++c.pos;
        } else {
            break;
        }
    }
    if (!c.has(1)) return std::nullopt;

    Instruction in;
    in.vaddr = vaddr;
    const bool rex_w = rex & 8;
    const bool rex_r = rex & 4;
    const bool rex_x = rex & 2;
    const bool rex_b = rex & 1;
    in.operand_size = rex_w ? 8 : (opsize ? 2 : 4);

    std::uint16_t attr = 0;
    bool ext_r = rex_r, ext_x = rex_x, ext_b = rex_b;
    bool vex_like = false;
    int vex_imm = 0; // 0 none, 1 imm8, 4 imm32

    std::uint8_t op = c.peek();
    ++c.pos;
    if (op == 0x0F) {
        if (!c.has(1)) return std::nullopt;
        op = c.peek();
        ++c.pos;
        if (op == 0x38 || op == 0x3A) {
            if (!c.has(1)) return std::nullopt;
            const bool three_a = op == 0x3A;
            op = c.peek();
            ++c.pos;
            in.map = three_a ? OpcodeMap::map0f3a : OpcodeMap::map0f38;
            attr = three_a ? k0F3A[op] : k0F38[op];
        } else {
            in.map = OpcodeMap::map0f;
            attr = k0F[op];
        }
    } else if (op == 0xC4 || op == 0xC5 || op == 0x62 || (op == 0x8F && c.has(1) && (c.peek() & 0x1F) >= 8)) {
        if (opsize || rep || repne || lock || rex != 0) return std::nullopt;
        vex_like = true;
        unsigned map_select = 1;
        if (op == 0xC5) {
            if (!c.has(2)) return std::nullopt;
            const std::uint8_t p = c.peek();
            ext_r = !(p & 0x80);
            ext_x = ext_b = false;
            c.pos += 1;
        } else if (op == 0xC4 || op == 0x8F) {
            if (!c.has(3)) return std::nullopt;
            const std::uint8_t p0 = c.peek();
            const std::uint8_t p1 = c.peek(1);
            ext_r = !(p0 & 0x80);
            ext_x = !(p0 & 0x40);
            ext_b = !(p0 & 0x20);
            map_select = p0 & 0x1F;
            in.operand_size = (p1 & 0x80) ? 8 : 4;
            c.pos += 2;
            if (op == 0xC4 && (map_select < 1 || map_select > 3)) return std::nullopt;
            if (op == 0x8F && map_select > 10) return std::nullopt;
        } else { // EVEX
            if (!c.has(4)) return std::nullopt;
            const std::uint8_t p0 = c.peek();
            const std::uint8_t p1 = c.peek(1);
            if ((p0 & 0x08) != 0 || (p1 & 0x04) == 0) return std::nullopt;
            map_select = p0 & 0x07;
            if (map_select == 0 || map_select == 4 || map_select == 7) return std::nullopt;
            ext_r = !(p0 & 0x80);
            ext_x = !(p0 & 0x40);
            ext_b = !(p0 & 0x20);
            in.operand_size = (p1 & 0x80) ? 8 : 4;
            c.pos += 3;
        }
        op = c.peek();
        ++c.pos;
        attr = kM;
        in.map = OpcodeMap::vex_other;
        if (map_select == 1) {
            in.map = OpcodeMap::map0f;
            if (op == 0x77) attr = 0;
            if (vex_map1_imm8(op)) vex_imm = 1;
        } else if (map_select == 2) {
            in.map = OpcodeMap::map0f38;
        } else if (map_select == 3) {
            in.map = OpcodeMap::map0f3a;
            vex_imm = 1;
        } else if (map_select == 8) {
            vex_imm = 1;
        } else if (map_select == 10) {
            vex_imm = 4;
        }
    } else {
        in.map = OpcodeMap::primary;
        attr = kPrimary[op];
        if (op == 0xC4 || op == 0xC5 || op == 0x62) attr = kBad;
    }
    if (attr & (kBad | kPfx | kRex | kEsc)) return std::nullopt;

    in.opcode = op;
    in.opcode_reg = static_cast<std::uint8_t>((op & 7) | (rex_b ? 8 : 0));

    std::size_t disp_at = 0, disp_len = 0;
    bool rip_rel = false;
    if (attr & kM) {
        if (!c.has(1)) return std::nullopt;
        const std::uint8_t modrm = c.peek();
        ++c.pos;
        in.has_modrm = true;
        in.mod = modrm >> 6;
        in.reg = static_cast<std::uint8_t>(((modrm >> 3) & 7) | (ext_r ? 8 : 0));
        const std::uint8_t rm_low = modrm & 7;
        in.rm = static_cast<std::uint8_t>(rm_low | (ext_b ? 8 : 0));
        if (in.mod != 3) {
            MemOperand m;
            if (rm_low == 4) {
                if (!c.has(1)) return std::nullopt;
                const std::uint8_t sib = c.peek();
                ++c.pos;
                const int idx = ((sib >> 3) & 7) | (ext_x ? 8 : 0);
                const int base_low = sib & 7;
                m.scale = static_cast<std::uint8_t>(1u << (sib >> 6));
                m.index = idx == 4 ? kNoReg : idx;
                if (base_low == 5 && in.mod == 0) {
                    m.base = kNoReg;
                    disp_len = 4;
                } else {
                    m.base = base_low | (ext_b ? 8 : 0);
                }
            } else if (rm_low == 5 && in.mod == 0) {
                m.base = kRipReg;
                rip_rel = true;
                disp_len = 4;
            } else {
                m.base = in.rm;
            }
            if (in.mod == 1) disp_len = 1;
            if (in.mod == 2) disp_len = 4;
            disp_at = c.pos;
            if (!c.take(disp_len)) return std::nullopt;
            m.disp = disp_len ? c.signed_at(disp_at, disp_len) : 0;
            in.mem = m;
        }
    }

    // Opcode-specific validity and immediate adjustments.
    std::size_t imm_len = 0;
    bool xbegin = false;
    if (!vex_like) {
        const std::uint8_t r = in.reg & 7;
        if (in.map == OpcodeMap::primary) {
            switch (op) {
            case 0x8D: if (in.mod == 3) return std::nullopt; break;
            case 0x8F: if (r != 0) return std::nullopt; break;
            case 0xC6:
            case 0xC7:
                if (r == 7 && in.mod == 3 && (in.rm & 7) == 0) {
                    if (op == 0xC6) break; // xabort imm8
                    attr = kIz;           // xbegin rel32
                    xbegin = true;
                } else if (r != 0) {
                    return std::nullopt;
                }
                break;
            case 0xF6:
            case 0xF7:
                if (r <= 1) attr |= (op == 0xF6 ? kI8 : kIz);
                break;
            case 0xD9:
            case 0xDA:
            case 0xDB:
            case 0xDC:
            case 0xDD:
            case 0xDE:
            case 0xDF:
                if (!x87_valid(op, in.mod, r, in.rm & 7)) return std::nullopt;
                break;
            case 0xFE: if (r > 1) return std::nullopt; break;
            case 0xFF:
                if (r == 7) return std::nullopt;
                if ((r == 3 || r == 5) && in.mod == 3) return std::nullopt;
                break;
            default: break;
            }
        } else if (in.map == OpcodeMap::map0f) {
            switch (op) {
            case 0x00: if (r >= 6) return std::nullopt; break;
            case 0x71: case 0x72: case 0x73: if (in.mod != 3) return std::nullopt; break;
            case 0xBA: if (r < 4) return std::nullopt; break;
            case 0xC7:
                if (in.mod == 3 ? r < 6 : (r == 0 || r == 2)) return std::nullopt;
                break;
            case 0xB8: if (!rep) return std::nullopt; break;
            default: break;
            }
        }
        if (attr & kI8) imm_len += 1;
        if (attr & kI16) imm_len += 2;
        if (attr & kIz) {
            const bool branch = (in.map == OpcodeMap::primary && (op == 0xE8 || op == 0xE9 || xbegin)) ||
                                in.map == OpcodeMap::map0f;
            imm_len += (branch || in.operand_size != 2) ? 4 : 2;
        }
        if (attr & kIv) imm_len += in.operand_size;
        if (attr & kMoffs) imm_len += addrsize ? 4 : 8;
        if (lock && !lockable(in)) return std::nullopt;
    } else {
        imm_len = static_cast<std::size_t>(vex_imm);
    }

    const std::size_t imm_at = c.pos;
    if (!c.take(imm_len)) return std::nullopt;
    in.length = static_cast<std::uint8_t>(c.pos);
    if (imm_len > 0 && !(attr & kMoffs)) {
        if (attr & kI16 && attr & kI8) {
            in.imm = c.signed_at(imm_at, 2);
        } else {
            in.imm = c.signed_at(imm_at, std::min<std::size_t>(imm_len, 8));
        }
    }

    if (in.mem) {
        if (rip_rel) {
            in.rip_relative_data_target = in.end() + static_cast<std::uint64_t>(in.mem->disp);
        } else if (in.mem->absolute()) {
            std::uint64_t a = static_cast<std::uint64_t>(in.mem->disp);
            if (addrsize) a &= 0xFFFFFFFFu;
            in.absolute_data_target = a;
        }
    }
    if (attr & kMoffs) {
        std::uint64_t a = 0;
        for (std::size_t i = 0; i < imm_len; ++i) a |= std::uint64_t{code[imm_at + i]} << (8 * i);
        in.absolute_data_target = a;
    }

    // Control flow.
    auto rel_target = [&] { return in.end() + static_cast<std::uint64_t>(*in.imm); };
    if (in.map == OpcodeMap::primary && !vex_like) {
        if (op == 0xC3 || op == 0xC2 || op == 0xCB || op == 0xCA || op == 0xCF) {
            in.kind = FlowKind::ret;
        } else if (op == 0xF4 || op == 0xCC) {
            in.kind = FlowKind::halt;
        } else if (op == 0xE8) {
            in.kind = FlowKind::direct_call;
            in.direct_targets.push_back(rel_target());
        } else if (op == 0xE9 || op == 0xEB) {
            in.kind = FlowKind::direct_jump;
            in.direct_targets.push_back(rel_target());
        } else if ((op >= 0x70 && op <= 0x7F) || (op >= 0xE0 && op <= 0xE3) ||
                   xbegin) {
            in.kind = FlowKind::conditional_jump;
            in.direct_targets.push_back(rel_target());
        } else if (op == 0xFF) {
            const std::uint8_t r = in.reg & 7;
            if (r == 2 || r == 3) in.kind = FlowKind::indirect_call;
            if (r == 4 || r == 5) in.kind = FlowKind::indirect_jump;
        }
    } else if (in.map == OpcodeMap::map0f && !vex_like) {
        if (op >= 0x80 && op <= 0x8F) {
            in.kind = FlowKind::conditional_jump;
            in.direct_targets.push_back(rel_target());
        } else if (op == 0x0B || op == 0xB9 || op == 0xFF) {
            in.kind = FlowKind::halt;
        } else if (op == 0x07) {
            in.kind = FlowKind::ret;
        }
    }
    return in;
}

std::optional<Instruction> decode_at(const ExecutableMemory &mem, Address vaddr)
{
    auto bytes = mem.from(vaddr);
    if (bytes.empty()) throw Error(ErrorKind::OutOfRange, "address not executable");
    return decode(bytes, vaddr);
}

std::optional<Instruction> decode_at(const BinaryImage &image, Address vaddr)
{
    return decode_at(ExecutableMemory(image), vaddr);
}

} // namespace xom
