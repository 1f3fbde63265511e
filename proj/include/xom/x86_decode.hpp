#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "xom/elf_image.hpp"
#include "xom/interval.hpp"

namespace xom {

enum class FlowKind : std::uint8_t {
    fallthrough,
    direct_jump,
    conditional_jump,
    direct_call,
    indirect_jump,
    indirect_call,
    ret,
    halt,
};

std::string_view to_string(FlowKind kind) noexcept;

enum class OpcodeMap : std::uint8_t { primary, map0f, map0f38, map0f3a, vex_other };

inline constexpr int kNoReg = -1;
inline constexpr int kRipReg = 16;

/// Register numbers are 0..15 (rax..r15, REX-extended), kRipReg or kNoReg.
struct MemOperand {
    int base = kNoReg;
    int index = kNoReg;
    std::uint8_t scale = 1;
    std::int64_t disp = 0;

    bool rip_relative() const noexcept { return base == kRipReg; }
    bool absolute() const noexcept { return base == kNoReg && index == kNoReg; }
};

/// One decoded x86-64 instruction. The flow fields are the contract the
/// disassembler relies on; the operand fields describe the encoding closely
/// enough for idiom matching (jump tables, prologues, reference counting).
struct Instruction {
    Address vaddr = 0;
    std::uint8_t length = 0;
    FlowKind kind = FlowKind::fallthrough;
    std::vector<Address> direct_targets;
    std::optional<Address> rip_relative_data_target;
    /// Memory operand with an absolute address (no base, no index) or a moffs form.
    std::optional<Address> absolute_data_target;

    OpcodeMap map = OpcodeMap::primary;
    std::uint8_t opcode = 0;
    bool has_modrm = false;
    std::uint8_t mod = 0;
    std::uint8_t reg = 0; // ModRM.reg with REX.R applied
    std::uint8_t rm = 0;  // ModRM.rm with REX.B applied (meaningful when mod == 3)
    std::optional<MemOperand> mem;
    std::optional<std::int64_t> imm;
    std::uint8_t operand_size = 4;
    std::uint8_t opcode_reg = 0; // low three opcode bits + REX.B, for +r encodings

    Address end() const noexcept { return vaddr + length; }
    bool is_nop() const noexcept;
};

inline constexpr std::size_t kMaxInstructionLength = 15;

/// Decodes one instruction from `code`, which holds the bytes starting at
/// `vaddr` and ending at the end of the readable range. Returns nullopt for
/// undefined or truncated encodings.
std::optional<Instruction> decode(std::span<const std::uint8_t> code, Address vaddr);

std::optional<Instruction> decode_at(const ExecutableMemory &mem, Address vaddr);
/// Throws OutOfRange when vaddr is not executable.
std::optional<Instruction> decode_at(const BinaryImage &image, Address vaddr);

} // namespace xom
