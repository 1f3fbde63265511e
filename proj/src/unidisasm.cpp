#include "xom/unidisasm.hpp"

#include <algorithm>
#include <cstring>
#include <map>
#include <optional>
#include <set>

#include "xom/eh_frame.hpp"
#include "xom/error.hpp"

namespace xom {

namespace {

// Per-byte classification of executable memory.
enum ByteState : std::uint8_t {
    kFree = 0,      // still in the superset
    kStart = 1,     // first byte of a committed instruction
    kCont = 2,      // other byte of a committed instruction
    kTentStart = 3, // tentative traversal, not yet committed
    kTentCont = 4,
    kBlocked = 5,   // outside the superset, origin unknown
};

class CodeMap {
public:
    explicit CodeMap(const BinaryImage &image) : mem_(image)
    {
        for (const auto &iv : mem_.ranges()) regions_.push_back({iv, std::vector<std::uint8_t>(iv.length(), kFree)});
    }

    const ExecutableMemory &mem() const noexcept { return mem_; }
    const IntervalSet &exec() const noexcept { return mem_.ranges(); }

    std::uint8_t *state(Address a) noexcept
    {
        if (last_ != nullptr && last_->range.contains(a)) return &last_->states[a - last_->range.start];
        for (auto &r : regions_) {
            if (r.range.contains(a)) {
                last_ = &r;
                return &r.states[a - r.range.start];
            }
        }
        return nullptr;
    }

    std::uint8_t get(Address a) noexcept
    {
        auto *s = state(a);
        return s ? *s : static_cast<std::uint8_t>(kBlocked);
    }

    bool is_code(Address a) noexcept
    {
        auto s = get(a);
        return s == kStart || s == kCont;
    }

    void set_range(const IntervalSet &set, std::uint8_t value)
    {
        for (const auto &iv : set) {
            for (Address a = iv.start; a < iv.end; ++a) {
                if (auto *s = state(a)) *s = value;
            }
        }
    }

    IntervalSet collect(bool code) const
    {
        std::vector<ByteInterval> out;
        for (const auto &r : regions_) {
            std::size_t i = 0;
            while (i < r.states.size()) {
                const bool c = r.states[i] == kStart || r.states[i] == kCont;
                std::size_t j = i;
                while (j < r.states.size() && (r.states[j] == kStart || r.states[j] == kCont) == c) ++j;
                if (c == code) out.emplace_back(r.range.start + i, r.range.start + j);
                i = j;
            }
        }
        return IntervalSet(std::move(out));
    }

    std::uint64_t code_bytes() const noexcept { return code_bytes_; }
    void add_code_bytes(std::uint64_t n) noexcept { code_bytes_ += n; }

private:
    struct Region {
        ByteInterval range;
        std::vector<std::uint8_t> states;
    };
    ExecutableMemory mem_;
    std::vector<Region> regions_;
    Region *last_ = nullptr;
    std::uint64_t code_bytes_ = 0;
};

enum class Mode { commit, tentative };

struct Traversal {
    bool accepted = true;
    std::vector<Address> indirect_jumps;
};

// Recursive traversal from `entry`. In commit mode conflicts end the current
// path; in tentative mode any conflict rejects the whole traversal, which is
// then rolled back so that its bytes stay in the superset.
Traversal traverse(CodeMap &cm, Address entry, Mode mode)
{
    Traversal result;
    const bool tentative = mode == Mode::tentative;
    const std::uint8_t mark_start = tentative ? kTentStart : kStart;
    const std::uint8_t mark_cont = tentative ? kTentCont : kCont;
    std::vector<std::pair<Address, std::uint8_t>> claimed;
    std::vector<Address> work{entry};

    auto fail = [&] {
        result.accepted = false;
        work.clear();
    };

    while (!work.empty()) {
        const Address a = work.back();
        work.pop_back();
        const std::uint8_t st = cm.get(a);
        if (st == kStart || st == kTentStart) continue; // joins known code at a boundary
        if (st != kFree) {
            if (tentative) fail();
            continue;
        }
        auto bytes = cm.mem().from(a);
        auto insn = decode(bytes, a);
        if (!insn) {
            if (tentative) fail();
            continue;
        }
        bool clash = false;
        for (Address b = a + 1; b < insn->end(); ++b) {
            if (cm.get(b) != kFree) {
                clash = true;
                break;
            }
        }
        if (clash) {
            if (tentative) fail();
            continue;
        }
        *cm.state(a) = mark_start;
        for (Address b = a + 1; b < insn->end(); ++b) *cm.state(b) = mark_cont;
        claimed.emplace_back(a, insn->length);

        bool falls_through = false;
        bool target_escapes = false;
        for (Address t : insn->direct_targets) {
            if (cm.exec().contains(t)) {
                work.push_back(t);
            } else {
                target_escapes = true;
            }
        }
        switch (insn->kind) {
        case FlowKind::fallthrough:
        case FlowKind::conditional_jump:
        case FlowKind::direct_call:
        case FlowKind::indirect_call: falls_through = true; break;
        case FlowKind::indirect_jump: result.indirect_jumps.push_back(a); break;
        default: break;
        }
        if (tentative && target_escapes) {
            fail();
            continue;
        }
        if (falls_through) {
            if (cm.exec().contains(insn->end())) {
                work.push_back(insn->end());
            } else if (tentative) {
                fail(); // runs off the end of the executable range
            }
        }
    }

    if (!result.accepted) {
        for (const auto &[a, len] : claimed) {
            for (Address b = a; b < a + len; ++b) *cm.state(b) = kFree;
        }
        result.indirect_jumps.clear();
        return result;
    }
    std::uint64_t n = 0;
    for (const auto &[a, len] : claimed) {
        *cm.state(a) = kStart;
        for (Address b = a + 1; b < a + len; ++b) *cm.state(b) = kCont;
        n += len;
    }
    cm.add_code_bytes(n);
    return result;
}

std::optional<Instruction> previous_instruction(CodeMap &cm, Address a)
{
    for (Address k = 1; k <= kMaxInstructionLength && k <= a; ++k) {
        const auto st = cm.get(a - k);
        if (st == kStart) {
            auto insn = decode(cm.mem().from(a - k), a - k);
            if (insn && insn->end() == a) return insn;
            return std::nullopt;
        }
        if (st != kCont) return std::nullopt;
    }
    return std::nullopt;
}

// ---- jump tables ----------------------------------------------------------

struct TableShape {
    Address table = 0;
    bool relative = false; // 4-byte entries holding offsets from the table base
    std::optional<std::uint64_t> count;
};

bool is_primary(const Instruction &in, std::uint8_t op) noexcept
{
    return in.map == OpcodeMap::primary && in.opcode == op;
}

std::optional<Address> lea_target(const std::vector<Instruction> &back, std::size_t from, int reg)
{
    for (std::size_t i = from; i < back.size(); ++i) {
        const auto &in = back[i];
        if (is_primary(in, 0x8D) && in.reg == reg) {
            if (in.rip_relative_data_target) return in.rip_relative_data_target;
            return std::nullopt;
        }
    }
    return std::nullopt;
}

std::optional<std::uint64_t> bound_from(const std::vector<Instruction> &back, std::size_t from, int index)
{
    for (std::size_t i = from; i < back.size(); ++i) {
        const auto &in = back[i];
        // mov idx, other (register copy, e.g. zero extension) moves the tracked register.
        if ((is_primary(in, 0x89) && in.mod == 3 && in.rm == index) ||
            (is_primary(in, 0x8B) && in.mod == 3 && in.reg == index)) {
            index = is_primary(in, 0x89) ? in.reg : in.rm;
            continue;
        }
        const bool imm_group = (is_primary(in, 0x83) || is_primary(in, 0x81)) && in.mod == 3 && in.rm == index;
        const bool is_cmp = (imm_group && (in.reg & 7) == 7) || ((is_primary(in, 0x3D) || is_primary(in, 0x3C)) && index == 0);
        const bool is_and = (imm_group && (in.reg & 7) == 4) || (is_primary(in, 0x25) && index == 0);
        if ((is_cmp || is_and) && in.imm && *in.imm >= 0) {
            std::uint64_t n = static_cast<std::uint64_t>(*in.imm) + 1;
            if (is_cmp && i > 0) {
                const auto &jcc = back[i - 1];
                const bool jae = (is_primary(jcc, 0x73)) || (jcc.map == OpcodeMap::map0f && jcc.opcode == 0x83);
                if (jae) n -= 1;
            }
            return n;
        }
    }
    return std::nullopt;
}

std::optional<TableShape> match_table(const std::vector<Instruction> &back)
{
    const Instruction &jmp = back[0];
    TableShape shape;
    int index = kNoReg;
    std::size_t load_at = 0;
    if (jmp.mem) {
        const auto &m = *jmp.mem;
        if (m.scale != 8 || m.index == kNoReg) return std::nullopt;
        if (m.base == kNoReg) {
            shape.table = static_cast<Address>(m.disp);
        } else {
            auto base = lea_target(back, 1, m.base);
            if (!base) return std::nullopt;
            shape.table = *base + static_cast<Address>(m.disp);
        }
        index = m.index;
    } else {
        const int target = jmp.rm;
        int added = kNoReg;
        for (std::size_t i = 1; i < back.size() && index == kNoReg; ++i) {
            const auto &in = back[i];
            if (is_primary(in, 0x01) && in.mod == 3 && in.rm == target && in.operand_size == 8) {
                added = in.reg;
            } else if (is_primary(in, 0x03) && in.mod == 3 && in.reg == target && in.operand_size == 8) {
                added = in.rm;
            } else if (is_primary(in, 0x63) && in.reg == target && in.mem && in.mem->scale == 4 &&
                       in.mem->index != kNoReg && in.mem->base != kNoReg && added != kNoReg) {
                auto base = lea_target(back, i + 1, in.mem->base);
                if (!base) return std::nullopt;
                shape.table = *base + static_cast<Address>(in.mem->disp);
                shape.relative = true;
                index = in.mem->index;
                load_at = i;
            } else if (is_primary(in, 0x8B) && in.reg == target && in.operand_size == 8 && in.mem &&
                       in.mem->scale == 8 && in.mem->index != kNoReg) {
                if (in.mem->base == kNoReg) {
                    shape.table = static_cast<Address>(in.mem->disp);
                } else {
                    auto base = lea_target(back, i + 1, in.mem->base);
                    if (!base) return std::nullopt;
                    shape.table = *base + static_cast<Address>(in.mem->disp);
                }
                index = in.mem->index;
                load_at = i;
            }
        }
        if (index == kNoReg) return std::nullopt;
    }
    shape.count = bound_from(back, load_at + 1, index);
    return shape;
}

constexpr std::uint64_t kMaxBoundedEntries = 4096;
constexpr std::uint64_t kMaxUnboundedEntries = 1024;
constexpr std::size_t kBackwardWindow = 32;

std::vector<Address> jump_table_targets(const BinaryImage &image, CodeMap &cm, Address jmp_addr)
{
    std::vector<Instruction> back;
    auto jmp = decode(cm.mem().from(jmp_addr), jmp_addr);
    if (!jmp) return {};
    back.push_back(*jmp);
    Address cur = jmp_addr;
    while (back.size() < kBackwardWindow) {
        auto prev = previous_instruction(cm, cur);
        if (!prev) break;
        cur = prev->vaddr;
        back.push_back(std::move(*prev));
    }
    auto shape = match_table(back);
    if (!shape) return {};

    std::vector<Address> targets;
    const std::uint64_t width = shape->relative ? 4 : 8;
    const std::uint64_t limit = shape->count ? std::min(*shape->count, kMaxBoundedEntries) : kMaxUnboundedEntries;
    for (std::uint64_t k = 0; k < limit; ++k) {
        const Address slot = shape->table + k * width;
        if (!shape->count) {
            bool hits_code = false;
            for (Address b = slot; b < slot + width; ++b) hits_code |= cm.is_code(b);
            if (hits_code) break;
        }
        Address target;
        if (shape->relative) {
            auto v = image.read_u32(slot);
            if (!v) break;
            target = shape->table + static_cast<Address>(static_cast<std::int64_t>(static_cast<std::int32_t>(*v)));
        } else {
            auto v = image.read_u64(slot);
            if (!v) break;
            target = *v;
        }
        if (!cm.exec().contains(target)) {
            if (!shape->count) break;
            continue;
        }
        targets.push_back(target);
    }
    return targets;
}

// ---- address-taken constants ------------------------------------------------

std::vector<Address> address_taken(const BinaryImage &image, const IntervalSet &exec)
{
    std::vector<Address> out;
    auto add = [&](std::uint64_t v) {
        if (exec.contains(v)) out.push_back(v);
    };
    auto words = [&](std::span<const std::uint8_t> data, Address base, bool aligned_only) {
        for (std::size_t off = 0; off + 8 <= data.size(); ++off) {
            if (aligned_only ? (base + off) % 8 != 0 : off % 8 != 0) continue;
            std::uint64_t v;
            std::memcpy(&v, data.data() + off, 8);
            add(v);
        }
    };
    const auto &sections = image.sections();
    for (const auto &s : sections) {
        if (s.type == SHT_RELA && s.entsize == sizeof(Elf64_Rela)) {
            auto data = image.section_data(s);
            const Section *symtab = s.link < sections.size() ? &sections[s.link] : nullptr;
            for (std::size_t off = 0; off + sizeof(Elf64_Rela) <= data.size(); off += sizeof(Elf64_Rela)) {
                Elf64_Rela rel;
                std::memcpy(&rel, data.data() + off, sizeof rel);
                const auto type = ELF64_R_TYPE(rel.r_info);
                const auto sym = ELF64_R_SYM(rel.r_info);
                if (type == R_X86_64_RELATIVE || type == R_X86_64_IRELATIVE) {
                    add(static_cast<std::uint64_t>(rel.r_addend));
                } else if ((type == R_X86_64_64 || type == R_X86_64_GLOB_DAT || type == R_X86_64_JUMP_SLOT) &&
                           sym != 0 && symtab != nullptr && symtab->has_file_data()) {
                    auto syms = image.section_data(*symtab);
                    if ((sym + 1) * sizeof(Elf64_Sym) > syms.size()) continue;
                    Elf64_Sym es;
                    std::memcpy(&es, syms.data() + sym * sizeof(Elf64_Sym), sizeof es);
                    if (es.st_shndx == SHN_UNDEF) continue;
                    add(es.st_value + (type == R_X86_64_64 ? static_cast<std::uint64_t>(rel.r_addend) : 0));
                }
            }
        } else if (s.type == SHT_INIT_ARRAY || s.type == SHT_FINI_ARRAY || s.type == SHT_PREINIT_ARRAY ||
                   s.name == ".got" || s.name == ".got.plt") {
            words(image.section_data(s), s.addr, false);
        } else if (s.type == SHT_PROGBITS && s.is_alloc() && !s.is_write() && !s.is_exec() &&
                   !s.name.starts_with(".eh_frame") && !s.name.starts_with(".gcc_except_table")) {
            words(image.section_data(s), s.addr, true);
        }
    }
    return out;
}

// ---- prologue heuristics ----------------------------------------------------

bool matches_prologue(std::span<const std::uint8_t> b) noexcept
{
    auto starts = [&](std::initializer_list<std::uint8_t> pat) {
        if (b.size() < pat.size()) return false;
        return std::equal(pat.begin(), pat.end(), b.begin());
    };
    return starts({0xF3, 0x0F, 0x1E, 0xFA}) ||       // endbr64
           starts({0x55, 0x48, 0x89, 0xE5}) ||       // push rbp; mov rbp, rsp
           starts({0x55, 0x48, 0x8B, 0xEC}) ||       // same, alternate encoding
           starts({0x48, 0x83, 0xEC}) ||             // sub rsp, imm8
           starts({0x48, 0x81, 0xEC});               // sub rsp, imm32
}

std::vector<Address> heuristic_entries(CodeMap &cm, const IntervalSet &free_set)
{
    std::vector<Address> out;
    for (const auto &run : free_set) {
        std::optional<Address> after_code;
        if (run.start > 0 && cm.is_code(run.start - 1)) {
            Address p = run.start;
            while (p < run.end) {
                auto b = cm.mem().byte_at(p);
                if (!b || (*b != 0xCC && *b != 0x90)) break;
                ++p;
            }
            if (p < run.end) after_code = p;
        }
        if (after_code && matches_prologue(cm.mem().from(*after_code))) out.push_back(*after_code);
        for (Address p = (run.start + 15) & ~Address{15}; p < run.end; p += 16) {
            if (after_code && p == *after_code) continue;
            if (matches_prologue(cm.mem().from(p))) out.push_back(p);
        }
    }
    return out;
}

IntervalSet free_bytes(CodeMap &cm)
{
    std::vector<ByteInterval> out;
    for (const auto &iv : cm.exec()) {
        Address a = iv.start;
        while (a < iv.end) {
            const bool f = cm.get(a) == kFree;
            Address b = a;
            while (b < iv.end && (cm.get(b) == kFree) == f) ++b;
            if (f) out.emplace_back(a, b);
            a = b;
        }
    }
    return IntervalSet(std::move(out));
}

std::vector<EntryPoint> order_candidates(std::vector<EntryPoint> cands)
{
    std::sort(cands.begin(), cands.end(), [](const EntryPoint &x, const EntryPoint &y) {
        return x.vaddr != y.vaddr ? x.vaddr < y.vaddr : x.source < y.source;
    });
    cands.erase(std::unique(cands.begin(), cands.end(),
                            [](const EntryPoint &x, const EntryPoint &y) { return x.vaddr == y.vaddr; }),
                cands.end());
    std::stable_sort(cands.begin(), cands.end(),
                     [](const EntryPoint &x, const EntryPoint &y) { return x.source < y.source; });
    return cands;
}

struct StaticSources {
    std::vector<Address> frame_unwind;
    std::vector<Address> address_taken;
};

StaticSources static_sources(const BinaryImage &image, const IntervalSet &exec)
{
    StaticSources s;
    for (const auto &fde : frame_descriptions(image)) {
        if (exec.contains(fde.initial_location)) s.frame_unwind.push_back(fde.initial_location);
    }
    s.address_taken = address_taken(image, exec);
    return s;
}

std::vector<EntryPoint> candidates(const BinaryImage &image, CodeMap &cm, const StaticSources &statics,
                                   const std::map<Address, std::vector<Address>> &tables)
{
    std::vector<EntryPoint> out;
    for (const auto &[jmp, targets] : tables) {
        for (Address t : targets) out.push_back({t, EntrySource::jump_table});
    }
    for (Address a : statics.frame_unwind) out.push_back({a, EntrySource::frame_unwind});
    for (Address a : statics.address_taken) out.push_back({a, EntrySource::address_taken});
    for (Address a : heuristic_entries(cm, free_bytes(cm))) out.push_back({a, EntrySource::heuristic});
    (void)image;
    return order_candidates(std::move(out));
}

} // namespace

std::string_view to_string(EntrySource source) noexcept
{
    switch (source) {
    case EntrySource::program_entry: return "program_entry";
    case EntrySource::jump_table: return "jump_table";
    case EntrySource::frame_unwind: return "frame_unwind";
    case EntrySource::address_taken: return "address_taken";
    case EntrySource::heuristic: return "heuristic";
    }
    return "?";
}

IntervalSet recursive_disassemble(const BinaryImage &image, Address entry, const IntervalSet &superset)
{
    if (!superset.contains(entry)) throw Error(ErrorKind::EntryNotInSuperset, "entry is not an unclassified byte");
    CodeMap cm(image);
    cm.set_range(cm.exec().subtracted(superset), kBlocked);
    traverse(cm, entry, Mode::commit);
    return cm.collect(true);
}

std::vector<Instruction> instructions_in(const BinaryImage &image, const IntervalSet &code)
{
    ExecutableMemory mem(image);
    std::vector<Instruction> out;
    for (const auto &iv : code) {
        Address a = iv.start;
        while (a < iv.end) {
            auto insn = decode(mem.from(a), a);
            if (!insn || insn->end() > iv.end) {
                throw Error(ErrorKind::InvariantViolation, "code interval " + to_string(iv) +
                                                               " is not a sequence of whole instructions");
            }
            a = insn->end();
            out.push_back(std::move(*insn));
        }
    }
    return out;
}

std::vector<EntryPoint> detect_entry_points(const BinaryImage &image, const IntervalSet &superset,
                                            const IntervalSet &known_code)
{
    CodeMap cm(image);
    cm.set_range(cm.exec().subtracted(superset).subtracted(known_code), kBlocked);
    std::map<Address, std::vector<Address>> tables;
    std::vector<Address> jumps;
    for (const auto &insn : instructions_in(image, known_code.intersected(cm.exec()))) {
        *cm.state(insn.vaddr) = kStart;
        for (Address b = insn.vaddr + 1; b < insn.end(); ++b) *cm.state(b) = kCont;
        if (insn.kind == FlowKind::indirect_jump) jumps.push_back(insn.vaddr);
    }
    for (Address j : jumps) tables[j] = jump_table_targets(image, cm, j);
    auto statics = static_sources(image, cm.exec());
    auto all = candidates(image, cm, statics, tables);
    const IntervalSet allowed = superset.united(known_code);
    std::erase_if(all, [&](const EntryPoint &e) { return !allowed.contains(e.vaddr); });
    return all;
}

DisassemblyReport compute_superset(const BinaryImage &image)
{
    return compute_superset(image, CommitObserver{});
}

DisassemblyReport compute_superset(const BinaryImage &image, const CommitObserver &observer)
{
    CodeMap cm(image);
    if (cm.exec().empty()) throw Error(ErrorKind::NoExecutableCode, "image has no executable segment");

    DisassemblyReport report;
    report.executable_total = cm.exec().total_bytes();
    std::map<Address, std::vector<Address>> tables;
    std::vector<Address> pending_jumps;

    auto commit = [&](const EntryPoint &ep, Traversal &&t) {
        report.entry_points.push_back(ep);
        for (Address j : t.indirect_jumps) pending_jumps.push_back(j);
        if (observer) observer(ep, cm.code_bytes(), report.executable_total - cm.code_bytes());
    };

    const Address entry = image.entry_point();
    if (cm.exec().contains(entry)) {
        commit({entry, EntrySource::program_entry}, traverse(cm, entry, Mode::commit));
    }

    const auto statics = static_sources(image, cm.exec());
    while (true) {
        ++report.stats.iterations;
        // Jump tables are recovered once their dispatching jump is committed.
        for (Address j : pending_jumps) tables[j] = jump_table_targets(image, cm, j);
        pending_jumps.clear();

        bool accepted_any = false;
        for (const auto &cand : candidates(image, cm, statics, tables)) {
            if (cm.get(cand.vaddr) != kFree) continue;
            ++report.stats.candidates_tried;
            auto t = traverse(cm, cand.vaddr, Mode::tentative);
            if (!t.accepted) {
                ++report.stats.candidates_rejected;
                continue;
            }
            accepted_any = true;
            commit(cand, std::move(t));
        }
        if (!accepted_any && pending_jumps.empty()) break;
    }

    report.code = cm.collect(true);
    report.superset = cm.exec().subtracted(report.code);
    return report;
}

} // namespace xom
