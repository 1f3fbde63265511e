#include "xom/corpus.hpp"

#include <elf.h>

#include <algorithm>
#include <array>
#include <cstring>
#include <optional>
#include <random>
#include <sstream>

#include "xom/error.hpp"

namespace xom {

namespace {

enum Reg : int { RAX = 0, RCX = 1, RDX = 2, RSP = 4, RBP = 5, RSI = 6, RDI = 7, R8 = 8, R9, R10, R11 };

enum Cond : std::uint8_t { kB = 0x2, kAE = 0x3, kE = 0x4, kNE = 0x5, kBE = 0x6, kA = 0x7, kL = 0xC, kG = 0xF };

enum class Sec : std::uint8_t { text, rodata };

constexpr Address kImageBase = 0x400000;
constexpr std::uint64_t kPage = 0x1000;

std::uint64_t align_up(std::uint64_t v, std::uint64_t a)
{
    return (v + a - 1) & ~(a - 1);
}

// Two-section assembler with labels; fixups are patched by resolve().
class Assembler {
public:
    using Label = int;

    Label label()
    {
        marks_.emplace_back();
        return static_cast<Label>(marks_.size() - 1);
    }
    void bind(Label l, Sec s = Sec::text) { marks_[l] = Mark{s, buf(s).size()}; }
    Label here(Sec s = Sec::text)
    {
        Label l = label();
        bind(l, s);
        return l;
    }

    std::vector<std::uint8_t> &buf(Sec s) { return s == Sec::text ? text_ : rodata_; }
    std::size_t size(Sec s = Sec::text) { return buf(s).size(); }

    void emit(std::initializer_list<std::uint8_t> bytes, Sec s = Sec::text)
    {
        buf(s).insert(buf(s).end(), bytes);
    }
    void emit(const std::vector<std::uint8_t> &bytes, Sec s = Sec::text)
    {
        buf(s).insert(buf(s).end(), bytes.begin(), bytes.end());
    }
    void u8(std::uint8_t v, Sec s = Sec::text) { buf(s).push_back(v); }
    void u32(std::uint32_t v, Sec s = Sec::text)
    {
        for (int i = 0; i < 4; ++i) buf(s).push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void u64(std::uint64_t v, Sec s = Sec::text)
    {
        for (int i = 0; i < 8; ++i) buf(s).push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }

    // `tail` = immediate bytes that follow the displacement in the instruction.
    void rel32(Label target, int tail = 0) { fixup(Kind::rel32, Sec::text, target, -1, tail, 4); }
    void rel8(Label target) { fixup(Kind::rel8, Sec::text, target, -1, 0, 1); }
    void abs32(Label target) { fixup(Kind::abs32, Sec::text, target, -1, 0, 4); }
    void abs64(Label target, Sec where) { fixup(Kind::abs64, where, target, -1, 0, 8); }
    void diff32(Label target, Label base, Sec where) { fixup(Kind::diff32, where, target, base, 0, 4); }

    void resolve(Address text_base, Address rodata_base)
    {
        text_base_ = text_base;
        rodata_base_ = rodata_base;
        for (const auto &f : fixups_) {
            const Address field = base_of(f.where) + f.offset;
            const auto t = static_cast<std::int64_t>(addr(f.target));
            std::int64_t v = 0;
            switch (f.kind) {
            case Kind::rel32: v = t - static_cast<std::int64_t>(field + 4 + f.tail); break;
            case Kind::rel8:
                v = t - static_cast<std::int64_t>(field + 1);
                if (v < -128 || v > 127) throw Error(ErrorKind::InvariantViolation, "rel8 out of range");
                break;
            case Kind::abs32:
            case Kind::abs64: v = t; break;
            case Kind::diff32: v = t - static_cast<std::int64_t>(addr(f.base)); break;
            }
            auto &b = buf(f.where);
            for (unsigned i = 0; i < f.width; ++i) b[f.offset + i] = static_cast<std::uint8_t>(v >> (8 * i));
        }
    }

    Address addr(Label l) const
    {
        const auto &m = marks_.at(l);
        if (!m) throw Error(ErrorKind::InvariantViolation, "unbound label");
        return base_of(m->sec) + m->offset;
    }

private:
    enum class Kind : std::uint8_t { rel32, rel8, abs32, abs64, diff32 };
    struct Mark {
        Sec sec;
        std::size_t offset;
    };
    struct Fixup {
        Kind kind;
        Sec where;
        std::size_t offset;
        Label target;
        Label base;
        int tail;
        unsigned width;
    };

    void fixup(Kind k, Sec where, Label target, Label base, int tail, unsigned width)
    {
        fixups_.push_back({k, where, buf(where).size(), target, base, tail, width});
        for (unsigned i = 0; i < width; ++i) buf(where).push_back(0);
    }
    Address base_of(Sec s) const { return s == Sec::text ? text_base_ : rodata_base_; }

    std::vector<std::uint8_t> text_, rodata_;
    std::vector<std::optional<Mark>> marks_;
    std::vector<Fixup> fixups_;
    Address text_base_ = 0, rodata_base_ = 0;
};

using Label = Assembler::Label;

std::uint8_t modrm(int mod, int reg, int rm)
{
    return static_cast<std::uint8_t>((mod << 6) | ((reg & 7) << 3) | (rm & 7));
}

std::uint8_t rex(bool w, int reg, int index, int base)
{
    return static_cast<std::uint8_t>(0x40 | (w << 3) | ((reg >> 3) << 2) | ((index >> 3) << 1) | (base >> 3));
}

void opt_rex(Assembler &a, int reg, int base)
{
    if (reg >= 8 || base >= 8) a.u8(rex(false, reg, 0, base));
}

// ---- instruction forms -----------------------------------------------------

void mov_imm32(Assembler &a, int r, std::uint32_t imm)
{
    opt_rex(a, 0, r);
    a.u8(static_cast<std::uint8_t>(0xB8 + (r & 7)));
    a.u32(imm);
}

void alu_rr(Assembler &a, std::uint8_t op, int dst, int src)
{
    a.emit({rex(true, src, 0, dst), op, modrm(3, src, dst)});
}

void imul_rr(Assembler &a, int dst, int src)
{
    a.emit({rex(true, dst, 0, src), 0x0F, 0xAF, modrm(3, dst, src)});
}

void alu_imm8(Assembler &a, int ext, int r, std::uint8_t imm)
{
    a.emit({rex(true, 0, 0, r), 0x83, modrm(3, ext, r), imm});
}

void shift_imm(Assembler &a, int ext, int r, std::uint8_t imm)
{
    a.emit({rex(true, 0, 0, r), 0xC1, modrm(3, ext, r), imm});
}

void lea_rip(Assembler &a, int r, Label target)
{
    a.emit({rex(true, r, 0, 0), 0x8D, modrm(0, r, 5)});
    a.rel32(target);
}

void load64_rip(Assembler &a, int r, Label target)
{
    a.emit({rex(true, r, 0, 0), 0x8B, modrm(0, r, 5)});
    a.rel32(target);
}

void load32_rip(Assembler &a, int r, Label target)
{
    opt_rex(a, r, 0);
    a.emit({0x8B, modrm(0, r, 5)});
    a.rel32(target);
}

void movsd_rip(Assembler &a, int xmm, Label target)
{
    a.emit({0xF2, 0x0F, 0x10, modrm(0, xmm, 5)});
    a.rel32(target);
}

// movzx dst32, byte [rsi + disp8]
void movzx_rsi(Assembler &a, int dst, std::uint8_t disp)
{
    opt_rex(a, dst, 0);
    a.emit({0x0F, 0xB6, modrm(1, dst, RSI), disp});
}

void cmp32_imm8(Assembler &a, int r, std::uint8_t imm)
{
    opt_rex(a, 0, r);
    a.emit({0x83, modrm(3, 7, r), imm});
}

void jcc32(Assembler &a, Cond cc, Label l)
{
    a.emit({0x0F, static_cast<std::uint8_t>(0x80 + cc)});
    a.rel32(l);
}

void jcc8(Assembler &a, Cond cc, Label l)
{
    a.u8(static_cast<std::uint8_t>(0x70 + cc));
    a.rel8(l);
}

void jmp32(Assembler &a, Label l)
{
    a.u8(0xE9);
    a.rel32(l);
}

void call32(Assembler &a, Label l)
{
    a.u8(0xE8);
    a.rel32(l);
}

void call_rip(Assembler &a, Label slot)
{
    a.emit({0xFF, 0x15});
    a.rel32(slot);
}

void dec32(Assembler &a, int r)
{
    opt_rex(a, 0, r);
    a.emit({0xFF, modrm(3, 1, r)});
}

void exit_zero(Assembler &a)
{
    mov_imm32(a, RAX, 60);
    a.emit({0x31, 0xFF}); // xor edi, edi
    a.emit({0x0F, 0x05});
    a.u8(0xF4);
}

void write_stdout(Assembler &a, Label msg, std::uint32_t len)
{
    mov_imm32(a, RAX, 1);
    mov_imm32(a, RDI, 1);
    lea_rip(a, RSI, msg);
    mov_imm32(a, RDX, len);
    a.emit({0x0F, 0x05});
}

// ---- ELF writer --------------------------------------------------------------

struct FrameRange {
    Label start;
    Label end;
};

constexpr std::size_t kCieSize = 24;
constexpr std::size_t kFdeSize = 24;

std::vector<std::uint8_t> eh_frame_bytes(const Assembler &a, const std::vector<FrameRange> &frames, Address vaddr)
{
    std::vector<std::uint8_t> out;
    auto put32 = [&](std::uint32_t v) {
        for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    };
    // CIE: version 1, "zR", code align 1, data align -8, RA column 16, FDE
    // pointers pcrel|sdata4; CFA = rsp + 8, RA at CFA - 8.
    put32(kCieSize - 4);
    put32(0);
    out.insert(out.end(), {1, 'z', 'R', 0, 1, 0x78, 16, 1, 0x1b, 0x0c, 0x07, 0x08, 0x90, 0x01, 0, 0});
    for (const auto &f : frames) {
        const std::size_t at = out.size();
        put32(kFdeSize - 4);
        put32(static_cast<std::uint32_t>(at + 4));
        const Address field = vaddr + out.size();
        put32(static_cast<std::uint32_t>(a.addr(f.start) - field));
        put32(static_cast<std::uint32_t>(a.addr(f.end) - a.addr(f.start)));
        out.push_back(0); // augmentation data length
        out.resize(at + kFdeSize, 0);
    }
    put32(0);
    return out;
}

struct Layout {
    Address text_base = 0;
    std::size_t text_off = 0, rodata_off = 0, eh_off = 0, eh_size = 0;
};

Layout plan_layout(Assembler &a, std::size_t frames)
{
    constexpr std::size_t kHeaders = sizeof(Elf64_Ehdr) + 3 * sizeof(Elf64_Phdr);
    Layout l;
    l.rodata_off = align_up(kHeaders, 8);
    l.eh_off = align_up(l.rodata_off + a.size(Sec::rodata), 8);
    l.eh_size = kCieSize + frames * kFdeSize + 4;
    l.text_off = align_up(l.eh_off + l.eh_size, kPage);
    l.text_base = kImageBase + l.text_off;
    a.resolve(l.text_base, kImageBase + l.rodata_off);
    return l;
}

std::vector<std::uint8_t> write_elf(Assembler &a, const Layout &l, Label entry, const std::vector<FrameRange> &frames)
{
    const auto eh = eh_frame_bytes(a, frames, kImageBase + l.eh_off);
    auto &text = a.buf(Sec::text);
    auto &rodata = a.buf(Sec::rodata);

    const std::string shstrtab = std::string("\0.text\0.rodata\0.eh_frame\0.shstrtab\0", 35);
    const std::size_t shstr_off = l.text_off + text.size();
    const std::size_t shoff = align_up(shstr_off + shstrtab.size(), 8);
    const bool has_rodata = !rodata.empty();
    const unsigned shnum = has_rodata ? 5 : 4;

    std::vector<std::uint8_t> out(shoff + shnum * sizeof(Elf64_Shdr), 0);

    Elf64_Ehdr eh_hdr{};
    std::memcpy(eh_hdr.e_ident, ELFMAG, SELFMAG);
    eh_hdr.e_ident[EI_CLASS] = ELFCLASS64;
    eh_hdr.e_ident[EI_DATA] = ELFDATA2LSB;
    eh_hdr.e_ident[EI_VERSION] = EV_CURRENT;
    eh_hdr.e_ident[EI_OSABI] = ELFOSABI_SYSV;
    eh_hdr.e_type = ET_EXEC;
    eh_hdr.e_machine = EM_X86_64;
    eh_hdr.e_version = EV_CURRENT;
    eh_hdr.e_entry = a.addr(entry);
    eh_hdr.e_phoff = sizeof(Elf64_Ehdr);
    eh_hdr.e_shoff = shoff;
    eh_hdr.e_ehsize = sizeof(Elf64_Ehdr);
    eh_hdr.e_phentsize = sizeof(Elf64_Phdr);
    eh_hdr.e_phnum = 3;
    eh_hdr.e_shentsize = sizeof(Elf64_Shdr);
    eh_hdr.e_shnum = static_cast<Elf64_Half>(shnum);
    eh_hdr.e_shstrndx = static_cast<Elf64_Half>(shnum - 1);
    std::memcpy(out.data(), &eh_hdr, sizeof eh_hdr);

    Elf64_Phdr ph[3]{};
    ph[0].p_type = PT_LOAD;
    ph[0].p_flags = PF_R;
    ph[0].p_offset = 0;
    ph[0].p_vaddr = ph[0].p_paddr = kImageBase;
    ph[0].p_filesz = ph[0].p_memsz = l.eh_off + l.eh_size;
    ph[0].p_align = kPage;
    ph[1].p_type = PT_LOAD;
    ph[1].p_flags = PF_R | PF_X;
    ph[1].p_offset = l.text_off;
    ph[1].p_vaddr = ph[1].p_paddr = l.text_base;
    ph[1].p_filesz = ph[1].p_memsz = text.size();
    ph[1].p_align = kPage;
    ph[2].p_type = PT_GNU_STACK;
    ph[2].p_flags = PF_R | PF_W;
    ph[2].p_align = 16;
    std::memcpy(out.data() + sizeof(Elf64_Ehdr), ph, sizeof ph);

    std::copy(rodata.begin(), rodata.end(), out.begin() + static_cast<std::ptrdiff_t>(l.rodata_off));
    std::copy(eh.begin(), eh.end(), out.begin() + static_cast<std::ptrdiff_t>(l.eh_off));
    std::copy(text.begin(), text.end(), out.begin() + static_cast<std::ptrdiff_t>(l.text_off));
    std::copy(shstrtab.begin(), shstrtab.end(), out.begin() + static_cast<std::ptrdiff_t>(shstr_off));

    std::vector<Elf64_Shdr> sh(shnum);
    unsigned i = 1;
    auto section = [&](Elf64_Word name, Elf64_Word type, Elf64_Xword flags, Address addr, std::size_t off,
                       std::size_t size, Elf64_Xword align) {
        auto &s = sh[i++];
        s.sh_name = name;
        s.sh_type = type;
        s.sh_flags = flags;
        s.sh_addr = addr;
        s.sh_offset = off;
        s.sh_size = size;
        s.sh_addralign = align;
    };
    if (has_rodata) section(7, SHT_PROGBITS, SHF_ALLOC, kImageBase + l.rodata_off, l.rodata_off, rodata.size(), 8);
    section(15, SHT_PROGBITS, SHF_ALLOC, kImageBase + l.eh_off, l.eh_off, eh.size(), 8);
    section(1, SHT_PROGBITS, SHF_ALLOC | SHF_EXECINSTR, l.text_base, l.text_off, text.size(), 16);
    section(25, SHT_STRTAB, 0, 0, shstr_off, shstrtab.size(), 1);
    std::memcpy(out.data() + shoff, sh.data(), sh.size() * sizeof(Elf64_Shdr));
    return out;
}

// ---- program generator -----------------------------------------------------

enum class DataKind : std::uint8_t { constant, array, string };

struct DataItem {
    Label label;
    DataKind kind;
    std::vector<std::uint8_t> bytes;
    bool placed = false;
};

struct Block {
    Label start;
    std::size_t size;
};

enum class FnKind : std::uint8_t { direct, switch_rel, switch_abs, address_taken, frame_only, heuristic_only };

struct Function {
    FnKind kind;
    Label entry;
    Label end;
    bool has_fde = false;
    unsigned cases = 0;
};

constexpr int kScratch[] = {RAX, RDX, RSI, RDI, R8, R9, R10, R11};
constexpr std::uint8_t kAluOps[] = {0x01, 0x29, 0x31, 0x21, 0x09}; // add sub xor and or

bool looks_like_prologue(const std::uint8_t *p, std::size_t n)
{
    auto starts = [&](std::initializer_list<std::uint8_t> pat) {
        return n >= pat.size() && std::equal(pat.begin(), pat.end(), p);
    };
    return starts({0xF3, 0x0F, 0x1E, 0xFA}) || starts({0x55, 0x48, 0x89, 0xE5}) ||
           starts({0x55, 0x48, 0x8B, 0xEC}) || starts({0x48, 0x83, 0xEC}) || starts({0x48, 0x81, 0xEC});
}

const char *const kWords[] = {"alpha", "bravo",  "config", "delta", "error: %s", "format", "gamma",
                              "hello", "index",  "journal", "kilo",  "lookup",    "mode=%d", "nominal",
                              "output", "parse", "query",  "retry", "status",    "table",   "usage"};

class ProgramGen {
public:
    explicit ProgramGen(const ProgramOptions &opts) : opts_(opts), rng_(opts.seed) {}

    GeneratedProgram run(const std::string &name);

private:
    std::uint64_t pick(std::uint64_t lo, std::uint64_t hi) { return std::uniform_int_distribution<std::uint64_t>(lo, hi)(rng_); }
    bool chance(double p) { return std::bernoulli_distribution(p)(rng_); }
    int scratch() { return kScratch[pick(0, std::size(kScratch) - 1)]; }

    DataItem &new_item(DataKind kind);
    DataItem *any_item(DataKind kind);
    void place(DataItem &item);
    void place_some(unsigned n);

    void simple_op();
    void body(unsigned n, const Function *self, bool allow_calls);
    void prologue(bool frame, bool endbr);
    void epilogue(bool frame);
    void emit_function(Function &f);
    void emit_switch(Function &f);

    ProgramOptions opts_;
    std::mt19937_64 rng_;
    Assembler a_;
    std::vector<DataItem> pool_;
    std::vector<Block> blocks_;
    std::vector<Function> fns_;
    std::vector<std::size_t> callable_; // indices into fns_ that may be called directly
    GeneratedProgram out_;
    std::optional<std::size_t> hot_;
    unsigned hot_refs_left_ = 0;
};

DataItem &ProgramGen::new_item(DataKind kind)
{
    DataItem item{a_.label(), kind, {}};
    switch (kind) {
    case DataKind::constant: {
        const unsigned width = chance(0.5) ? 8 : 4;
        for (unsigned i = 0; i < width; ++i) item.bytes.push_back(static_cast<std::uint8_t>(pick(0, 255)));
        ++out_.data.constants;
        break;
    }
    case DataKind::array: {
        const auto n = pick(8, 48);
        for (std::uint64_t i = 0; i < n; ++i) item.bytes.push_back(static_cast<std::uint8_t>(pick(0, 255)));
        ++out_.data.arrays;
        break;
    }
    case DataKind::string: {
        std::string s;
        for (auto n = pick(1, 4); n > 0; --n) {
            if (!s.empty()) s += ' ';
            s += kWords[pick(0, std::size(kWords) - 1)];
        }
        item.bytes.assign(s.begin(), s.end());
        item.bytes.push_back(0);
        ++out_.data.strings;
        break;
    }
    }
    pool_.push_back(std::move(item));
    return pool_.back();
}

DataItem *ProgramGen::any_item(DataKind kind)
{
    std::vector<DataItem *> c;
    for (auto &it : pool_) {
        if (it.kind == kind) c.push_back(&it);
    }
    if (c.empty()) return nullptr;
    return c[pick(0, c.size() - 1)];
}

void ProgramGen::place(DataItem &item)
{
    a_.bind(item.label);
    a_.emit(item.bytes);
    blocks_.push_back({item.label, item.bytes.size()});
    item.placed = true;
}

void ProgramGen::place_some(unsigned n)
{
    for (auto &it : pool_) {
        if (n == 0) break;
        if (!it.placed) {
            place(it);
            --n;
        }
    }
}

// Straight-line ALU op on scratch registers; never touches rcx or memory.
void ProgramGen::simple_op()
{
    const int d = scratch(), s = scratch();
    switch (pick(0, 4)) {
    case 0: mov_imm32(a_, d, static_cast<std::uint32_t>(pick(0, 0xFFFFFF))); break;
    case 1: alu_rr(a_, kAluOps[pick(0, std::size(kAluOps) - 1)], d, s); break;
    case 2: alu_imm8(a_, static_cast<int>(pick(0, 1) * 5), d, static_cast<std::uint8_t>(pick(1, 0x7F))); break;
    case 3: imul_rr(a_, d, s); break;
    default: shift_imm(a_, chance(0.5) ? 4 : 5, d, static_cast<std::uint8_t>(pick(1, 31))); break;
    }
}

void ProgramGen::body(unsigned n, const Function *self, bool allow_calls)
{
    if (hot_ && hot_refs_left_ > 0) {
        --hot_refs_left_;
        load64_rip(a_, scratch(), pool_[*hot_].label);
    }
    for (unsigned i = 0; i < n; ++i) {
        switch (pick(0, 11)) {
        case 0:
        case 1:
        case 2: simple_op(); break;
        case 3:
            if (auto *c = any_item(DataKind::constant)) {
                if (c->bytes.size() == 8) {
                    chance(0.5) ? load64_rip(a_, scratch(), c->label) : movsd_rip(a_, static_cast<int>(pick(0, 7)), c->label);
                } else {
                    load32_rip(a_, scratch(), c->label);
                }
            }
            break;
        case 4:
            if (auto *arr = any_item(DataKind::array)) {
                lea_rip(a_, RSI, arr->label);
                movzx_rsi(a_, RAX, static_cast<std::uint8_t>(pick(0, arr->bytes.size() - 1)));
            }
            break;
        case 5:
            if (auto *s = any_item(DataKind::string)) {
                lea_rip(a_, RSI, s->label);
                movzx_rsi(a_, RDX, static_cast<std::uint8_t>(pick(0, s->bytes.size() - 1)));
            }
            break;
        case 6: {
            const Label skip = a_.label();
            cmp32_imm8(a_, scratch(), static_cast<std::uint8_t>(pick(0, 0x7F)));
            const Cond cc = std::array{kE, kNE, kB, kAE, kBE, kA, kL, kG}[pick(0, 7)];
            chance(0.5) ? jcc8(a_, cc, skip) : jcc32(a_, cc, skip);
            for (auto k = pick(1, 3); k > 0; --k) simple_op();
            a_.bind(skip);
            break;
        }
        case 7: {
            mov_imm32(a_, RCX, static_cast<std::uint32_t>(pick(1, 8)));
            const Label top = a_.here();
            for (auto k = pick(1, 3); k > 0; --k) simple_op();
            dec32(a_, RCX);
            jcc8(a_, kNE, top);
            break;
        }
        case 8:
        case 9:
            if (allow_calls && self) {
                // Calls only go to functions emitted later in fns_ order, so the
                // call graph is acyclic.
                std::vector<std::size_t> later;
                for (std::size_t k : callable_) {
                    if (&fns_[k] > self) later.push_back(k);
                }
                if (!later.empty()) {
                    const auto &callee = fns_[later[pick(0, later.size() - 1)]];
                    if (callee.kind == FnKind::switch_rel || callee.kind == FnKind::switch_abs) {
                        mov_imm32(a_, RDI, static_cast<std::uint32_t>(pick(0, callee.cases + 1)));
                    }
                    call32(a_, callee.entry);
                    break;
                }
            }
            simple_op();
            break;
        case 10:
            if (chance(0.5)) {
                auto it = std::find_if(pool_.begin(), pool_.end(), [](const DataItem &d) { return !d.placed; });
                if (it != pool_.end()) {
                    const Label skip = a_.label();
                    jmp32(a_, skip);
                    place(*it);
                    a_.bind(skip);
                    break;
                }
            }
            simple_op();
            break;
        default: a_.emit({0x90}); break;
        }
    }
}

void ProgramGen::prologue(bool frame, bool endbr)
{
    if (endbr) a_.emit({0xF3, 0x0F, 0x1E, 0xFA});
    if (frame) a_.emit({0x55, 0x48, 0x89, 0xE5});
}

void ProgramGen::epilogue(bool frame)
{
    if (frame) a_.u8(0x5D);
    a_.u8(0xC3);
}

void ProgramGen::emit_switch(Function &f)
{
    const bool frame = chance(0.5);
    prologue(frame, !frame);
    const Label def = a_.label(), end = a_.label(), table = a_.label();
    std::vector<Label> cases(f.cases);
    for (auto &c : cases) c = a_.label();

    // Both bound idioms a compiler emits: cmp N-1 / ja and cmp N / jae.
    if (chance(0.5)) {
        cmp32_imm8(a_, RDI, static_cast<std::uint8_t>(f.cases - 1));
        jcc32(a_, kA, def);
    } else {
        cmp32_imm8(a_, RDI, static_cast<std::uint8_t>(f.cases));
        jcc32(a_, kAE, def);
    }
    if (f.kind == FnKind::switch_rel) {
        lea_rip(a_, RDX, table);
        a_.emit({0x48, 0x63, 0x04, 0xBA}); // movsxd rax, dword [rdx + rdi*4]
        a_.emit({0x48, 0x01, 0xD0});       // add rax, rdx
        a_.emit({0xFF, 0xE0});             // jmp rax
    } else {
        a_.emit({0xFF, 0x24, 0xFD}); // jmp [rdi*8 + table]
        a_.abs32(table);
    }
    for (auto &c : cases) {
        a_.bind(c);
        for (auto k = pick(1, 4); k > 0; --k) simple_op();
        jmp32(a_, end);
    }
    a_.bind(def);
    body(static_cast<unsigned>(pick(1, 4)), &f, false);
    a_.bind(end);
    epilogue(frame);

    a_.bind(table);
    for (auto &c : cases) f.kind == FnKind::switch_rel ? a_.diff32(c, table, Sec::text) : a_.abs64(c, Sec::text);
    blocks_.push_back({table, f.cases * (f.kind == FnKind::switch_rel ? 4u : 8u)});
    ++out_.data.jump_tables;
    out_.entries.switch_cases += f.cases;
}

void ProgramGen::emit_function(Function &f)
{
    if (f.kind == FnKind::heuristic_only) {
        while (a_.size() % 16) a_.u8(0xCC);
    }
    a_.bind(f.entry);
    if (f.kind == FnKind::switch_rel || f.kind == FnKind::switch_abs) {
        emit_switch(f);
    } else {
        const unsigned style = static_cast<unsigned>(pick(0, 2));
        const bool frame = style == 0, endbr = style == 1, stack = style == 2;
        prologue(frame, endbr);
        if (stack) a_.emit({0x48, 0x83, 0xEC, 0x18}); // sub rsp, 0x18
        body(static_cast<unsigned>(pick(4, 18)), &f, f.kind == FnKind::direct);
        if (stack) a_.emit({0x48, 0x83, 0xC4, 0x18});
        epilogue(frame);
    }
    a_.bind(f.end);
    place_some(static_cast<unsigned>(pick(0, 2)));
}

GeneratedProgram ProgramGen::run(const std::string &name)
{
    out_.name = name;
    const unsigned n = static_cast<unsigned>(pick(opts_.min_functions, opts_.max_functions));

    // Every program carries all four data categories.
    for (unsigned i = 0; i < n; ++i) new_item(static_cast<DataKind>(i % 3));
    const std::string msg = name + " ok\n";
    DataItem &msg_item = new_item(DataKind::string);
    msg_item.bytes.assign(msg.begin(), msg.end());
    out_.expected_stdout = msg;
    const Label msg_label = msg_item.label;
    hot_ = 0; // pool_[0] is a constant
    hot_refs_left_ = static_cast<unsigned>(pick(9, 13));

    std::vector<FnKind> kinds = {FnKind::switch_rel, chance(0.5) ? FnKind::switch_abs : FnKind::switch_rel,
                                 FnKind::address_taken, FnKind::frame_only, FnKind::heuristic_only};
    if (chance(0.5)) kinds.push_back(FnKind::address_taken);
    if (chance(0.5)) kinds.push_back(FnKind::heuristic_only);
    if (chance(0.5)) kinds.push_back(FnKind::frame_only);
    while (kinds.size() < n) kinds.push_back(FnKind::direct);
    std::shuffle(kinds.begin(), kinds.end(), rng_);

    for (FnKind k : kinds) {
        Function f{k, a_.label(), a_.label()};
        switch (k) {
        case FnKind::direct: ++out_.entries.direct; f.has_fde = chance(0.5); break;
        case FnKind::switch_rel:
        case FnKind::switch_abs:
            ++out_.entries.direct;
            f.has_fde = chance(0.5);
            f.cases = static_cast<unsigned>(pick(3, 10));
            break;
        case FnKind::address_taken: ++out_.entries.address_taken; f.has_fde = chance(0.5); break;
        case FnKind::frame_only: ++out_.entries.frame_only; f.has_fde = true; break;
        case FnKind::heuristic_only: ++out_.entries.heuristic_only; break;
        }
        fns_.push_back(f);
    }
    for (std::size_t i = 0; i < fns_.size(); ++i) {
        const auto k = fns_[i].kind;
        if (k == FnKind::direct || k == FnKind::switch_rel || k == FnKind::switch_abs) callable_.push_back(i);
    }

    // _start: print, call every callable function, call through the pointer
    // table, exit.
    const Label start = a_.here();
    write_stdout(a_, msg_label, static_cast<std::uint32_t>(msg.size()));
    for (std::size_t k : callable_) {
        if (fns_[k].cases) mov_imm32(a_, RDI, static_cast<std::uint32_t>(pick(0, fns_[k].cases + 1)));
        call32(a_, fns_[k].entry);
    }
    for (const auto &f : fns_) {
        if (f.kind != FnKind::address_taken) continue;
        const Label slot = a_.here(Sec::rodata);
        a_.abs64(f.entry, Sec::rodata);
        call_rip(a_, slot);
    }
    exit_zero(a_);

    if (opts_.plant_gadgets) {
        DataItem &g = new_item(DataKind::array);
        g.bytes = {0x11, 0x58, 0xC3, 0x22, 0x33, 0xC3, 0x44, 0x0F, 0x01, 0xEF, 0x55, 0x0F, 0x0F, 0x01, 0xEF, 0x66};
        place(g);
    } else {
        place_some(1);
    }

    for (auto &f : fns_) emit_function(f);
    for (auto &it : pool_) {
        if (!it.placed) place(it);
    }

    std::vector<FrameRange> frames;
    for (const auto &f : fns_) {
        if (f.has_fde) frames.push_back({f.entry, f.end});
    }
    const Layout layout = plan_layout(a_, frames.size());
    out_.elf = write_elf(a_, layout, start, frames);

    for (const auto &b : blocks_) {
        const Address s = a_.addr(b.start);
        out_.truth_data.insert(ByteInterval{s, s + b.size});
    }
    if (opts_.plant_gadgets) {
        const Address g = a_.addr(pool_.back().label);
        out_.planted = {g + 1, g + 5, g + 7, g + 12};
    }

    std::ostringstream trace;
    trace << "# legal reads for " << name << '\n';
    std::size_t hot_block = pick(0, out_.truth_data.size() - 1), idx = 0;
    for (const auto &iv : out_.truth_data) {
        const unsigned reads = idx++ == hot_block ? static_cast<unsigned>(pick(101, 130)) : static_cast<unsigned>(pick(1, 3));
        for (unsigned r = 0; r < reads; ++r) {
            std::uint64_t size = std::array<std::uint64_t, 4>{1, 2, 4, 8}[pick(0, 3)];
            size = std::min(size, iv.length());
            trace << "R 0x" << std::hex << iv.start + pick(0, iv.length() - size) << std::dec << ' ' << size << '\n';
            trace << "I " << pick(1000, 100000) << '\n';
        }
    }
    out_.trace = trace.str();
    return std::move(out_);
}

// Heuristic entry detection keys on prologue byte patterns; a data block that
// happens to contain one is regenerated so the emitted ground truth stays exact.
bool data_free_of_prologues(const GeneratedProgram &p)
{
    // .text sits at file offset == vaddr - kImageBase.
    for (const auto &iv : p.truth_data) {
        for (Address a = iv.start; a < iv.end; ++a) {
            const auto off = static_cast<std::size_t>(a - kImageBase);
            if (looks_like_prologue(p.elf.data() + off, p.elf.size() - off)) return false;
        }
    }
    return true;
}

} // namespace

GeneratedProgram generate_program(const ProgramOptions &opts)
{
    ProgramOptions o = opts;
    for (unsigned attempt = 0;; ++attempt) {
        const std::string name = opts.name.empty() ? "program_" + std::to_string(opts.seed) : opts.name;
        GeneratedProgram p = ProgramGen(o).run(name);
        if (data_free_of_prologues(p)) return p;
        o.seed = opts.seed * 0x9E3779B97F4A7C15ull + attempt + 1;
    }
}

GeneratedProgram generate_hello_world()
{
    Assembler a;
    const std::string msg = "Hello from an execute-only text segment!\n";
    const Label start = a.here();
    const Label text = a.label();
    write_stdout(a, text, static_cast<std::uint32_t>(msg.size()));
    exit_zero(a);
    a.bind(text);
    a.emit(std::vector<std::uint8_t>(msg.begin(), msg.end()));

    GeneratedProgram p;
    p.name = "hello";
    const Layout layout = plan_layout(a, 0);
    p.elf = write_elf(a, layout, start, {});
    p.truth_data.insert(ByteInterval{a.addr(text), a.addr(text) + msg.size()});
    p.expected_stdout = msg;
    p.data.strings = 1;
    p.entries.direct = 1;
    p.trace = "R 0x" + [&] {
        std::ostringstream s;
        s << std::hex << a.addr(text);
        return s.str();
    }() + " 8\nI 12\n";
    return p;
}

std::vector<std::uint8_t> make_executable(const std::vector<std::uint8_t> &text, std::size_t entry_offset)
{
    Assembler a;
    const Label entry = a.label();
    a.emit(std::vector<std::uint8_t>(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(entry_offset)));
    a.bind(entry);
    a.emit(std::vector<std::uint8_t>(text.begin() + static_cast<std::ptrdiff_t>(entry_offset), text.end()));
    const Layout layout = plan_layout(a, 0);
    return write_elf(a, layout, entry, {});
}

Address text_base_of_fixture() noexcept
{
    return kImageBase + kPage;
}

std::vector<GeneratedProgram> generate_corpus(std::uint64_t seed, unsigned count)
{
    std::vector<GeneratedProgram> out;
    for (unsigned i = 0; i < count; ++i) {
        ProgramOptions o;
        o.seed = seed * 1000003ull + i;
        o.plant_gadgets = i % 4 == 0;
        char name[32];
        std::snprintf(name, sizeof name, "corpus_%03u", i);
        o.name = name;
        out.push_back(generate_program(o));
    }
    return out;
}

} // namespace xom
