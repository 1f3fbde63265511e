#include "xom/surface.hpp"

#include "xom/error.hpp"
#include "xom/x86_decode.hpp"

namespace xom {

double code_coverage(const DisassemblyReport &report, const IntervalSet &truth_code)
{
    const auto total = truth_code.total_bytes();
    if (total == 0) throw Error(ErrorKind::EmptyGroundTruth, "ground truth has no code bytes");
    const auto hit = report.code.intersected(truth_code).total_bytes();
    return static_cast<double>(hit) / static_cast<double>(total);
}

double overall_coverage(const DisassemblyReport &report)
{
    if (report.executable_total == 0) return 1.0;
    return static_cast<double>(report.code.total_bytes()) / static_cast<double>(report.executable_total);
}

EdbStats edb_stats(const DisassemblyReport &report)
{
    EdbStats s;
    s.count = report.superset.size();
    if (s.count) s.avg_size = static_cast<double>(report.superset.total_bytes()) / static_cast<double>(s.count);
    return s;
}

IntervalSet truth_code_from_data(const BinaryImage &image, const IntervalSet &truth_data)
{
    return executable_ranges(image).subtracted(truth_data);
}

Metrics compute_metrics(const DisassemblyReport &report, const IntervalSet *truth_code)
{
    Metrics m;
    if (truth_code) m.code_coverage = code_coverage(report, *truth_code);
    m.overall_coverage = overall_coverage(report);
    m.readable_fraction = 1.0 - m.overall_coverage;
    const auto edb = edb_stats(report);
    m.edb_count = edb.count;
    m.avg_edb_size = edb.avg_size;
    return m;
}

double read_intensity(std::uint64_t reads, std::uint64_t executed)
{
    if (executed == 0) throw Error(ErrorKind::ZeroInstructions, "no executed instructions");
    return static_cast<double>(reads) / static_cast<double>(executed);
}

std::string_view to_string(GadgetEnd e) noexcept
{
    switch (e) {
    case GadgetEnd::ret: return "ret";
    case GadgetEnd::jmp_reg: return "jmp_reg";
    case GadgetEnd::call_reg: return "call_reg";
    }
    return "?";
}

std::string_view to_string(Region r) noexcept
{
    return r == Region::inside_superset ? "inside_superset" : "inside_code";
}

namespace {

std::optional<GadgetEnd> terminator_of(const Instruction &insn)
{
    switch (insn.kind) {
    case FlowKind::ret:
        if (insn.map == OpcodeMap::primary && (insn.opcode == 0xc3 || insn.opcode == 0xc2)) return GadgetEnd::ret;
        return std::nullopt;
    case FlowKind::indirect_jump:
        if (insn.mod == 3) return GadgetEnd::jmp_reg;
        return std::nullopt;
    case FlowKind::indirect_call:
        if (insn.mod == 3) return GadgetEnd::call_reg;
        return std::nullopt;
    default:
        return std::nullopt;
    }
}

} // namespace

std::vector<Gadget> gadget_scan(const BinaryImage &image, const DisassemblyReport &report,
                                unsigned max_instructions)
{
    std::vector<Gadget> out;
    const ExecutableMemory mem(image);
    std::size_t index = 0;
    for (const auto &block : report.superset) {
        for (Address start = block.start; start < block.end; ++start) {
            Address pc = start;
            for (unsigned n = 1; n <= max_instructions; ++n) {
                auto bytes = mem.from(pc);
                if (bytes.empty()) break;
                bytes = bytes.first(std::min<std::uint64_t>(bytes.size(), block.end - pc));
                const auto insn = decode(bytes, pc);
                if (!insn) break;
                if (auto end = terminator_of(*insn)) {
                    out.push_back({start, insn->end() - start, n, *end, index});
                    break;
                }
                if (insn->kind != FlowKind::fallthrough) break;
                pc = insn->end();
                if (pc >= block.end) break;
            }
        }
        ++index;
    }
    return out;
}

std::vector<WrpkruHit> wrpkru_scan(const BinaryImage &image, const DisassemblyReport &report)
{
    std::vector<WrpkruHit> out;
    const ExecutableMemory mem(image);
    for (const auto &range : mem.ranges()) {
        const auto bytes = mem.from(range.start);
        for (std::size_t i = 0; i + 3 <= bytes.size(); ++i) {
            if (bytes[i] == 0x0f && bytes[i + 1] == 0x01 && bytes[i + 2] == 0xef) {
                const Address a = range.start + i;
                out.push_back({a, report.superset.contains(a) ? Region::inside_superset : Region::inside_code});
            }
        }
    }
    return out;
}

} // namespace xom
