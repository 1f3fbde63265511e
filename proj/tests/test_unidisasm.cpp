#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "support/oracles.hpp"
#include "support/testing.hpp"

#include <map>

#include "xom/corpus.hpp"
#include "xom/unidisasm.hpp"

using xom::ByteInterval;
using xom::EntrySource;
using xom::IntervalSet;

namespace {

const xom::Address kText = xom::text_base_of_fixture();

std::vector<xom::GeneratedProgram> &corpus()
{
    static auto c = xom::generate_corpus(99, 16);
    return c;
}

// Byte-level check that code and superset partition `exec`.
void check_partition(const xom::DisassemblyReport &r, const IntervalSet &exec)
{
    CHECK(r.code.is_normalized());
    CHECK(r.superset.is_normalized());
    CHECK(r.code.intersected(r.superset).empty());
    CHECK(r.code.united(r.superset) == exec);
    CHECK(r.code.total_bytes() + r.superset.total_bytes() == r.executable_total);
    CHECK(exec.total_bytes() == r.executable_total);
}

} // namespace

TEST_CASE("straight-line fixture")
{
    // 0: call +2 ; 5: hlt ; 6: 2 data bytes ; 8: ret ; 9..: data
    std::vector<std::uint8_t> text = {0xE8, 0x03, 0x00, 0x00, 0x00, 0xF4, 0xAA, 0xBB, 0xC3};
    text.resize(0x40, 0xD6);
    const auto img = xom::load_elf(xom::make_executable(text));
    const auto r = xom::compute_superset(img);
    check_partition(r, xom::executable_ranges(img));
    CHECK(r.code.contains(ByteInterval{kText, kText + 6}));
    CHECK(r.code.contains(kText + 8));
    CHECK_FALSE(r.code.contains(kText + 6));
    CHECK_FALSE(r.code.contains(kText + 7));
    CHECK_FALSE(r.code.contains(kText + 9));
    REQUIRE(!r.entry_points.empty());
    CHECK(r.entry_points.front() == xom::EntryPoint{kText, EntrySource::program_entry});
}

TEST_CASE("recursive traversal rejects entries outside the superset")
{
    std::vector<std::uint8_t> text(0x20, 0x90);
    text[0] = 0xC3;
    const auto img = xom::load_elf(xom::make_executable(text));
    IntervalSet superset{{kText + 0x10, kText + 0x20}};
    CHECK_XOM_ERROR(xom::recursive_disassemble(img, kText, superset), xom::ErrorKind::EntryNotInSuperset);
    const auto code = xom::recursive_disassemble(img, kText + 0x10, superset);
    CHECK(code == IntervalSet{{kText + 0x10, kText + 0x20}});
}

TEST_CASE("an image with no executable segment is rejected")
{
    auto bytes = xom::make_executable({0xC3});
    // Drop PF_X from every program header and SHF_EXECINSTR from every section.
    Elf64_Ehdr eh;
    std::memcpy(&eh, bytes.data(), sizeof eh);
    for (unsigned i = 0; i < eh.e_phnum; ++i) {
        Elf64_Phdr ph;
        std::memcpy(&ph, bytes.data() + eh.e_phoff + i * sizeof ph, sizeof ph);
        ph.p_flags &= ~PF_X;
        std::memcpy(bytes.data() + eh.e_phoff + i * sizeof ph, &ph, sizeof ph);
    }
    for (unsigned i = 0; i < eh.e_shnum; ++i) {
        Elf64_Shdr sh;
        std::memcpy(&sh, bytes.data() + eh.e_shoff + i * sizeof sh, sizeof sh);
        sh.sh_flags &= ~std::uint64_t{SHF_EXECINSTR};
        std::memcpy(bytes.data() + eh.e_shoff + i * sizeof sh, &sh, sizeof sh);
    }
    CHECK_XOM_ERROR(xom::compute_superset(xom::load_elf(bytes)), xom::ErrorKind::NoExecutableCode);
}

TEST_CASE("generated programs: partition, soundness and entry sources")
{
    std::map<EntrySource, unsigned> sources;
    for (const auto &p : corpus()) {
        INFO(p.name);
        const auto img = xom::load_elf(p.elf);
        const auto exec = xom::executable_ranges(img);
        const auto r = xom::compute_superset(img);
        check_partition(r, exec);

        // No embedded-data byte is ever classified as code.
        CHECK(r.code.intersected(p.truth_data).empty());
        // Every data byte is left readable.
        CHECK(r.superset.subtracted(p.truth_data).total_bytes() == r.superset.total_bytes() - p.truth_data.total_bytes());

        const auto truth_code = exec.subtracted(p.truth_data);
        const double cc = static_cast<double>(r.code.intersected(truth_code).total_bytes()) /
                          static_cast<double>(truth_code.total_bytes());
        CHECK(cc >= 0.90);

        for (const auto &e : r.entry_points) {
            ++sources[e.source];
            CHECK(r.code.contains(e.vaddr));
        }
        if (p.entries.switch_cases > 0) {
            const auto n = std::count_if(r.entry_points.begin(), r.entry_points.end(),
                                         [](const auto &e) { return e.source == EntrySource::jump_table; });
            CHECK(n > 0);
        }
        CHECK(r.stats.iterations >= 1);
        CHECK(r.stats.candidates_tried >= r.stats.candidates_rejected);
    }
    CHECK(sources[EntrySource::program_entry] == corpus().size());
    CHECK(sources[EntrySource::jump_table] > 0);
    CHECK(sources[EntrySource::frame_unwind] > 0);
    CHECK(sources[EntrySource::address_taken] > 0);
    CHECK(sources[EntrySource::heuristic] > 0);
}

TEST_CASE("bytes only move from the superset to code")
{
    for (std::size_t i = 0; i < 6; ++i) {
        const auto &p = corpus()[i];
        const auto img = xom::load_elf(p.elf);
        std::uint64_t last_code = 0, last_superset = ~std::uint64_t{0}, total = 0;
        unsigned commits = 0;
        const auto r = xom::compute_superset(img, [&](const xom::EntryPoint &, std::uint64_t code, std::uint64_t superset) {
            CHECK(code >= last_code);
            CHECK(superset <= last_superset);
            if (commits++ == 0) total = code + superset;
            CHECK(code + superset == total);
            last_code = code;
            last_superset = superset;
        });
        CHECK(commits == r.entry_points.size());
        CHECK(last_code == r.code.total_bytes());
        CHECK(total == r.executable_total);
    }
}

TEST_CASE("results are deterministic")
{
    const auto img = xom::load_elf(corpus()[1].elf);
    const auto a = xom::compute_superset(img);
    const auto b = xom::compute_superset(img);
    CHECK(a.code == b.code);
    CHECK(a.superset == b.superset);
    CHECK(a.entry_points == b.entry_points);
}

TEST_CASE("instructions_in covers code exactly")
{
    const auto img = xom::load_elf(corpus()[2].elf);
    const auto r = xom::compute_superset(img);
    IntervalSet covered;
    for (const auto &in : xom::instructions_in(img, r.code)) covered.insert(ByteInterval{in.vaddr, in.end()});
    CHECK(covered == r.code);
}

TEST_CASE("system binaries")
{
    for (const std::string path : {"/bin/true", "/bin/ls"}) {
        if (!std::filesystem::exists(path)) continue;
        const auto img = xom::load_elf_file(path);
        const auto r = xom::compute_superset(img);
        INFO(path);
        check_partition(r, xom::executable_ranges(img));
        CHECK(r.code.contains(img.entry_point()));
        CHECK(r.code.total_bytes() > r.superset.total_bytes());
    }
}
