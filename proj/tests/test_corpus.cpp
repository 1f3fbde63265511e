#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "support/oracles.hpp"
#include "support/testing.hpp"

#include "xom/corpus.hpp"
#include "xom/monitor.hpp"

TEST_CASE("generated programs run and print their line")
{
    const auto dir = oracle::scratch_dir("corpus");
    auto progs = xom::generate_corpus(17, 12);
    progs.push_back(xom::generate_hello_world());
    for (const auto &p : progs) {
        const auto path = (dir / p.name).string();
        xom::write_file(path, p.elf, true);
        const auto r = oracle::run(oracle::quote(path));
        INFO(p.name);
        CHECK(r.exit_code == 0);
        CHECK(r.out == p.expected_stdout);
    }
    std::filesystem::remove_all(dir);
}

TEST_CASE("ground truth and traces are consistent with the image")
{
    xom::DataCounts total;
    for (const auto &p : xom::generate_corpus(23, 12)) {
        INFO(p.name);
        const auto img = xom::load_elf(p.elf);
        const auto exec = xom::executable_ranges(img);
        CHECK(!p.truth_data.empty());
        CHECK(exec.intersected(p.truth_data) == p.truth_data);
        CHECK(exec.contains(img.entry_point()));
        CHECK_FALSE(p.truth_data.contains(img.entry_point()));

        // Every traced read lies inside one data interval.
        for (const auto &e : xom::parse_trace(p.trace)) {
            if (e.kind != xom::TraceEvent::Kind::Read) continue;
            CHECK(p.truth_data.contains(xom::ByteInterval{e.read.addr, e.read.addr + e.read.size}));
        }
        total.constants += p.data.constants;
        total.arrays += p.data.arrays;
        total.strings += p.data.strings;
        total.jump_tables += p.data.jump_tables;
    }
    CHECK(total.constants > 0);
    CHECK(total.arrays > 0);
    CHECK(total.strings > 0);
    CHECK(total.jump_tables > 0);
}

TEST_CASE("generation is deterministic per seed")
{
    xom::ProgramOptions o;
    o.seed = 31;
    const auto a = xom::generate_program(o);
    const auto b = xom::generate_program(o);
    CHECK(a.elf == b.elf);
    CHECK(a.truth_data == b.truth_data);
    CHECK(a.trace == b.trace);
    o.seed = 32;
    CHECK(xom::generate_program(o).elf != a.elf);
}

TEST_CASE("fixture executables")
{
    const auto elf = xom::make_executable({0x90, 0xF4}, 1);
    const auto img = xom::load_elf(elf);
    CHECK(img.entry_point() == xom::text_base_of_fixture() + 1);
    CHECK(xom::executable_ranges(img).total_bytes() == 2);
}
