#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "support/oracles.hpp"
#include "support/testing.hpp"

#include "xom/corpus.hpp"
#include "xom/ground_truth.hpp"
#include "xom/surface.hpp"

using xom::ByteInterval;
using xom::IntervalSet;

namespace {

const xom::Address kText = xom::text_base_of_fixture();

xom::DisassemblyReport report_of(IntervalSet code, IntervalSet superset)
{
    xom::DisassemblyReport r;
    r.executable_total = code.total_bytes() + superset.total_bytes();
    r.code = std::move(code);
    r.superset = std::move(superset);
    return r;
}

oracle::End end_of(xom::GadgetEnd e)
{
    switch (e) {
    case xom::GadgetEnd::ret: return oracle::End::ret;
    case xom::GadgetEnd::jmp_reg: return oracle::End::jmp_reg;
    case xom::GadgetEnd::call_reg: return oracle::End::call_reg;
    }
    return oracle::End::none;
}

// Oracle gadgets over the superset blocks of `report`, reading the raw file.
std::set<oracle::OracleGadget> oracle_gadgets(const std::vector<std::uint8_t> &elf, const xom::DisassemblyReport &r,
                                              unsigned depth)
{
    std::set<oracle::OracleGadget> out;
    for (const auto &seg : oracle::load_segments(elf)) {
        if (!seg.exec) continue;
        for (const auto &blk : r.superset) {
            if (blk.start < seg.vaddr || blk.end > seg.vaddr + seg.filesz) continue;
            const auto *p = elf.data() + seg.offset + (blk.start - seg.vaddr);
            const std::vector<std::uint8_t> bytes(p, p + blk.length());
            for (const auto &g : oracle::gadgets_in(bytes, blk.start, depth)) out.insert(g);
        }
    }
    return out;
}

std::set<oracle::OracleGadget> as_oracle(const std::vector<xom::Gadget> &gs)
{
    std::set<oracle::OracleGadget> out;
    for (const auto &g : gs) out.insert({g.start, g.length, g.instructions, end_of(g.terminator)});
    return out;
}

std::vector<std::uint8_t> token_block(oracle::Rng &rng, std::size_t tokens)
{
    std::vector<std::uint8_t> out;
    for (std::size_t i = 0; i < tokens; ++i) {
        const auto &t = rng.choice(oracle::gadget_tokens());
        out.insert(out.end(), t.begin(), t.end());
    }
    return out;
}

} // namespace

TEST_CASE("coverage metrics")
{
    {
        const auto r = report_of({{0, 9707}}, {{9707, 10000}});
        CHECK(xom::code_coverage(r, IntervalSet{{0, 10000}}) == doctest::Approx(0.9707).epsilon(1e-12));
    }
    {
        const auto r = report_of({{0, 95290}}, {{95290, 100000}});
        const auto m = xom::compute_metrics(r);
        CHECK(std::abs(m.overall_coverage - 0.9529) < 1e-12);
        CHECK(std::abs(m.readable_fraction - 0.0471) < 1e-12);
        CHECK_FALSE(m.code_coverage);
    }
    {
        // Code outside the true code set does not count.
        const auto r = report_of({{0, 60}}, {{60, 100}});
        const IntervalSet truth{{0, 40}, {70, 100}};
        CHECK(xom::code_coverage(r, truth) == doctest::Approx(40.0 / 70.0));
        const auto m = xom::compute_metrics(r, &truth);
        REQUIRE(m.code_coverage);
        CHECK(*m.code_coverage == doctest::Approx(40.0 / 70.0));
    }
    CHECK_XOM_ERROR(xom::code_coverage(report_of({{0, 4}}, {}), IntervalSet{}), xom::ErrorKind::EmptyGroundTruth);
    CHECK(xom::overall_coverage(xom::DisassemblyReport{}) == 1.0);
}

TEST_CASE("embedded data block statistics")
{
    const auto r = report_of({{10, 20}, {52, 60}}, {{0, 10}, {20, 52}});
    const auto s = xom::edb_stats(r);
    CHECK(s.count == 2);
    CHECK(s.avg_size == 21.0);
    CHECK(xom::edb_stats(report_of({{0, 8}}, {})).count == 0);
    CHECK(xom::edb_stats(report_of({{0, 8}}, {})).avg_size == 0.0);
}

TEST_CASE("read intensity")
{
    CHECK(std::abs(xom::read_intensity(14, 100000000) - 1.4e-7) < 1e-20);
    CHECK(std::abs(xom::read_intensity(1, 10000000) - 1e-7) < 1e-20);
    CHECK(xom::read_intensity(0, 5) == 0.0);
    CHECK_XOM_ERROR(xom::read_intensity(3, 0), xom::ErrorKind::ZeroInstructions);
}

TEST_CASE("truth code is the complement of truth data")
{
    std::vector<std::uint8_t> text(0x100, 0x90);
    const auto img = xom::load_elf(xom::make_executable(text));
    const IntervalSet data{{kText + 0x10, kText + 0x20}};
    CHECK(xom::truth_code_from_data(img, data) ==
          IntervalSet({{kText, kText + 0x10}, {kText + 0x20, kText + 0x100}}));
}

TEST_CASE("pop; ret yields two gadgets")
{
    const auto img = xom::load_elf(xom::make_executable({0xF4, 0x58, 0xC3}));
    const auto r = xom::compute_superset(img);
    REQUIRE(r.superset == IntervalSet{{kText + 1, kText + 3}});
    const auto g = xom::gadget_scan(img, r);
    REQUIRE(g.size() == 2);
    CHECK(g[0] == xom::Gadget{kText + 1, 2, 2, xom::GadgetEnd::ret, 0});
    CHECK(g[1] == xom::Gadget{kText + 2, 1, 1, xom::GadgetEnd::ret, 0});
}

TEST_CASE("memory-indirect branches are not gadget ends")
{
    const auto img = xom::load_elf(xom::make_executable({0xF4, 0x58, 0xFF, 0x16, 0x59, 0xFF, 0xE6}));
    const auto r = xom::compute_superset(img);
    const auto g = xom::gadget_scan(img, r);
    REQUIRE(g.size() == 2);
    CHECK(g[0].start == kText + 4);
    CHECK(g[0].terminator == xom::GadgetEnd::jmp_reg);
    CHECK(g[1].start == kText + 5);
}

TEST_CASE("overlapping WRPKRU is found at every byte offset")
{
    const auto img = xom::load_elf(xom::make_executable({0xF4, 0x0F, 0x0F, 0x01, 0xEF}));
    const auto r = xom::compute_superset(img);
    const auto hits = xom::wrpkru_scan(img, r);
    REQUIRE(hits.size() == 1);
    CHECK(hits[0] == xom::WrpkruHit{kText + 2, xom::Region::inside_superset});
}

TEST_CASE("gadget scan matches the brute-force oracle")
{
    oracle::Rng rng(21);
    for (int round = 0; round < 150; ++round) {
        std::vector<std::uint8_t> text = {0xF4};
        const auto block = token_block(rng, rng.between(1, 60));
        text.insert(text.end(), block.begin(), block.end());
        const auto elf = xom::make_executable(text);
        const auto img = xom::load_elf(elf);
        const auto r = xom::compute_superset(img);
        const unsigned depth = static_cast<unsigned>(rng.between(1, 12));
        const auto got = xom::gadget_scan(img, r, depth);
        CHECK(std::is_sorted(got.begin(), got.end(), [](const auto &a, const auto &b) { return a.start < b.start; }));
        for (const auto &g : got) {
            REQUIRE(g.block < r.superset.size());
            CHECK(r.superset.intervals()[g.block].contains(ByteInterval{g.start, g.start + g.length}));
        }
        CHECK(as_oracle(got) == oracle_gadgets(elf, r, depth));

        std::vector<xom::Address> hits;
        for (const auto &h : xom::wrpkru_scan(img, r)) {
            hits.push_back(h.vaddr);
            CHECK((h.region == xom::Region::inside_superset) == r.superset.contains(h.vaddr));
        }
        CHECK(hits == oracle::wrpkru_sites(elf));
    }
}

TEST_CASE("planted gadgets in generated programs")
{
    xom::ProgramOptions o;
    o.seed = 8;
    o.plant_gadgets = true;
    const auto p = xom::generate_program(o);
    REQUIRE(!p.planted.empty());
    const auto img = xom::load_elf(p.elf);
    const auto r = xom::compute_superset(img);
    const auto got = as_oracle(xom::gadget_scan(img, r));
    for (auto a : p.planted) {
        INFO(a);
        CHECK(r.superset.contains(a));
        const bool gadget = std::any_of(got.begin(), got.end(), [&](const auto &g) { return g.start == a; });
        const auto sites = oracle::wrpkru_sites(p.elf);
        CHECK((gadget || std::find(sites.begin(), sites.end(), a) != sites.end()));
    }
}

TEST_CASE("ground truth files")
{
    const auto s = xom::parse_ground_truth("# data\n0x10 0x20\n\n0x30 0x31  # one byte\n");
    CHECK(s == IntervalSet({{0x10, 0x20}, {0x30, 0x31}}));
    CHECK(xom::format_ground_truth(s) == "0x10 0x20\n0x30 0x31\n");
    CHECK(xom::parse_ground_truth(xom::format_ground_truth(s)) == s);
    CHECK(xom::parse_ground_truth("").empty());

    auto fails_on_line = [](const std::string &text, const std::string &line) {
        try {
            (void)xom::parse_ground_truth(text);
        } catch (const xom::Error &e) {
            CHECK(e.kind() == xom::ErrorKind::GroundTruthParse);
            CHECK(std::string(e.what()).find("line " + line) != std::string::npos);
            return;
        }
        FAIL("no error for: " << text);
    };
    fails_on_line("10 20\n", "1");
    fails_on_line("0x10 0x20\n0x20 0x10\n", "2");
    fails_on_line("0x10 0x10\n", "1");
    fails_on_line("0x10 0x20\n0x18 0x30\n", "2");
    fails_on_line("0x30 0x40\n0x10 0x20\n", "2");
    fails_on_line("0x10\n", "1");
    fails_on_line("0x10 0x20 0x30\n", "1");
    fails_on_line("0xZZ 0x20\n", "1");
}
