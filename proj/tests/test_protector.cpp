#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "support/oracles.hpp"
#include "support/testing.hpp"

#include "support/fixtures.hpp"
#include "xom/corpus.hpp"
#include "xom/protector.hpp"

using xom::ByteInterval;

namespace {

const xom::EmbeddedDataBlock *find(const std::vector<xom::EmbeddedDataBlock> &list, const ByteInterval &iv)
{
    for (const auto &blk : list) {
        if (blk.interval == iv) return &blk;
    }
    return nullptr;
}

} // namespace

TEST_CASE("ten references stay regular, eleven go to the optimization list")
{
    oracle::Rng rng(1);
    const auto f = fixtures::ref_fixture(10, 11, rng);
    const auto r = xom::protect(f.elf);
    CHECK(r.report.superset == xom::IntervalSet({f.a, f.b}));
    REQUIRE(r.lists.regular.size() == 1);
    REQUIRE(r.lists.optimization.size() == 1);
    CHECK(r.lists.regular[0] == xom::EmbeddedDataBlock{f.a, 10, 0});
    CHECK(r.lists.optimization[0] == xom::EmbeddedDataBlock{f.b, 11, 0});
}

TEST_CASE("list placement follows the reference count")
{
    oracle::Rng rng(2);
    for (int round = 0; round < 200; ++round) {
        const auto ra = static_cast<unsigned>(rng.between(0, 20));
        const auto rb = static_cast<unsigned>(rng.between(0, 20));
        const auto f = fixtures::ref_fixture(ra, rb, rng);
        const auto r = xom::protect(f.elf);
        INFO("refs ", ra, " / ", rb);
        for (const auto &[iv, refs] : {std::pair{f.a, ra}, std::pair{f.b, rb}}) {
            const auto *opt = find(r.lists.optimization, iv);
            const auto *reg = find(r.lists.regular, iv);
            CHECK((opt != nullptr) != (reg != nullptr));
            const auto *blk = opt ? opt : reg;
            REQUIRE(blk != nullptr);
            CHECK(blk->static_ref_count == refs);
            CHECK(blk->read_count == 0);
            CHECK((opt != nullptr) == (refs > 10));
        }
    }
}

TEST_CASE("protected output carries the flag and the same lists")
{
    oracle::Rng rng(3);
    const auto f = fixtures::ref_fixture(4, 12, rng);
    const auto r = xom::protect(f.elf);
    const auto img = xom::load_elf(r.bytes);
    CHECK(xom::is_xom_enabled(img));
    CHECK(r.bytes[EI_PAD + 1] == 0x01);
    CHECK(xom::parse_xom_section(img) == r.lists);

    // Executable bytes are identical.
    const auto before = oracle::load_segments(f.elf);
    const auto after = oracle::load_segments(r.bytes);
    REQUIRE(before.size() == after.size());
    for (std::size_t i = 0; i < before.size(); ++i) {
        if (!before[i].exec) continue;
        CHECK(std::equal(f.elf.begin() + before[i].offset, f.elf.begin() + before[i].offset + before[i].filesz,
                         r.bytes.begin() + after[i].offset));
    }

    CHECK_XOM_ERROR(xom::protect(r.bytes), xom::ErrorKind::SectionExists);
    const std::vector<std::uint8_t> junk = {'n', 'o', 't', ' ', 'e', 'l', 'f'};
    CHECK_XOM_ERROR(xom::protect(junk), xom::ErrorKind::NotElf);
}

TEST_CASE("every superset block lands in exactly one list")
{
    for (const auto &p : xom::generate_corpus(5, 8)) {
        const auto r = xom::protect(p.elf);
        INFO(p.name);
        CHECK(r.lists.total() == r.report.superset.size());
        CHECK(r.lists.covered() == r.report.superset);
        for (const auto &b : r.lists.optimization) CHECK(b.static_ref_count > 10);
        for (const auto &b : r.lists.regular) CHECK(b.static_ref_count <= 10);
    }
}
