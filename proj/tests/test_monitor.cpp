#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "support/oracles.hpp"
#include "support/testing.hpp"

#include "xom/monitor.hpp"

using xom::ByteInterval;
using xom::EmbeddedDataBlock;
using xom::Outcome;
using xom::Step;
using xom::XomLists;

namespace {

XomLists two_blocks()
{
    XomLists l;
    l.regular.push_back({ByteInterval{0x1010, 0x1020}, 2, 0});
    l.optimization.push_back({ByteInterval{0x1100, 0x1140}, 15, 0});
    return l;
}

std::vector<Step> steps_of(const std::vector<xom::StateTransition> &t)
{
    std::vector<Step> out;
    for (const auto &s : t) out.push_back(s.step);
    return out;
}

XomLists lists_from(const std::vector<oracle::Span> &spans)
{
    XomLists l;
    for (const auto &s : spans) l.regular.push_back({ByteInterval{s.start, s.end}, 0, 0});
    return l;
}

} // namespace

TEST_CASE("legal read runs the seven-step flow")
{
    xom::Monitor m(two_blocks(), xom::IntervalSet{{0x1000, 0x3000}});
    CHECK(m.all_pages_execute_only());
    const auto t = m.fault_flow({0x1012, 4});
    CHECK(steps_of(t) == std::vector<Step>{Step::Fault, Step::LegalityCheck, Step::SetAllowReadFlag,
                                           Step::RestorePageReadable, Step::SingleStepExecute,
                                           Step::RevokePageExecuteOnly, Step::ClearAllowReadFlag});
    CHECK(t[1].passed);
    CHECK(t[3].pages == std::vector<xom::Address>{0x1000});
    CHECK(t[5].pages == std::vector<xom::Address>{0x1000});
    CHECK_FALSE(m.allow_read_flag());
    CHECK(m.all_pages_execute_only());
    CHECK_FALSE(m.terminated());
    CHECK(m.pages().size() == 2);
}

TEST_CASE("illegal read runs the three-step flow and terminates")
{
    xom::Monitor m(two_blocks());
    const auto t = m.fault_flow({0x101E, 4}); // crosses the block end
    CHECK(steps_of(t) == std::vector<Step>{Step::Fault, Step::LegalityCheck, Step::Terminate});
    CHECK_FALSE(t[1].passed);
    CHECK(m.terminated());
    CHECK_FALSE(m.allow_read_flag());
    CHECK(m.all_pages_execute_only());

    REQUIRE(m.forensic_record());
    const auto &f = *m.forensic_record();
    CHECK(f.request.addr == 0x101E);
    CHECK(f.request.size == 4);
    CHECK(f.timestamp == 0);
    CHECK(f.reason == xom::DenyReason::OverlapsCode);
    CHECK(f.lists.total() == 2);

    CHECK_XOM_ERROR(m.check_read({0x1010, 1}), xom::ErrorKind::MonitorTerminated);
    CHECK_XOM_ERROR(m.fault_flow({0x1010, 1}), xom::ErrorKind::MonitorTerminated);
}

TEST_CASE("deny reasons")
{
    {
        xom::Monitor m(two_blocks());
        CHECK(m.check_read({0x2000, 1}).reason == xom::DenyReason::OutsideLists);
    }
    {
        xom::Monitor m(two_blocks());
        CHECK(m.check_read({0x10FF, 2}).reason == xom::DenyReason::OverlapsCode);
    }
    {
        // Two adjacent blocks do not make a read across their boundary legal.
        XomLists l;
        l.regular.push_back({ByteInterval{0x10, 0x20}, 0, 0});
        l.regular.push_back({ByteInterval{0x20, 0x30}, 0, 0});
        xom::Monitor m(l);
        CHECK(m.check_read({0x1E, 4}).outcome == Outcome::Denied);
    }
}

TEST_CASE("invalid request sizes")
{
    xom::Monitor m(two_blocks());
    CHECK_XOM_ERROR(m.check_read({0x1010, 0}), xom::ErrorKind::InvalidRequest);
    CHECK_XOM_ERROR(m.check_read({0x1010, 65}), xom::ErrorKind::InvalidRequest);
    CHECK_XOM_ERROR(m.check_read({~xom::Address{0}, 2}), xom::ErrorKind::InvalidRequest);
    CHECK_FALSE(m.terminated());
    CHECK(m.check_read({0x1100, 64}).outcome == Outcome::Allowed);
}

TEST_CASE("promotion happens on the 101st read")
{
    XomLists l;
    l.regular.push_back({ByteInterval{0x10, 0x20}, 0, 0});
    l.regular.push_back({ByteInterval{0x40, 0x50}, 0, 0});
    l.optimization.push_back({ByteInterval{0x80, 0x90}, 11, 0});
    xom::Monitor m(l);
    const auto id = m.block_id(ByteInterval{0x40, 0x50});
    REQUIRE(id);

    for (int i = 1; i <= 100; ++i) {
        const auto v = m.check_read({0x44, 8});
        CHECK(v.outcome == Outcome::Allowed);
        CHECK(v.matched_block == id);
        CHECK_FALSE(v.promoted);
    }
    CHECK(m.lists().optimization.size() == 1);
    CHECK(m.last_lookup().optimization_scanned == 1);
    CHECK(m.last_lookup().regular_scanned == 2);

    const auto v = m.check_read({0x44, 8});
    CHECK(v.promoted);
    CHECK(m.promotions() == 1);
    const auto after = m.lists();
    REQUIRE(after.optimization.size() == 2);
    CHECK(after.optimization.back().interval == ByteInterval{0x40, 0x50});
    CHECK(after.optimization.back().read_count == 101);
    CHECK(after.regular.size() == 1);
    CHECK(m.block_id(ByteInterval{0x40, 0x50}) == id);

    // Now found in the optimization list without touching the regular list.
    CHECK_FALSE(m.check_read({0x40, 16}).promoted);
    CHECK(m.last_lookup().optimization_scanned == 2);
    CHECK(m.last_lookup().regular_scanned == 0);
    CHECK(m.promotions() == 1);
}

TEST_CASE("optimization blocks are never counted toward promotion")
{
    XomLists l;
    l.optimization.push_back({ByteInterval{0x80, 0x90}, 11, 0});
    xom::Monitor m(l);
    for (int i = 0; i < 300; ++i) CHECK_FALSE(m.check_read({0x80, 1}).promoted);
    CHECK(m.promotions() == 0);
    CHECK(m.lists().optimization[0].read_count == 300);
}

TEST_CASE("legality matches the oracle on random block sets")
{
    oracle::Rng rng(11);
    for (int round = 0; round < 150; ++round) {
        const auto spans = oracle::random_spans(rng, 0, 512, 12, 48);
        const xom::Monitor pristine(lists_from(spans));
        for (int k = 0; k < 200; ++k) {
            const auto addr = rng.between(0, 520);
            const auto size = static_cast<std::uint32_t>(rng.between(1, 64));
            auto m = pristine;
            const auto v = m.check_read({addr, size});
            const bool legal = oracle::legal_read(spans, addr, size);
            CHECK((v.outcome == Outcome::Allowed) == legal);
            if (!legal) {
                CHECK(m.terminated());
                CHECK((v.reason == xom::DenyReason::OverlapsCode) == oracle::touches_any(spans, addr, size));
            }
        }
    }
}

TEST_CASE("trace grammar")
{
    const auto t = xom::parse_trace("# header\n\nR 0x1010 4\nR 1100 8   # trailing comment\nI 250\n");
    REQUIRE(t.size() == 3);
    CHECK(t[0].kind == xom::TraceEvent::Kind::Read);
    CHECK(t[0].read.addr == 0x1010);
    CHECK(t[0].read.size == 4);
    CHECK(t[0].line == 3);
    CHECK(t[1].read.addr == 0x1100);
    CHECK(t[1].line == 4);
    CHECK(t[2].kind == xom::TraceEvent::Kind::Instructions);
    CHECK(t[2].count == 250);

    auto fails_on_line = [](const std::string &text, const std::string &line) {
        try {
            (void)xom::parse_trace(text);
        } catch (const xom::Error &e) {
            CHECK(e.kind() == xom::ErrorKind::TraceParse);
            CHECK(std::string(e.what()).find("line " + line + ":") != std::string::npos);
            return;
        }
        FAIL("no error for: " << text);
    };
    fails_on_line("R 10 4\nX 1\n", "2");
    fails_on_line("R 10\n", "1");
    fails_on_line("\n\nR 10 0\n", "3");
    fails_on_line("R 10 65\n", "1");
    fails_on_line("R zz 4\n", "1");
    fails_on_line("I\n", "1");
    fails_on_line("I 4 5\n", "1");
    fails_on_line("R 10 4 9\n", "1");
}

TEST_CASE("run_trace stops at the first denial")
{
    const auto trace = xom::parse_trace("R 1010 4\nI 100\nR 1100 8\nR 2000 1\nR 1010 1\n");
    xom::Monitor m(two_blocks());
    const auto r = xom::run_trace(m, trace);
    CHECK(r.allowed == 2);
    CHECK(r.denied == 1);
    CHECK(r.reads == 3);
    CHECK(r.instructions == 100);
    CHECK(r.events_processed == 4);
    CHECK(r.events_total == 5);
    REQUIRE(r.denied_at_line);
    CHECK(*r.denied_at_line == 4);
    REQUIRE(m.forensic_record());
    CHECK(m.forensic_record()->timestamp == 2);
}

TEST_CASE("read intensity over a trace")
{
    const auto trace = xom::parse_trace("R 1010 4\nR 1010 4\nI 1000\n");
    xom::Monitor m(two_blocks());
    const auto r = xom::run_trace(m, trace);
    REQUIRE(r.read_intensity);
    CHECK(*r.read_intensity == doctest::Approx(0.002));

    xom::Monitor m2(two_blocks());
    CHECK_FALSE(xom::run_trace(m2, xom::parse_trace("R 1010 4\n")).read_intensity);
}
