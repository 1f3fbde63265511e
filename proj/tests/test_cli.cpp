#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "support/oracles.hpp"
#include "support/testing.hpp"

#include <fstream>
#include <regex>

#include <json.hpp>

#include "xom/corpus.hpp"
#include "xom/elf_image.hpp"

using nlohmann::json;

namespace {

const std::string kTool = XOMTOOL_PATH;

struct Workspace {
    std::filesystem::path dir = oracle::scratch_dir("cli");
    ~Workspace() { std::filesystem::remove_all(dir); }
    std::string path(const std::string &name) const { return (dir / name).string(); }
};

oracle::Run tool(const std::string &args, bool with_stderr = false)
{
    return oracle::run(oracle::quote(kTool) + " " + args + (with_stderr ? " 2>&1" : " 2>/dev/null"));
}

void write_text(const std::string &path, const std::string &text)
{
    std::ofstream(path, std::ios::binary) << text;
}

json without_timing(json j)
{
    j.erase("timing");
    return j;
}

} // namespace

TEST_CASE("protect, print and the error exit codes")
{
    Workspace ws;
    const auto hello = xom::generate_hello_world();
    xom::write_file(ws.path("hello"), hello.elf, true);

    auto r = tool("protect -i " + ws.path("hello") + " -o " + ws.path("hello.xom"));
    CHECK(r.exit_code == 0);
    CHECK(r.out.find("blocks") != std::string::npos);
    CHECK(r.out.find("coverage") != std::string::npos);
    CHECK(std::filesystem::exists(ws.path("hello.xom")));

    r = tool("print -i " + ws.path("hello.xom"));
    CHECK(r.exit_code == 0);
    const std::regex line(R"((optimization|regular) 0x[0-9a-f]+ 0x[0-9a-f]+ refs=\d+)");
    std::istringstream in(r.out);
    std::string l;
    unsigned lines = 0;
    while (std::getline(in, l)) {
        CHECK(std::regex_match(l, line));
        ++lines;
    }
    CHECK(lines >= 1);

    r = tool("protect -i " + ws.path("hello.xom") + " -o " + ws.path("again"), true);
    CHECK(r.exit_code == 1);
    CHECK(r.out.find("SectionExists") != std::string::npos);

    write_text(ws.path("text.txt"), "plain text, not a binary\n");
    r = tool("protect -i " + ws.path("text.txt") + " -o " + ws.path("x"), true);
    CHECK(r.exit_code == 1);
    CHECK(r.out.find("NotElf") != std::string::npos);

    r = tool("print -i " + ws.path("hello"), true);
    CHECK(r.exit_code == 1);
    CHECK(r.out.find("NoXomSection") != std::string::npos);

    CHECK(tool("print -i " + ws.path("missing")).exit_code == 1);
    CHECK(tool("").exit_code == 1);
    CHECK(tool("bogus").exit_code == 1);
    CHECK(tool("--help").exit_code == 0);
}

TEST_CASE("compare is the soundness gate")
{
    Workspace ws;
    CHECK(tool("gen-corpus --out-dir " + ws.path("c") + " --count 3 --seed 9").exit_code == 0);
    const auto manifest = json::parse(std::ifstream(ws.path("c/manifest.json")));
    CHECK(manifest["schema"] == "xomtool.report/1");
    REQUIRE(manifest["programs"].size() == 3);

    const auto prog = ws.path("c/corpus_000");
    auto r = tool("compare -i " + prog);
    CHECK(r.exit_code == 0);
    auto j = json::parse(r.out);
    CHECK(j["schema"] == "xomtool.report/1");
    CHECK(j["command"] == "compare");
    CHECK(j["soundness"]["sound"] == true);
    CHECK(j["soundness"]["data_bytes_classified_as_code"] == 0);
    CHECK(j["metrics"]["cc"].get<double>() >= 0.9);
    CHECK(j["input"]["sha256"].get<std::string>().size() == 64);

    // Claim the entry instruction is data: the gate must fail with exit 2.
    const auto entry = xom::load_elf_file(prog).entry_point();
    char line[64];
    std::snprintf(line, sizeof line, "0x%llx 0x%llx\n", static_cast<unsigned long long>(entry),
                  static_cast<unsigned long long>(entry + 1));
    write_text(ws.path("lie.truth"), line);
    r = tool("compare -i " + prog + " --ground-truth " + ws.path("lie.truth"));
    CHECK(r.exit_code == 2);
    j = json::parse(r.out);
    CHECK(j["soundness"]["sound"] == false);
    CHECK(j["soundness"]["data_bytes_classified_as_code"] == 1);

    write_text(ws.path("broken.truth"), "0x20 0x10\n");
    r = tool("compare -i " + prog + " --ground-truth " + ws.path("broken.truth"), true);
    CHECK(r.exit_code == 1);
    CHECK(r.out.find("GroundTruthParse") != std::string::npos);

    // Several inputs give an array; the worst exit code wins.
    r = tool("compare -j 2 -i " + prog + " " + ws.path("c/corpus_001") + " " + ws.path("c/corpus_002"));
    CHECK(r.exit_code == 0);
    j = json::parse(r.out);
    REQUIRE(j.is_array());
    CHECK(j.size() == 3);
    CHECK(j[1]["input"]["path"].get<std::string>().find("corpus_001") != std::string::npos);
}

TEST_CASE("analyze and scan reports")
{
    Workspace ws;
    CHECK(tool("gen-corpus --out-dir " + ws.path("c") + " --count 1 --seed 4").exit_code == 0);
    const auto prog = ws.path("c/corpus_000");

    auto a = tool("analyze -i " + prog + " --ground-truth " + prog + ".truth");
    REQUIRE(a.exit_code == 0);
    auto j = json::parse(a.out);
    for (const char *k : {"cc", "oc", "readable_fraction", "edb_count", "avg_edb_size"}) CHECK(j["metrics"].contains(k));
    CHECK(std::abs(j["metrics"]["oc"].get<double>() + j["metrics"]["readable_fraction"].get<double>() - 1.0) < 1e-12);
    CHECK(j["disassembly"]["code_bytes"].get<std::uint64_t>() + j["disassembly"]["superset_bytes"].get<std::uint64_t>() ==
          j["disassembly"]["executable_bytes"].get<std::uint64_t>());

    // Deterministic apart from timing.
    const auto b = tool("analyze -i " + prog + " --ground-truth " + prog + ".truth");
    CHECK(without_timing(json::parse(b.out)) == without_timing(j));

    // Without ground truth there is no code coverage.
    j = json::parse(tool("analyze -i " + prog).out);
    CHECK_FALSE(j["metrics"].contains("cc"));

    CHECK(tool("analyze -i " + prog + " --out " + ws.path("a.json")).exit_code == 0);
    CHECK(without_timing(json::parse(std::ifstream(ws.path("a.json")))) == without_timing(j));

    const auto s = tool("scan -i " + prog + " --max-instructions 4");
    REQUIRE(s.exit_code == 0);
    j = json::parse(s.out);
    CHECK(j["gadgets"]["max_instructions"] == 4);
    for (const auto &g : j["gadgets"]["items"]) CHECK(g["instructions"].get<unsigned>() <= 4);
    CHECK(j.contains("wrpkru"));
}

TEST_CASE("simulate")
{
    Workspace ws;
    const auto hello = xom::generate_hello_world();
    xom::write_file(ws.path("hello"), hello.elf, true);
    REQUIRE(tool("protect -i " + ws.path("hello") + " -o " + ws.path("p")).exit_code == 0);

    // The hello-world message lives in .text; read it three times.
    const auto data = *hello.truth_data.begin();
    char trace[256];
    std::snprintf(trace, sizeof trace, "R %llx 4\nI 1000\nR %llx 1\nR %llx 2\n", static_cast<unsigned long long>(data.start),
                  static_cast<unsigned long long>(data.start + 1), static_cast<unsigned long long>(data.end - 2));
    write_text(ws.path("ok.trace"), trace);
    auto r = tool("simulate -i " + ws.path("p") + " --trace " + ws.path("ok.trace"));
    REQUIRE(r.exit_code == 0);
    auto j = json::parse(r.out);
    CHECK(j["trace_summary"]["allowed"] == 3);
    CHECK(j["trace_summary"]["denied"] == 0);
    CHECK(j["trace_summary"]["terminated"] == false);
    CHECK(j["trace_summary"]["read_intensity"].get<double>() == doctest::Approx(0.003));

    std::snprintf(trace, sizeof trace, "R %llx 1\nR %llx 1\n", static_cast<unsigned long long>(data.start),
                  static_cast<unsigned long long>(xom::load_elf(hello.elf).entry_point()));
    write_text(ws.path("bad.trace"), trace);
    r = tool("simulate -i " + ws.path("p") + " --trace " + ws.path("bad.trace"));
    j = json::parse(r.out);
    CHECK(j["trace_summary"]["denied"] == 1);
    CHECK(j["trace_summary"]["denied_at_line"] == 2);
    CHECK(j["trace_summary"]["terminated"] == true);
    CHECK(j["trace_summary"].contains("forensic"));

    write_text(ws.path("syntax.trace"), "R 10 4\nW 10 4\n");
    r = tool("simulate -i " + ws.path("p") + " --trace " + ws.path("syntax.trace"), true);
    CHECK(r.exit_code == 1);
    CHECK(r.out.find("line 2") != std::string::npos);

    CHECK(tool("simulate -i " + ws.path("hello") + " --trace " + ws.path("ok.trace")).exit_code == 1);
}
