// xomtool: retrofit execute-only metadata into x86-64 ELF binaries and
// analyze / simulate the result.

#include <openssl/evp.h>

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <thread>

#include "xom/corpus.hpp"
#include "xom/error.hpp"
#include "xom/ground_truth.hpp"
#include "xom/monitor.hpp"
#include "xom/protector.hpp"
#include "xom/surface.hpp"

using json = nlohmann::ordered_json;

namespace {

constexpr const char *kToolVersion = "0.3.0";
constexpr const char *kSchema = "xomtool.report/1";

constexpr int kExitOk = 0;
constexpr int kExitError = 1;
constexpr int kExitUnsound = 2;

std::string sha256_hex(std::span<const std::uint8_t> bytes)
{
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr);
    std::string out;
    char hex[3];
    for (unsigned i = 0; i < len; ++i) {
        std::snprintf(hex, sizeof hex, "%02x", md[i]);
        out += hex;
    }
    return out;
}

std::string hex(xom::Address a)
{
    char buf[24];
    std::snprintf(buf, sizeof buf, "0x%llx", static_cast<unsigned long long>(a));
    return buf;
}

json file_ref(const std::string &path, std::span<const std::uint8_t> bytes)
{
    return {{"path", path}, {"size", bytes.size()}, {"sha256", sha256_hex(bytes)}};
}

json report_header(const std::string &command)
{
    return {{"schema", kSchema}, {"tool_version", kToolVersion}, {"command", command}};
}

json lists_summary(const xom::XomLists &lists)
{
    return {{"optimization", lists.optimization.size()},
            {"regular", lists.regular.size()},
            {"blocks", lists.total()},
            {"bytes", lists.covered().total_bytes()}};
}

json disassembly_summary(const xom::DisassemblyReport &r)
{
    std::map<std::string, std::uint64_t> by_source;
    for (const auto &e : r.entry_points) ++by_source[std::string(xom::to_string(e.source))];
    return {{"executable_bytes", r.executable_total},
            {"code_bytes", r.code.total_bytes()},
            {"superset_bytes", r.superset.total_bytes()},
            {"iterations", r.stats.iterations},
            {"candidates_tried", r.stats.candidates_tried},
            {"candidates_rejected", r.stats.candidates_rejected},
            {"entry_points", by_source}};
}

json metrics_json(const xom::Metrics &m)
{
    json j;
    if (m.code_coverage) j["cc"] = *m.code_coverage;
    j["oc"] = m.overall_coverage;
    j["readable_fraction"] = m.readable_fraction;
    j["edb_count"] = m.edb_count;
    j["avg_edb_size"] = m.avg_edb_size;
    return j;
}

struct Outcome {
    json report;
    int exit_code = kExitOk;
};

using Clock = std::chrono::steady_clock;

void stamp(json &report, Clock::time_point t0)
{
    report["timing"] = {{"seconds", std::chrono::duration<double>(Clock::now() - t0).count()}};
}

// ---- commands ------------------------------------------------------------------

Outcome run_analyze(const std::string &input, const std::optional<std::string> &truth_path)
{
    const auto t0 = Clock::now();
    const auto bytes = xom::read_file(input);
    const auto image = xom::load_elf(bytes);
    const auto report = xom::compute_superset(image);
    const auto lists = xom::build_lists(report, xom::count_static_refs(image, report));

    json j = report_header("analyze");
    j["input"] = file_ref(input, bytes);
    std::optional<xom::IntervalSet> truth_code;
    if (truth_path) {
        const auto truth_bytes = xom::read_file(*truth_path);
        j["ground_truth"] = file_ref(*truth_path, truth_bytes);
        const auto data = xom::parse_ground_truth({reinterpret_cast<const char *>(truth_bytes.data()), truth_bytes.size()});
        truth_code = xom::truth_code_from_data(image, data);
    }
    j["metrics"] = metrics_json(xom::compute_metrics(report, truth_code ? &*truth_code : nullptr));
    j["lists"] = lists_summary(lists);
    j["disassembly"] = disassembly_summary(report);
    stamp(j, t0);
    return {j};
}

Outcome run_compare(const std::string &input, const std::string &truth_path)
{
    const auto t0 = Clock::now();
    const auto bytes = xom::read_file(input);
    const auto truth_bytes = xom::read_file(truth_path);
    const auto image = xom::load_elf(bytes);
    const auto report = xom::compute_superset(image);
    const auto data = xom::parse_ground_truth({reinterpret_cast<const char *>(truth_bytes.data()), truth_bytes.size()});
    const auto misread = report.code.intersected(data);
    const auto truth_code = xom::truth_code_from_data(image, data);

    json j = report_header("compare");
    j["input"] = file_ref(input, bytes);
    j["ground_truth"] = file_ref(truth_path, truth_bytes);
    j["metrics"] = metrics_json(xom::compute_metrics(report, &truth_code));
    json leaks = json::array();
    for (const auto &iv : misread) leaks.push_back({hex(iv.start), hex(iv.end)});
    j["soundness"] = {{"sound", misread.empty()},
                      {"data_bytes", data.total_bytes()},
                      {"data_bytes_classified_as_code", misread.total_bytes()},
                      {"misclassified", leaks}};
    stamp(j, t0);
    return {j, misread.empty() ? kExitOk : kExitUnsound};
}

Outcome run_scan(const std::string &input, unsigned depth)
{
    const auto t0 = Clock::now();
    const auto bytes = xom::read_file(input);
    const auto image = xom::load_elf(bytes);
    const auto report = xom::compute_superset(image);
    const auto gadgets = xom::gadget_scan(image, report, depth);
    const auto hits = xom::wrpkru_scan(image, report);

    json j = report_header("scan");
    j["input"] = file_ref(input, bytes);
    j["metrics"] = metrics_json(xom::compute_metrics(report));
    json g = json::array();
    std::map<std::string, std::uint64_t> by_end;
    for (const auto &x : gadgets) {
        ++by_end[std::string(xom::to_string(x.terminator))];
        g.push_back({{"start", hex(x.start)},
                     {"length", x.length},
                     {"instructions", x.instructions},
                     {"terminator", xom::to_string(x.terminator)},
                     {"block", x.block}});
    }
    json w = json::array();
    for (const auto &h : hits) w.push_back({{"vaddr", hex(h.vaddr)}, {"region", xom::to_string(h.region)}});
    j["gadgets"] = {{"max_instructions", depth}, {"count", gadgets.size()}, {"by_terminator", by_end}, {"items", g}};
    j["wrpkru"] = {{"count", hits.size()}, {"items", w}};
    stamp(j, t0);
    return {j};
}

Outcome run_simulate(const std::string &input, const std::string &trace_path)
{
    const auto t0 = Clock::now();
    const auto bytes = xom::read_file(input);
    const auto image = xom::load_elf(bytes);
    if (!xom::is_xom_enabled(image)) {
        throw xom::Error(xom::ErrorKind::NoXomSection, "input is not flagged for execute-only protection");
    }
    const auto lists = xom::parse_xom_section(image);
    const auto trace_bytes = xom::read_file(trace_path);
    const auto events = xom::parse_trace({reinterpret_cast<const char *>(trace_bytes.data()), trace_bytes.size()});
    auto monitor = xom::new_monitor(lists, xom::executable_ranges(image));
    const auto rep = xom::run_trace(monitor, events);

    json j = report_header("simulate");
    j["input"] = file_ref(input, bytes);
    j["trace"] = file_ref(trace_path, trace_bytes);
    j["lists"] = lists_summary(lists);
    json t = {{"events", rep.events_total},
              {"events_processed", rep.events_processed},
              {"reads", rep.reads},
              {"instructions", rep.instructions},
              {"allowed", rep.allowed},
              {"denied", rep.denied},
              {"promotions", rep.promotions},
              {"optimization_list_size", rep.optimization_list_size},
              {"terminated", monitor.terminated()}};
    t["read_intensity"] = rep.read_intensity ? json(*rep.read_intensity) : json(nullptr);
    if (rep.denied_at_line) t["denied_at_line"] = *rep.denied_at_line;
    if (const auto &f = monitor.forensic_record()) {
        t["forensic"] = {{"addr", hex(f->request.addr)},
                         {"size", f->request.size},
                         {"event", f->timestamp},
                         {"reason", xom::to_string(f->reason)}};
    }
    j["trace_summary"] = t;
    stamp(j, t0);
    return {j};
}

// Runs `fn` over inputs on up to `jobs` threads; results keep input order.
std::vector<Outcome> fan_out(const std::vector<std::string> &inputs, unsigned jobs,
                             const std::function<Outcome(const std::string &)> &fn)
{
    std::vector<Outcome> out(inputs.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i; (i = next++) < inputs.size();) {
            try {
                out[i] = fn(inputs[i]);
            } catch (const std::exception &e) {
                json j = report_header("error");
                j["input"] = {{"path", inputs[i]}};
                j["error"] = e.what();
                out[i] = {j, kExitError};
            }
        }
    };
    jobs = std::clamp<unsigned>(jobs, 1, static_cast<unsigned>(std::max<std::size_t>(inputs.size(), 1)));
    std::vector<std::thread> pool;
    for (unsigned k = 1; k < jobs; ++k) pool.emplace_back(worker);
    worker();
    for (auto &t : pool) t.join();
    return out;
}

void emit_json(const json &j, const std::string &out_path)
{
    const std::string text = j.dump(2) + "\n";
    if (out_path.empty()) {
        std::cout << text;
    } else {
        std::ofstream f(out_path, std::ios::binary);
        if (!f) throw xom::Error(xom::ErrorKind::Io, "cannot write " + out_path);
        f << text;
    }
}

int finish(const std::vector<Outcome> &results, const std::string &out_path)
{
    int code = kExitOk;
    for (const auto &r : results) {
        code = std::max(code, r.exit_code);
        if (r.report.contains("error")) {
            std::cerr << "xomtool: " << r.report["input"]["path"].get<std::string>() << ": "
                      << r.report["error"].get<std::string>() << "\n";
        }
    }
    if (results.size() == 1) {
        if (!results[0].report.contains("error")) emit_json(results[0].report, out_path);
    } else {
        json arr = json::array();
        for (const auto &r : results) arr.push_back(r.report);
        emit_json(arr, out_path);
    }
    return code;
}

int cmd_protect(const std::string &input, const std::string &output)
{
    const auto bytes = xom::read_file(input);
    const auto r = xom::protect(bytes);
    xom::write_file(output, r.bytes, true);
    std::printf("%s: %zu blocks (%zu optimization, %zu regular), %llu readable bytes, overall coverage %.4f -> %s\n",
                input.c_str(), r.lists.total(), r.lists.optimization.size(), r.lists.regular.size(),
                static_cast<unsigned long long>(r.lists.covered().total_bytes()), xom::overall_coverage(r.report),
                output.c_str());
    return kExitOk;
}

int cmd_print(const std::string &input)
{
    const auto image = xom::load_elf_file(input);
    const auto lists = xom::parse_xom_section(image);
    for (const auto &[name, list] : {std::pair{"optimization", &lists.optimization}, std::pair{"regular", &lists.regular}}) {
        for (const auto &b : *list) {
            std::printf("%s %s %s refs=%llu\n", name, hex(b.interval.start).c_str(), hex(b.interval.end).c_str(),
                        static_cast<unsigned long long>(b.static_ref_count));
        }
    }
    return kExitOk;
}

int cmd_gen_corpus(const std::string &dir, unsigned count, std::uint64_t seed, bool hello)
{
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    auto programs = xom::generate_corpus(seed, count);
    if (hello) programs.push_back(xom::generate_hello_world());
    json manifest = report_header("gen-corpus");
    manifest["seed"] = seed;
    json items = json::array();
    for (const auto &p : programs) {
        const auto base = (fs::path(dir) / p.name).string();
        xom::write_file(base, p.elf, true);
        const auto truth = xom::format_ground_truth(p.truth_data);
        xom::write_file(base + ".truth", std::span(reinterpret_cast<const std::uint8_t *>(truth.data()), truth.size()));
        xom::write_file(base + ".trace", std::span(reinterpret_cast<const std::uint8_t *>(p.trace.data()), p.trace.size()));
        items.push_back({{"name", p.name},
                         {"sha256", sha256_hex(p.elf)},
                         {"data_blocks", p.truth_data.size()},
                         {"data_bytes", p.truth_data.total_bytes()},
                         {"constants", p.data.constants},
                         {"arrays", p.data.arrays},
                         {"strings", p.data.strings},
                         {"jump_tables", p.data.jump_tables},
                         {"planted_gadgets", p.planted.size()},
                         {"expected_stdout", p.expected_stdout}});
    }
    manifest["programs"] = items;
    emit_json(manifest, (fs::path(dir) / "manifest.json").string());
    std::printf("wrote %zu programs to %s\n", programs.size(), dir.c_str());
    return kExitOk;
}

} // namespace

int main(int argc, char **argv)
{
    CLI::App app{"Execute-only memory retrofitting for x86-64 ELF binaries"};
    app.set_version_flag("--version", kToolVersion);
    app.require_subcommand(1);

    std::string input, output, out_path, truth, trace, out_dir = "corpus";
    std::vector<std::string> inputs;
    unsigned jobs = 1, depth = xom::kDefaultGadgetDepth, count = 50;
    std::uint64_t seed = 1;
    bool hello = false;

    auto *protect = app.add_subcommand("protect", "Write a protected copy of a binary");
    protect->add_option("-i,--input", input, "Input ELF")->required()->check(CLI::ExistingFile);
    protect->add_option("-o,--output", output, "Output path")->required();

    auto *print = app.add_subcommand("print", "Print the embedded-data lists of a protected binary");
    print->add_option("-i,--input", input, "Protected ELF")->required()->check(CLI::ExistingFile);

    auto *analyze = app.add_subcommand("analyze", "Disassembly metrics as JSON");
    analyze->add_option("-i,--input", inputs, "Input ELF(s)")->required()->check(CLI::ExistingFile);
    analyze->add_option("--ground-truth", truth, "Ground-truth data intervals")->check(CLI::ExistingFile);

    auto *simulate = app.add_subcommand("simulate", "Replay a read trace against the read-legality monitor");
    simulate->add_option("-i,--input", input, "Protected ELF")->required()->check(CLI::ExistingFile);
    simulate->add_option("--trace", trace, "Trace file")->required()->check(CLI::ExistingFile);

    auto *scan = app.add_subcommand("scan", "Gadgets in readable bytes and WRPKRU byte sequences");
    scan->add_option("-i,--input", inputs, "Input ELF(s)")->required()->check(CLI::ExistingFile);
    scan->add_option("--max-instructions", depth, "Gadget depth")->check(CLI::Range(1u, 64u));

    auto *compare = app.add_subcommand("compare", "Check that no ground-truth data byte is classified as code");
    compare->add_option("-i,--input", inputs, "Input ELF(s)")->required()->check(CLI::ExistingFile);
    compare->add_option("--ground-truth", truth, "Ground truth (default: <input>.truth)");

    auto *gen = app.add_subcommand("gen-corpus", "Generate synthetic binaries with ground truth and traces");
    gen->add_option("--out-dir", out_dir, "Output directory");
    gen->add_option("--count", count, "Number of programs")->check(CLI::Range(1u, 10000u));
    gen->add_option("--seed", seed, "Generator seed");
    gen->add_flag("--hello", hello, "Also write the hello-world program");

    for (auto *sub : {analyze, simulate, scan, compare}) {
        sub->add_option("--out", out_path, "Write JSON here instead of stdout");
    }
    for (auto *sub : {analyze, scan, compare}) {
        sub->add_option("-j,--jobs", jobs, "Parallel inputs")->check(CLI::Range(1u, 256u));
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError &e) {
        // Usage errors are input errors; --help and --version still exit 0.
        const int rc = app.exit(e);
        return rc == 0 ? kExitOk : kExitError;
    }

    try {
        if (*protect) return cmd_protect(input, output);
        if (*print) return cmd_print(input);
        if (*gen) return cmd_gen_corpus(out_dir, count, seed, hello);
        if (*simulate) return finish({run_simulate(input, trace)}, out_path);
        if (*analyze) {
            std::optional<std::string> gt;
            if (!truth.empty()) gt = truth;
            if (gt && inputs.size() > 1) throw xom::Error(xom::ErrorKind::InvalidRequest, "--ground-truth takes a single input");
            return finish(fan_out(inputs, jobs, [&](const std::string &in) { return run_analyze(in, gt); }), out_path);
        }
        if (*scan) return finish(fan_out(inputs, jobs, [&](const std::string &in) { return run_scan(in, depth); }), out_path);
        if (*compare) {
            if (!truth.empty() && inputs.size() > 1) {
                throw xom::Error(xom::ErrorKind::InvalidRequest, "--ground-truth takes a single input");
            }
            return finish(fan_out(inputs, jobs,
                                  [&](const std::string &in) { return run_compare(in, truth.empty() ? in + ".truth" : truth); }),
                          out_path);
        }
    } catch (const std::exception &e) {
        std::cerr << "xomtool: " << e.what() << "\n";
        return kExitError;
    }
    return kExitError;
}
