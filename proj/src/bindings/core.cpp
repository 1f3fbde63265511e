// Python bindings: bytes in, plain Python values out. Intervals are
// (start, end) tuples; ELF images are passed as `bytes`.
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <string>
#include <vector>

#include "xom/corpus.hpp"
#include "xom/error.hpp"
#include "xom/ground_truth.hpp"
#include "xom/monitor.hpp"
#include "xom/protector.hpp"
#include "xom/surface.hpp"
#include "xom/xom_section.hpp"

namespace py = pybind11;
using namespace pybind11::literals;

namespace {

using Pair = std::pair<xom::Address, xom::Address>;

std::span<const std::uint8_t> view(const py::bytes &b)
{
    const std::string_view s = b;
    return {reinterpret_cast<const std::uint8_t *>(s.data()), s.size()};
}

py::bytes to_bytes(const std::vector<std::uint8_t> &v)
{
    return {reinterpret_cast<const char *>(v.data()), v.size()};
}

std::vector<Pair> pairs(const xom::IntervalSet &s)
{
    std::vector<Pair> out;
    for (const auto &iv : s) out.emplace_back(iv.start, iv.end);
    return out;
}

xom::IntervalSet interval_set(const std::vector<Pair> &v)
{
    xom::IntervalSet s;
    for (const auto &[a, b] : v) s.insert(xom::ByteInterval{a, b});
    return s;
}

py::dict report_dict(const xom::DisassemblyReport &r)
{
    py::list entries;
    for (const auto &e : r.entry_points) entries.append(py::make_tuple(e.vaddr, std::string(xom::to_string(e.source))));
    return py::dict("code"_a = pairs(r.code), "superset"_a = pairs(r.superset), "entry_points"_a = entries,
                    "executable_bytes"_a = r.executable_total, "iterations"_a = r.stats.iterations,
                    "candidates_tried"_a = r.stats.candidates_tried,
                    "candidates_rejected"_a = r.stats.candidates_rejected);
}

py::dict metrics_dict(const xom::Metrics &m)
{
    py::dict d("oc"_a = m.overall_coverage, "readable_fraction"_a = m.readable_fraction, "edb_count"_a = m.edb_count,
               "avg_edb_size"_a = m.avg_edb_size);
    d["cc"] = m.code_coverage ? py::cast(*m.code_coverage) : py::none();
    return d;
}

xom::ProgramOptions program_options(std::uint64_t seed, bool plant_gadgets, const std::string &name)
{
    xom::ProgramOptions o;
    o.seed = seed;
    o.plant_gadgets = plant_gadgets;
    o.name = name;
    return o;
}

} // namespace

PYBIND11_MODULE(_core, m)
{
    m.doc() = "Execute-only memory toolchain: disassembly, protection, monitor model and attack-surface scans";

    // The module attribute keeps the type alive for the translator.
    static PyObject *error_type = py::exception<xom::Error>(m, "XomError", PyExc_RuntimeError).ptr();
    py::register_exception_translator([](std::exception_ptr p) {
        try {
            if (p) std::rethrow_exception(p);
        } catch (const xom::Error &e) {
            py::object exc = py::reinterpret_borrow<py::object>(error_type)(e.what());
            exc.attr("kind") = std::string(xom::to_string(e.kind()));
            PyErr_SetObject(error_type, exc.ptr());
        }
    });

    m.attr("STATIC_REF_THRESHOLD") = xom::kStaticRefThreshold;
    m.attr("DYNAMIC_READ_THRESHOLD") = xom::kDynamicReadThreshold;
    m.attr("MAX_READ_SIZE") = xom::kMaxReadSize;

    py::class_<xom::EmbeddedDataBlock>(m, "EmbeddedDataBlock")
        .def(py::init([](xom::Address start, xom::Address end, std::uint64_t refs) {
                 return xom::EmbeddedDataBlock{xom::ByteInterval{start, end}, refs, 0};
             }),
             "start"_a, "end"_a, "static_refs"_a = 0)
        .def_property_readonly("start", [](const xom::EmbeddedDataBlock &b) { return b.interval.start; })
        .def_property_readonly("end", [](const xom::EmbeddedDataBlock &b) { return b.interval.end; })
        .def_readonly("static_refs", &xom::EmbeddedDataBlock::static_ref_count)
        .def_readonly("reads", &xom::EmbeddedDataBlock::read_count)
        .def("__eq__", [](const xom::EmbeddedDataBlock &a, const xom::EmbeddedDataBlock &b) { return a == b; })
        .def("__repr__", [](const xom::EmbeddedDataBlock &b) {
            return "EmbeddedDataBlock(" + xom::to_string(b.interval) + ", refs=" + std::to_string(b.static_ref_count) + ")";
        });

    py::class_<xom::XomLists>(m, "XomLists")
        .def(py::init<>())
        .def(py::init([](std::vector<xom::EmbeddedDataBlock> regular, std::vector<xom::EmbeddedDataBlock> optimization) {
                 return xom::XomLists{std::move(regular), std::move(optimization)};
             }),
             "regular"_a, "optimization"_a = std::vector<xom::EmbeddedDataBlock>{})
        .def_readwrite("regular", &xom::XomLists::regular)
        .def_readwrite("optimization", &xom::XomLists::optimization)
        .def("__len__", &xom::XomLists::total)
        .def("__eq__", [](const xom::XomLists &a, const xom::XomLists &b) { return a == b; });

    m.def(
        "analyze",
        [](const py::bytes &elf) { return report_dict(xom::compute_superset(xom::load_elf(view(elf)))); }, "elf"_a,
        "Unidirectional disassembly: code and superset intervals, committed entry points.");

    m.def(
        "metrics",
        [](const py::bytes &elf, std::optional<std::vector<Pair>> truth_data) {
            const auto img = xom::load_elf(view(elf));
            const auto r = xom::compute_superset(img);
            if (!truth_data) return metrics_dict(xom::compute_metrics(r));
            const auto truth_code = xom::truth_code_from_data(img, interval_set(*truth_data));
            return metrics_dict(xom::compute_metrics(r, &truth_code));
        },
        "elf"_a, "truth_data"_a = py::none(), "Coverage and embedded-data-block metrics; cc needs truth data intervals.");

    m.def(
        "protect",
        [](const py::bytes &elf) {
            auto r = xom::protect(view(elf));
            return py::make_tuple(to_bytes(r.bytes), r.lists);
        },
        "elf"_a, "Returns (protected ELF bytes, lists).");

    m.def(
        "read_lists", [](const py::bytes &elf) { return xom::parse_xom_section(xom::load_elf(view(elf))); }, "elf"_a);
    m.def(
        "is_protected", [](const py::bytes &elf) { return xom::is_xom_enabled(xom::load_elf(view(elf))); }, "elf"_a);

    m.def(
        "read_intensity", &xom::read_intensity, "reads"_a, "executed"_a);

    py::class_<xom::Monitor>(m, "Monitor")
        .def(py::init([](xom::XomLists lists, std::vector<Pair> executable) {
                 return xom::Monitor(std::move(lists), interval_set(executable));
             }),
             "lists"_a, "executable"_a = std::vector<Pair>{})
        .def(
            "check_read",
            [](xom::Monitor &mon, xom::Address addr, std::uint32_t size) {
                const auto v = mon.check_read({addr, size});
                py::dict d("allowed"_a = v.outcome == xom::Outcome::Allowed, "promoted"_a = v.promoted,
                           "reason"_a = std::string(xom::to_string(v.reason)));
                d["block"] = v.matched_block ? py::cast(*v.matched_block) : py::none();
                return d;
            },
            "addr"_a, "size"_a)
        .def(
            "fault_flow",
            [](xom::Monitor &mon, xom::Address addr, std::uint32_t size) {
                std::vector<std::string> steps;
                for (const auto &t : mon.fault_flow({addr, size})) steps.emplace_back(xom::to_string(t.step));
                return steps;
            },
            "addr"_a, "size"_a)
        .def(
            "run_trace",
            [](xom::Monitor &mon, const std::string &text) {
                const auto r = xom::run_trace(mon, xom::parse_trace(text));
                py::dict d("allowed"_a = r.allowed, "denied"_a = r.denied, "promotions"_a = r.promotions,
                           "reads"_a = r.reads, "instructions"_a = r.instructions,
                           "events_processed"_a = r.events_processed, "events_total"_a = r.events_total);
                d["read_intensity"] = r.read_intensity ? py::cast(*r.read_intensity) : py::none();
                d["denied_at_line"] = r.denied_at_line ? py::cast(*r.denied_at_line) : py::none();
                return d;
            },
            "trace"_a)
        .def_property_readonly("allow_read_flag", &xom::Monitor::allow_read_flag)
        .def_property_readonly("terminated", &xom::Monitor::terminated)
        .def_property_readonly("promotions", &xom::Monitor::promotions)
        .def_property_readonly("all_pages_execute_only", &xom::Monitor::all_pages_execute_only)
        .def_property_readonly("lists", &xom::Monitor::lists)
        .def_property_readonly("last_lookup",
                               [](const xom::Monitor &mon) {
                                   return py::make_tuple(mon.last_lookup().optimization_scanned,
                                                         mon.last_lookup().regular_scanned);
                               })
        .def_property_readonly("forensic_record", [](const xom::Monitor &mon) -> py::object {
            const auto &f = mon.forensic_record();
            if (!f) return py::none();
            return py::dict("addr"_a = f->request.addr, "size"_a = f->request.size, "timestamp"_a = f->timestamp,
                            "reason"_a = std::string(xom::to_string(f->reason)));
        });

    m.def(
        "parse_trace",
        [](const std::string &text) {
            py::list out;
            for (const auto &e : xom::parse_trace(text)) {
                if (e.kind == xom::TraceEvent::Kind::Read) {
                    out.append(py::make_tuple("R", e.read.addr, e.read.size));
                } else {
                    out.append(py::make_tuple("I", e.count));
                }
            }
            return out;
        },
        "text"_a, "Events as ('R', addr, size) or ('I', count) tuples.");

    m.def(
        "gadget_scan",
        [](const py::bytes &elf, unsigned max_instructions) {
            const auto img = xom::load_elf(view(elf));
            py::list out;
            for (const auto &g : xom::gadget_scan(img, xom::compute_superset(img), max_instructions)) {
                out.append(py::dict("start"_a = g.start, "length"_a = g.length, "instructions"_a = g.instructions,
                                    "terminator"_a = std::string(xom::to_string(g.terminator)), "block"_a = g.block));
            }
            return out;
        },
        "elf"_a, "max_instructions"_a = xom::kDefaultGadgetDepth);

    m.def(
        "wrpkru_scan",
        [](const py::bytes &elf) {
            const auto img = xom::load_elf(view(elf));
            std::vector<std::pair<xom::Address, std::string>> out;
            for (const auto &h : xom::wrpkru_scan(img, xom::compute_superset(img)))
                out.emplace_back(h.vaddr, std::string(xom::to_string(h.region)));
            return out;
        },
        "elf"_a);

    m.def(
        "parse_ground_truth", [](const std::string &text) { return pairs(xom::parse_ground_truth(text)); }, "text"_a);
    m.def(
        "format_ground_truth", [](const std::vector<Pair> &data) { return xom::format_ground_truth(interval_set(data)); },
        "data"_a);

    auto program = [](const xom::GeneratedProgram &p) {
        return py::dict("name"_a = p.name, "elf"_a = to_bytes(p.elf), "truth_data"_a = pairs(p.truth_data),
                        "trace"_a = p.trace, "expected_stdout"_a = p.expected_stdout, "planted"_a = p.planted);
    };
    m.def(
        "generate_program",
        [program](std::uint64_t seed, bool plant_gadgets, const std::string &name) {
            return program(xom::generate_program(program_options(seed, plant_gadgets, name)));
        },
        "seed"_a = 1, "plant_gadgets"_a = false, "name"_a = "");
    m.def(
        "generate_hello_world", [program] { return program(xom::generate_hello_world()); });
    m.def(
        "generate_corpus",
        [program](std::uint64_t seed, unsigned count) {
            py::list out;
            for (const auto &p : xom::generate_corpus(seed, count)) out.append(program(p));
            return out;
        },
        "seed"_a, "count"_a);
}
