#include "xom/monitor.hpp"

#include <cctype>
#include <charconv>
#include <string>

#include "xom/error.hpp"
#include "xom/surface.hpp"

namespace xom {

std::string_view to_string(Outcome o) noexcept
{
    return o == Outcome::Allowed ? "Allowed" : "Denied";
}

std::string_view to_string(DenyReason r) noexcept
{
    switch (r) {
    case DenyReason::None: return "None";
    case DenyReason::OverlapsCode: return "OverlapsCode";
    case DenyReason::OutsideLists: return "OutsideLists";
    }
    return "?";
}

std::string_view to_string(Step s) noexcept
{
    switch (s) {
    case Step::Fault: return "Fault";
    case Step::LegalityCheck: return "LegalityCheck";
    case Step::SetAllowReadFlag: return "SetAllowReadFlag";
    case Step::RestorePageReadable: return "RestorePageReadable";
    case Step::SingleStepExecute: return "SingleStepExecute";
    case Step::RevokePageExecuteOnly: return "RevokePageExecuteOnly";
    case Step::ClearAllowReadFlag: return "ClearAllowReadFlag";
    case Step::Terminate: return "Terminate";
    }
    return "?";
}

Monitor::Monitor(XomLists lists, const IntervalSet &executable)
{
    std::uint64_t id = 0;
    for (auto &b : lists.optimization) {
        b.read_count = 0;
        optimization_.push_back({id++, b});
    }
    for (auto &b : lists.regular) {
        b.read_count = 0;
        regular_.push_back({id++, b});
    }
    auto cover = [&](const ByteInterval &iv) {
        for (Address p = iv.start / kPageSize; p <= (iv.end - 1) / kPageSize; ++p) {
            pages_[p * kPageSize] = PageState::execute_only;
        }
    };
    for (const auto &iv : executable) cover(iv);
    for (const auto &iv : lists.covered()) cover(iv);
}

void Monitor::ensure_live() const
{
    if (terminated_) throw Error(ErrorKind::MonitorTerminated, "process was terminated by an earlier denial");
}

std::vector<Address> Monitor::pages_of(const ReadRequest &r) const
{
    std::vector<Address> out;
    for (Address p = r.addr / kPageSize; p <= (r.addr + r.size - 1) / kPageSize; ++p) out.push_back(p * kPageSize);
    return out;
}

Verdict Monitor::check_read(const ReadRequest &r)
{
    ensure_live();
    if (r.size < 1 || r.size > kMaxReadSize || r.addr + r.size < r.addr) {
        throw Error(ErrorKind::InvalidRequest, "read size must be within 1.." + std::to_string(kMaxReadSize));
    }
    ++events_;
    const ByteInterval want{r.addr, r.addr + r.size};
    last_lookup_ = {};
    Verdict v;

    for (auto &slot : optimization_) {
        ++last_lookup_.optimization_scanned;
        if (slot.block.interval.contains(want)) {
            ++slot.block.read_count;
            v.outcome = Outcome::Allowed;
            v.matched_block = slot.id;
            return v;
        }
    }
    for (auto it = regular_.begin(); it != regular_.end(); ++it) {
        ++last_lookup_.regular_scanned;
        if (!it->block.interval.contains(want)) continue;
        ++it->block.read_count;
        v.outcome = Outcome::Allowed;
        v.matched_block = it->id;
        if (it->block.read_count > kDynamicReadThreshold) {
            optimization_.push_back(*it);
            regular_.erase(it);
            v.promoted = true;
            ++promotions_;
        }
        return v;
    }

    bool touches_block = false;
    for (const auto *list : {&optimization_, &regular_}) {
        for (const auto &slot : *list) touches_block |= slot.block.interval.overlaps(want);
    }
    v.outcome = Outcome::Denied;
    v.reason = touches_block ? DenyReason::OverlapsCode : DenyReason::OutsideLists;
    terminated_ = true;
    forensic_ = ForensicRecord{r, events_ - 1, v.reason, lists()};
    return v;
}

std::vector<StateTransition> Monitor::fault_flow(const ReadRequest &r)
{
    ensure_live();
    const auto pages = pages_of(r);
    std::vector<StateTransition> steps;
    steps.push_back({Step::Fault, false, pages});
    const Verdict v = check_read(r);
    steps.push_back({Step::LegalityCheck, v.outcome == Outcome::Allowed, {}});
    if (v.outcome == Outcome::Denied) {
        steps.push_back({Step::Terminate, false, {}});
        return steps;
    }
    allow_read_ = true;
    steps.push_back({Step::SetAllowReadFlag, true, {}});
    for (Address p : pages) pages_[p] = PageState::readable;
    steps.push_back({Step::RestorePageReadable, true, pages});
    steps.push_back({Step::SingleStepExecute, true, {}});
    for (Address p : pages) pages_[p] = PageState::execute_only;
    steps.push_back({Step::RevokePageExecuteOnly, true, pages});
    allow_read_ = false;
    steps.push_back({Step::ClearAllowReadFlag, true, {}});
    return steps;
}

bool Monitor::all_pages_execute_only() const noexcept
{
    for (const auto &[page, st] : pages_) {
        if (st != PageState::execute_only) return false;
    }
    return true;
}

XomLists Monitor::lists() const
{
    XomLists out;
    for (const auto &s : optimization_) out.optimization.push_back(s.block);
    for (const auto &s : regular_) out.regular.push_back(s.block);
    return out;
}

std::optional<std::uint64_t> Monitor::block_id(const ByteInterval &iv) const noexcept
{
    for (const auto *list : {&optimization_, &regular_}) {
        for (const auto &s : *list) {
            if (s.block.interval == iv) return s.id;
        }
    }
    return std::nullopt;
}

Monitor new_monitor(XomLists lists, const IntervalSet &executable)
{
    return Monitor(std::move(lists), executable);
}

namespace {

[[noreturn]] void trace_error(std::size_t line, const std::string &what)
{
    throw Error(ErrorKind::TraceParse, "line " + std::to_string(line) + ": " + what);
}

std::uint64_t parse_number(std::string_view tok, int base, std::size_t line)
{
    if (base == 16 && (tok.starts_with("0x") || tok.starts_with("0X"))) tok.remove_prefix(2);
    std::uint64_t v = 0;
    auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v, base);
    if (tok.empty() || ec != std::errc{} || ptr != tok.data() + tok.size()) {
        trace_error(line, "bad number '" + std::string(tok) + "'");
    }
    return v;
}

} // namespace

std::vector<TraceEvent> parse_trace(std::string_view text)
{
    std::vector<TraceEvent> out;
    std::size_t line_no = 0;
    while (!text.empty()) {
        ++line_no;
        auto nl = text.find('\n');
        std::string_view line = text.substr(0, nl);
        text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
        if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);

        std::vector<std::string_view> toks;
        std::size_t i = 0;
        while (i < line.size()) {
            while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
            std::size_t j = i;
            while (j < line.size() && !std::isspace(static_cast<unsigned char>(line[j]))) ++j;
            if (j > i) toks.push_back(line.substr(i, j - i));
            i = j;
        }
        if (toks.empty()) continue;

        TraceEvent ev;
        ev.line = line_no;
        if (toks[0] == "R") {
            if (toks.size() != 3) trace_error(line_no, "expected 'R <hex addr> <size>'");
            ev.kind = TraceEvent::Kind::Read;
            ev.read.addr = parse_number(toks[1], 16, line_no);
            const auto size = parse_number(toks[2], 10, line_no);
            if (size < 1 || size > kMaxReadSize) trace_error(line_no, "read size out of range 1..64");
            ev.read.size = static_cast<std::uint32_t>(size);
        } else if (toks[0] == "I") {
            if (toks.size() != 2) trace_error(line_no, "expected 'I <count>'");
            ev.kind = TraceEvent::Kind::Instructions;
            ev.count = parse_number(toks[1], 10, line_no);
        } else {
            trace_error(line_no, "unknown event '" + std::string(toks[0]) + "'");
        }
        out.push_back(ev);
    }
    return out;
}

TraceReport run_trace(Monitor &m, const std::vector<TraceEvent> &trace)
{
    TraceReport rep;
    rep.events_total = trace.size();
    const std::uint64_t promotions_before = m.promotions();
    for (const auto &ev : trace) {
        ++rep.events_processed;
        if (ev.kind == TraceEvent::Kind::Instructions) {
            rep.instructions += ev.count;
            continue;
        }
        ++rep.reads;
        const auto steps = m.fault_flow(ev.read);
        if (steps[1].passed) {
            ++rep.allowed;
        } else {
            ++rep.denied;
            rep.denied_at_line = ev.line;
            break;
        }
    }
    rep.promotions = m.promotions() - promotions_before;
    rep.optimization_list_size = m.lists().optimization.size();
    if (rep.instructions > 0) rep.read_intensity = read_intensity(rep.reads, rep.instructions);
    return rep;
}

} // namespace xom
