#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string_view>
#include <vector>

#include "xom/interval.hpp"
#include "xom/xom_section.hpp"

namespace xom {

/// A regular-list block is promoted once its read count exceeds this.
inline constexpr std::uint64_t kDynamicReadThreshold = 100;
inline constexpr std::uint32_t kMaxReadSize = 64;
inline constexpr std::uint64_t kPageSize = 4096;

struct ReadRequest {
    Address addr = 0;
    std::uint32_t size = 1;
};

enum class Outcome : std::uint8_t { Allowed, Denied };
enum class DenyReason : std::uint8_t { None, OverlapsCode, OutsideLists };

std::string_view to_string(Outcome o) noexcept;
std::string_view to_string(DenyReason r) noexcept;

struct Verdict {
    Outcome outcome = Outcome::Denied;
    std::optional<std::uint64_t> matched_block; // stable block id
    bool promoted = false;
    DenyReason reason = DenyReason::None;
};

enum class PageState : std::uint8_t { execute_only, readable };

enum class Step : std::uint8_t {
    Fault,
    LegalityCheck,
    SetAllowReadFlag,
    RestorePageReadable,
    SingleStepExecute,
    RevokePageExecuteOnly,
    ClearAllowReadFlag,
    Terminate,
};

std::string_view to_string(Step s) noexcept;

struct StateTransition {
    Step step = Step::Fault;
    bool passed = false; // LegalityCheck result
    std::vector<Address> pages;
};

/// Entries inspected by the most recent lookup, per list.
struct LookupStats {
    std::uint64_t optimization_scanned = 0;
    std::uint64_t regular_scanned = 0;
};

struct ForensicRecord {
    ReadRequest request;
    std::uint64_t timestamp = 0; // logical: index of the faulting event
    DenyReason reason = DenyReason::None;
    XomLists lists;
};

/// Userspace model of the read-legality exception handler. Single-threaded;
/// once a read is denied the monitor is terminated and every further call
/// throws MonitorTerminated.
class Monitor {
public:
    explicit Monitor(XomLists lists, const IntervalSet &executable = {});

    Verdict check_read(const ReadRequest &r);
    /// Full fault-handling flow for one read, as the ordered list of steps.
    std::vector<StateTransition> fault_flow(const ReadRequest &r);

    bool allow_read_flag() const noexcept { return allow_read_; }
    bool terminated() const noexcept { return terminated_; }
    const std::optional<ForensicRecord> &forensic_record() const noexcept { return forensic_; }

    const std::map<Address, PageState> &pages() const noexcept { return pages_; }
    bool all_pages_execute_only() const noexcept;

    /// Current lists including runtime read counts.
    XomLists lists() const;
    std::optional<std::uint64_t> block_id(const ByteInterval &iv) const noexcept;
    const LookupStats &last_lookup() const noexcept { return last_lookup_; }
    std::uint64_t promotions() const noexcept { return promotions_; }
    std::uint64_t events() const noexcept { return events_; }

private:
    struct Slot {
        std::uint64_t id;
        EmbeddedDataBlock block;
    };

    void ensure_live() const;
    std::vector<Address> pages_of(const ReadRequest &r) const;

    std::vector<Slot> optimization_;
    std::vector<Slot> regular_;
    std::map<Address, PageState> pages_;
    bool allow_read_ = false;
    bool terminated_ = false;
    std::optional<ForensicRecord> forensic_;
    LookupStats last_lookup_;
    std::uint64_t promotions_ = 0;
    std::uint64_t events_ = 0;
};

Monitor new_monitor(XomLists lists, const IntervalSet &executable = {});

struct TraceEvent {
    enum class Kind : std::uint8_t { Read, Instructions } kind = Kind::Read;
    ReadRequest read;
    std::uint64_t count = 0;
    std::size_t line = 0;
};

/// Parses the trace grammar:
///   R <hex addr> <decimal size>   data-in-code read (size 1..64)
///   I <decimal count>             executed instructions
///   # ...                         comment (also allowed after the tokens)
/// Blank lines are ignored. Errors are TraceParse with the 1-based line number.
std::vector<TraceEvent> parse_trace(std::string_view text);

struct TraceReport {
    std::uint64_t allowed = 0;
    std::uint64_t denied = 0;
    std::uint64_t promotions = 0;
    std::uint64_t reads = 0;
    std::uint64_t instructions = 0;
    std::optional<double> read_intensity;
    std::uint64_t events_processed = 0;
    std::uint64_t events_total = 0;
    std::optional<std::size_t> denied_at_line;
    std::size_t optimization_list_size = 0;
};

/// Feeds events through fault_flow in order, stopping at the first denial.
TraceReport run_trace(Monitor &m, const std::vector<TraceEvent> &trace);

} // namespace xom
