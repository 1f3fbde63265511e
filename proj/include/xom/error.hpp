#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace xom {

enum class ErrorKind {
    NotElf,
    Unsupported,
    Malformed,
    SectionExists,
    NoXomSection,
    CorruptXom,
    InvariantViolation,
    OutOfRange,
    EntryNotInSuperset,
    NoExecutableCode,
    EmptyGroundTruth,
    MonitorTerminated,
    InvalidRequest,
    TraceParse,
    GroundTruthParse,
    ZeroInstructions,
    Io,
};

std::string_view to_string(ErrorKind kind) noexcept;

/// Every failure in the toolchain is reported as an Error carrying a kind
/// that callers (and the CLI exit-code logic) can switch on.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string &message)
        : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind)
    {
    }

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

} // namespace xom
