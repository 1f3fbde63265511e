#include "xom/error.hpp"

namespace xom {

std::string_view to_string(ErrorKind kind) noexcept
{
    switch (kind) {
    case ErrorKind::NotElf: return "NotElf";
    case ErrorKind::Unsupported: return "Unsupported";
    case ErrorKind::Malformed: return "Malformed";
    case ErrorKind::SectionExists: return "SectionExists";
    case ErrorKind::NoXomSection: return "NoXomSection";
    case ErrorKind::CorruptXom: return "CorruptXom";
    case ErrorKind::InvariantViolation: return "InvariantViolation";
    case ErrorKind::OutOfRange: return "OutOfRange";
    case ErrorKind::EntryNotInSuperset: return "EntryNotInSuperset";
    case ErrorKind::NoExecutableCode: return "NoExecutableCode";
    case ErrorKind::EmptyGroundTruth: return "EmptyGroundTruth";
    case ErrorKind::MonitorTerminated: return "MonitorTerminated";
    case ErrorKind::InvalidRequest: return "InvalidRequest";
    case ErrorKind::TraceParse: return "TraceParse";
    case ErrorKind::GroundTruthParse: return "GroundTruthParse";
    case ErrorKind::ZeroInstructions: return "ZeroInstructions";
    case ErrorKind::Io: return "Io";
    }
    return "Unknown";
}

} // namespace xom
