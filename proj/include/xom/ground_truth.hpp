#pragma once

#include <string>
#include <string_view>

#include "xom/interval.hpp"

namespace xom {

/// Ground-truth files list the true embedded-data bytes of a binary, one
/// half-open interval per line as `0xSTART 0xEND`, ascending and disjoint.
/// `#` starts a comment; blank lines are ignored. Errors are GroundTruthParse.
IntervalSet parse_ground_truth(std::string_view text);
std::string format_ground_truth(const IntervalSet &data);

} // namespace xom
