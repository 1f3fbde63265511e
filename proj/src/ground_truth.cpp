#include "xom/ground_truth.hpp"

#include <charconv>
#include <sstream>

#include "xom/error.hpp"

namespace xom {

namespace {

[[noreturn]] void fail(std::size_t line, const std::string &what)
{
    throw Error(ErrorKind::GroundTruthParse, "line " + std::to_string(line) + ": " + what);
}

Address parse_hex(std::string_view tok, std::size_t line)
{
    if (!(tok.starts_with("0x") || tok.starts_with("0X"))) fail(line, "expected 0x-prefixed address");
    tok.remove_prefix(2);
    Address v = 0;
    auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v, 16);
    if (tok.empty() || ec != std::errc{} || ptr != tok.data() + tok.size()) fail(line, "bad address");
    return v;
}

} // namespace

IntervalSet parse_ground_truth(std::string_view text)
{
    IntervalSet out;
    std::istringstream in{std::string(text)};
    std::string line;
    std::size_t line_no = 0;
    Address last_end = 0;
    bool first = true;
    while (std::getline(in, line)) {
        ++line_no;
        if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
        std::istringstream fields(line);
        std::string a, b, extra;
        if (!(fields >> a)) continue;
        if (!(fields >> b) || (fields >> extra)) fail(line_no, "expected '0xSTART 0xEND'");
        const Address start = parse_hex(a, line_no);
        const Address end = parse_hex(b, line_no);
        if (start >= end) fail(line_no, "empty or inverted interval");
        if (!first && start < last_end) fail(line_no, "intervals must be ascending and disjoint");
        out.insert(ByteInterval{start, end});
        last_end = end;
        first = false;
    }
    return out;
}

std::string format_ground_truth(const IntervalSet &data)
{
    std::ostringstream out;
    out << std::hex;
    for (const auto &iv : data) out << "0x" << iv.start << " 0x" << iv.end << '\n';
    return out.str();
}

} // namespace xom
