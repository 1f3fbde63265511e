#include "xom/interval.hpp"

#include <algorithm>
#include <cstdio>

#include "xom/error.hpp"

namespace xom {

ByteInterval::ByteInterval(Address s, Address e) : start(s), end(e)
{
    if (s >= e) {
        throw Error(ErrorKind::InvariantViolation, "empty or inverted interval " + std::to_string(s) + ".." +
                                                       std::to_string(e));
    }
}

std::string to_string(const ByteInterval &iv)
{
    char buf[64];
    std::snprintf(buf, sizeof buf, "[0x%llx, 0x%llx)", static_cast<unsigned long long>(iv.start),
                  static_cast<unsigned long long>(iv.end));
    return buf;
}

IntervalSet::IntervalSet(std::initializer_list<ByteInterval> ivs) : IntervalSet(std::vector<ByteInterval>(ivs)) {}

IntervalSet::IntervalSet(std::vector<ByteInterval> ivs)
{
    std::sort(ivs.begin(), ivs.end());
    for (const auto &iv : ivs) {
        if (!ivs_.empty() && iv.start <= ivs_.back().end) {
            ivs_.back().end = std::max(ivs_.back().end, iv.end);
        } else {
            ivs_.push_back(iv);
        }
    }
}

void IntervalSet::insert(const ByteInterval &iv)
{
    // First interval whose end reaches iv.start (touching counts, so they merge).
    auto lo = std::lower_bound(ivs_.begin(), ivs_.end(), iv.start,
                               [](const ByteInterval &x, Address a) { return x.end < a; });
    auto hi = lo;
    ByteInterval merged = iv;
    while (hi != ivs_.end() && hi->start <= iv.end) {
        merged.start = std::min(merged.start, hi->start);
        merged.end = std::max(merged.end, hi->end);
        ++hi;
    }
    lo = ivs_.erase(lo, hi);
    ivs_.insert(lo, merged);
}

void IntervalSet::insert(const IntervalSet &other)
{
    *this = united(other);
}

void IntervalSet::erase(const ByteInterval &iv)
{
    auto lo = std::lower_bound(ivs_.begin(), ivs_.end(), iv.start,
                               [](const ByteInterval &x, Address a) { return x.end <= a; });
    std::vector<ByteInterval> keep;
    auto hi = lo;
    while (hi != ivs_.end() && hi->start < iv.end) {
        if (hi->start < iv.start) keep.push_back({hi->start, iv.start});
        if (hi->end > iv.end) keep.push_back({iv.end, hi->end});
        ++hi;
    }
    lo = ivs_.erase(lo, hi);
    ivs_.insert(lo, keep.begin(), keep.end());
}

void IntervalSet::erase(const IntervalSet &other)
{
    *this = subtracted(other);
}

IntervalSet IntervalSet::united(const IntervalSet &other) const
{
    std::vector<ByteInterval> all;
    all.reserve(ivs_.size() + other.ivs_.size());
    std::merge(ivs_.begin(), ivs_.end(), other.ivs_.begin(), other.ivs_.end(), std::back_inserter(all));
    return IntervalSet(std::move(all));
}

IntervalSet IntervalSet::intersected(const IntervalSet &other) const
{
    IntervalSet out;
    auto a = ivs_.begin();
    auto b = other.ivs_.begin();
    while (a != ivs_.end() && b != other.ivs_.end()) {
        Address s = std::max(a->start, b->start);
        Address e = std::min(a->end, b->end);
        if (s < e) out.ivs_.push_back({s, e});
        if (a->end < b->end) {
            ++a;
        } else {
            ++b;
        }
    }
    return out;
}

IntervalSet IntervalSet::subtracted(const IntervalSet &other) const
{
    IntervalSet out;
    auto b = other.ivs_.begin();
    for (const auto &iv : ivs_) {
        Address cur = iv.start;
        while (b != other.ivs_.end() && b->end <= cur) ++b;
        auto c = b;
        while (c != other.ivs_.end() && c->start < iv.end) {
            if (c->start > cur) out.ivs_.push_back({cur, c->start});
            cur = std::max(cur, c->end);
            if (c->end > iv.end) break;
            ++c;
        }
        if (cur < iv.end) out.ivs_.push_back({cur, iv.end});
    }
    return out;
}

bool IntervalSet::contains(Address a) const noexcept
{
    return find(a).has_value();
}

bool IntervalSet::contains(const ByteInterval &iv) const noexcept
{
    auto hit = find(iv.start);
    return hit && hit->end >= iv.end;
}

bool IntervalSet::overlaps(const ByteInterval &iv) const noexcept
{
    auto it = std::upper_bound(ivs_.begin(), ivs_.end(), iv.start,
                               [](Address a, const ByteInterval &x) { return a < x.end; });
    return it != ivs_.end() && it->start < iv.end;
}

std::optional<ByteInterval> IntervalSet::find(Address a) const noexcept
{
    auto it = std::upper_bound(ivs_.begin(), ivs_.end(), a,
                               [](Address v, const ByteInterval &x) { return v < x.end; });
    if (it != ivs_.end() && it->start <= a) return *it;
    return std::nullopt;
}

std::uint64_t IntervalSet::total_bytes() const noexcept
{
    std::uint64_t n = 0;
    for (const auto &iv : ivs_) n += iv.length();
    return n;
}

bool IntervalSet::is_normalized() const noexcept
{
    for (std::size_t i = 0; i < ivs_.size(); ++i) {
        if (ivs_[i].start >= ivs_[i].end) return false;
        if (i > 0 && ivs_[i - 1].end >= ivs_[i].start) return false;
    }
    return true;
}

} // namespace xom
