#pragma once

#include <cstdint>
#include <initializer_list>
#include <optional>
#include <string>
#include <vector>

namespace xom {

using Address = std::uint64_t;

/// Half-open range of virtual addresses [start, end). Always non-empty.
struct ByteInterval {
    Address start = 0;
    Address end = 0;

    ByteInterval() = default;
    ByteInterval(Address s, Address e);

    std::uint64_t length() const noexcept { return end - start; }
    bool contains(Address a) const noexcept { return a >= start && a < end; }
    bool contains(const ByteInterval &o) const noexcept { return o.start >= start && o.end <= end; }
    bool overlaps(const ByteInterval &o) const noexcept { return o.start < end && start < o.end; }

    friend bool operator==(const ByteInterval &, const ByteInterval &) = default;
    friend auto operator<=>(const ByteInterval &, const ByteInterval &) = default;
};

std::string to_string(const ByteInterval &iv);

/// Normalized set of addresses stored as sorted, disjoint, non-adjacent intervals.
class IntervalSet {
public:
    IntervalSet() = default;
    IntervalSet(std::initializer_list<ByteInterval> ivs);
    explicit IntervalSet(std::vector<ByteInterval> ivs);

    void insert(const ByteInterval &iv);
    void insert(const IntervalSet &other);
    void erase(const ByteInterval &iv);
    void erase(const IntervalSet &other);

    IntervalSet united(const IntervalSet &other) const;
    IntervalSet intersected(const IntervalSet &other) const;
    IntervalSet subtracted(const IntervalSet &other) const;

    bool contains(Address a) const noexcept;
    /// True iff every byte of `iv` is in the set (necessarily within one interval).
    bool contains(const ByteInterval &iv) const noexcept;
    bool overlaps(const ByteInterval &iv) const noexcept;
    /// The maximal interval holding `a`, if any.
    std::optional<ByteInterval> find(Address a) const noexcept;

    std::uint64_t total_bytes() const noexcept;
    std::size_t size() const noexcept { return ivs_.size(); }
    bool empty() const noexcept { return ivs_.empty(); }

    const std::vector<ByteInterval> &intervals() const noexcept { return ivs_; }
    auto begin() const noexcept { return ivs_.begin(); }
    auto end() const noexcept { return ivs_.end(); }

    /// Checks the representation invariant (sorted, disjoint, merged).
    bool is_normalized() const noexcept;

    friend bool operator==(const IntervalSet &, const IntervalSet &) = default;

private:
    std::vector<ByteInterval> ivs_;
};

} // namespace xom
