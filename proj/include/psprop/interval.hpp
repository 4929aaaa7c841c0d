#pragma once

#include <algorithm>
#include <span>
#include <string>
#include <vector>

#include "psprop/error.hpp"

namespace psprop {

struct Interval {
  double lo = 0.0;
  double hi = 0.0;

  double length() const noexcept { return hi - lo; }
  bool contains(double v) const noexcept { return lo <= v && v <= hi; }
  bool contains(const Interval& other) const noexcept { return lo <= other.lo && other.hi <= hi; }

  friend bool operator==(const Interval&, const Interval&) = default;
};

/// Finite union of disjoint closed intervals, sorted by lower endpoint.
class IntervalUnion {
 public:
  /// Gaps narrower than this are closed when merging.
  static constexpr double kMergeGap = 1e-12;

  IntervalUnion() = default;

  static IntervalUnion of(std::span<const Interval> parts) {
    if (parts.empty()) throw Error(ErrorCode::EmptyInput, "union of zero intervals");
    std::vector<Interval> sorted;
    sorted.reserve(parts.size());
    for (const auto& iv : parts) {
      if (!(iv.lo <= iv.hi)) {
        throw Error(ErrorCode::InvalidArgument,
                    "malformed interval [" + std::to_string(iv.lo) + ", " + std::to_string(iv.hi) + "]");
      }
      sorted.push_back(iv);
    }
    std::sort(sorted.begin(), sorted.end(), [](const Interval& a, const Interval& b) {
      return a.lo < b.lo || (a.lo == b.lo && a.hi < b.hi);
    });
    IntervalUnion out;
    for (const auto& iv : sorted) {
      if (!out.parts_.empty() && iv.lo - out.parts_.back().hi < kMergeGap) {
        out.parts_.back().hi = std::max(out.parts_.back().hi, iv.hi);
      } else {
        out.parts_.push_back(iv);
      }
    }
    return out;
  }

  const std::vector<Interval>& components() const noexcept { return parts_; }
  bool empty() const noexcept { return parts_.empty(); }

  /// Lebesgue measure of the set.
  double measure() const noexcept {
    double m = 0.0;
    for (const auto& iv : parts_) m += iv.length();
    return m;
  }

  bool contains(double v) const noexcept {
    return std::any_of(parts_.begin(), parts_.end(), [v](const Interval& iv) { return iv.contains(v); });
  }

  bool contains(const Interval& iv) const noexcept {
    return std::any_of(parts_.begin(), parts_.end(), [&iv](const Interval& c) { return c.contains(iv); });
  }

  /// Smallest single interval covering the set.
  Interval hull() const {
    if (parts_.empty()) throw Error(ErrorCode::EmptyInput, "hull of an empty union");
    return {parts_.front().lo, parts_.back().hi};
  }

  friend bool operator==(const IntervalUnion&, const IntervalUnion&) = default;

 private:
  std::vector<Interval> parts_;
};

inline IntervalUnion union_intervals(std::span<const Interval> parts) { return IntervalUnion::of(parts); }

}  // namespace psprop
