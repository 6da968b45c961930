#pragma once

#include <cstdint>
#include <string>

namespace initfeat {

/// Exact decimal ratio recovered from a double's shortest round-trip text,
/// so a threshold written as 0.6 compares as 6/10 rather than its binary
/// approximation.
struct DecimalRatio {
    std::uint64_t num = 0;
    std::uint64_t den = 1;

    static DecimalRatio from_double(double x);

    /// count / total >= num / den, computed in integers.
    bool met_by(std::uint64_t count, std::uint64_t total) const;

    /// floor(x * n) and ceil(x * n), exact.
    std::uint64_t floor_times(std::uint64_t n) const;
    std::uint64_t ceil_times(std::uint64_t n) const;

    double value() const { return static_cast<double>(num) / static_cast<double>(den); }
    std::string str() const;
};

}  // namespace initfeat
