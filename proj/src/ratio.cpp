#include "initfeat/ratio.hpp"

#include "initfeat/common.hpp"

#include <charconv>
#include <cmath>
#include <string_view>

namespace initfeat {

namespace {

using u128 = unsigned __int128;

std::uint64_t pow10(int e) {
    std::uint64_t p = 1;
    for (int i = 0; i < e; ++i) p *= 10;
    return p;
}

}  // namespace

DecimalRatio DecimalRatio::from_double(double x) {
    if (!std::isfinite(x) || x < 0.0)
        throw UsageError("threshold must be finite and non-negative, got " + std::to_string(x));

    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), x, std::chars_format::fixed);
    std::string_view text(buf, static_cast<std::size_t>(res.ptr - buf));

    std::uint64_t num = 0;
    int frac_digits = 0;
    bool after_point = false;
    for (char c : text) {
        if (c == '.') {
            after_point = true;
            continue;
        }
        if (num > (UINT64_MAX - 9) / 10 || frac_digits >= 18)
            throw UsageError("threshold has too many digits: " + std::string(text));
        num = num * 10 + static_cast<std::uint64_t>(c - '0');
        if (after_point) ++frac_digits;
    }
    DecimalRatio r{num, pow10(frac_digits)};
    while (r.den > 1 && r.num % 10 == 0) {
        r.num /= 10;
        r.den /= 10;
    }
    return r;
}

bool DecimalRatio::met_by(std::uint64_t count, std::uint64_t total) const {
    return static_cast<u128>(count) * den >= static_cast<u128>(num) * total;
}

std::uint64_t DecimalRatio::floor_times(std::uint64_t n) const {
    return static_cast<std::uint64_t>(static_cast<u128>(num) * n / den);
}

std::uint64_t DecimalRatio::ceil_times(std::uint64_t n) const {
    const u128 p = static_cast<u128>(num) * n;
    return static_cast<std::uint64_t>((p + den - 1) / den);
}

std::string DecimalRatio::str() const {
    return std::to_string(num) + "/" + std::to_string(den);
}

}  // namespace initfeat
