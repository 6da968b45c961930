#pragma once

#include <array>
#include <compare>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace initfeat {

/// Malformed or inconsistent input data (files, shapes, missing fields).
/// The CLI maps this to exit status 2.
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Bad arguments or configuration. The CLI maps this to exit status 1.
class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// The three tagged prompt positions, in the only legal on-disk order.
enum class Position : std::uint8_t { src_last = 0, tgt_lang = 1, input_last = 2 };

inline constexpr std::size_t kNumPositions = 3;
inline constexpr std::array<Position, kNumPositions> kAllPositions{
    Position::src_last, Position::tgt_lang, Position::input_last};
inline constexpr std::array<std::string_view, kNumPositions> kPositionNames{
    "src_last", "tgt_lang", "input_last"};

constexpr std::size_t index_of(Position p) { return static_cast<std::size_t>(p); }

/// One SAE dictionary dimension at one layer.
struct FeatureId {
    int layer = 0;
    std::uint32_t index = 0;

    friend auto operator<=>(const FeatureId&, const FeatureId&) = default;
};

/// "l12_f2291" style label used in reports and logs.
std::string to_string(const FeatureId& f);

}  // namespace initfeat
