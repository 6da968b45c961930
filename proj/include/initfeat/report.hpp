#pragma once

#include <json.hpp>

#include <filesystem>
#include <string>

namespace initfeat {

using ojson = nlohmann::ordered_json;

/// Round to 9 significant digits. Reports store these values so their JSON
/// text is byte-stable across platforms and SIMD levels.
double sig9(double x);

/// sig9 for unit-scale quantities whose exact zeros pick up rounding noise:
/// magnitudes below 1e-12 print as 0.
double sig9z(double x);

/// Pretty-printed JSON plus trailing newline, written via temp-file rename.
void write_json_file(const std::filesystem::path& path, const ojson& j);
void write_text_file(const std::filesystem::path& path, const std::string& text);

ojson read_json_file(const std::filesystem::path& path);

}  // namespace initfeat
