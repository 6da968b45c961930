#include "initfeat/report.hpp"

#include "initfeat/common.hpp"

#include <fmt/format.h>

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace initfeat {

namespace fs = std::filesystem;

std::string to_string(const FeatureId& f) {
    return fmt::format("l{}_f{}", f.layer, f.index);
}

double sig9(double x) {
    if (!std::isfinite(x) || x == 0.0) return x == 0.0 ? 0.0 : x;
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.9g", x);
    return std::strtod(buf, nullptr);
}

double sig9z(double x) { return std::abs(x) < 1e-12 ? 0.0 : sig9(x); }

void write_text_file(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw DataError(fmt::format("cannot open '{}' for writing", tmp.string()));
        out << text;
        if (!out) throw DataError(fmt::format("write failed: '{}'", tmp.string()));
    }
    fs::rename(tmp, path);
}

void write_json_file(const fs::path& path, const ojson& j) {
    write_text_file(path, j.dump(2) + "\n");
}

ojson read_json_file(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError(fmt::format("cannot open '{}'", path.string()));
    try {
        return ojson::parse(in);
    } catch (const ojson::exception& e) {
        throw DataError(fmt::format("{}: {}", path.string(), e.what()));
    }
}

}  // namespace initfeat
