#include "initfeat/tensorio.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>

namespace initfeat {

namespace fs = std::filesystem;
using json = nlohmann::json;
using ojson = nlohmann::ordered_json;

namespace {

constexpr std::string_view kFormat = "initfeat.tensors";
constexpr int kVersion = 1;

std::size_t checked_numel(const std::vector<std::size_t>& shape, std::string_view name) {
    if (shape.empty()) throw DataError(fmt::format("tensor '{}': empty shape", name));
    std::size_t n = 1;
    for (std::size_t d : shape) {
        if (d == 0) throw DataError(fmt::format("tensor '{}': empty shape", name));
        if (n > SIZE_MAX / 4 / d) throw DataError(fmt::format("tensor '{}': shape overflows", name));
        n *= d;
    }
    return n;
}

void check_name(std::string_view name) {
    if (name.empty()) throw DataError("tensor name must be nonempty");
    for (char c : name)
        if (static_cast<unsigned char>(c) < 0x20 || static_cast<unsigned char>(c) > 0x7e)
            throw DataError(fmt::format("tensor name '{}' is not printable ASCII", name));
}

void put_u64le(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint64_t get_u64le(const std::byte* p) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    return v;
}

void append_f32le(std::string& out, std::span<const float> values) {
    const std::size_t start = out.size();
    out.resize(start + values.size() * 4);
    char* dst = out.data() + start;
    if constexpr (std::endian::native == std::endian::little) {
        std::memcpy(dst, values.data(), values.size() * 4);
    } else {
        for (float f : values) {
            const auto u = std::bit_cast<std::uint32_t>(f);
            for (int b = 0; b < 4; ++b) *dst++ = static_cast<char>((u >> (8 * b)) & 0xff);
        }
    }
}

void decode_f32le(const std::byte* src, std::span<float> out) {
    if constexpr (std::endian::native == std::endian::little) {
        std::memcpy(out.data(), src, out.size() * 4);
    } else {
        for (float& f : out) {
            std::uint32_t u = 0;
            for (int b = 0; b < 4; ++b) u |= static_cast<std::uint32_t>(src[b]) << (8 * b);
            f = std::bit_cast<float>(u);
            src += 4;
        }
    }
}

void write_file_atomic(const fs::path& path, const std::string& bytes) {
    if (path.has_parent_path() && !path.parent_path().empty())
        fs::create_directories(path.parent_path());
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw DataError(fmt::format("cannot open '{}' for writing", tmp.string()));
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw DataError(fmt::format("write failed: '{}'", tmp.string()));
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) throw DataError(fmt::format("cannot rename '{}': {}", tmp.string(), ec.message()));
}

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError(fmt::format("cannot open '{}'", path.string()));
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return bytes;
}

}  // namespace

std::size_t Tensor::numel() const {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return shape.empty() ? 0 : n;
}

void write_container(const std::vector<NamedTensor>& tensors, const Metadata& metadata,
                     const fs::path& path) {
    std::set<std::string> seen;
    ojson entries = ojson::array();
    std::size_t offset = 0;
    for (const auto& [name, t] : tensors) {
        check_name(name);
        if (!seen.insert(name).second) throw DataError(fmt::format("duplicate tensor name '{}'", name));
        const std::size_t n = checked_numel(t.shape, name);
        if (n != t.data.size())
            throw DataError(fmt::format("tensor '{}': shape holds {} values but data has {}", name,
                                        n, t.data.size()));
        ojson e;
        e["name"] = name;
        e["dtype"] = "f32le";
        e["shape"] = t.shape;
        e["offset"] = offset;
        entries.push_back(std::move(e));
        offset += n * 4;
    }

    ojson header;
    header["format"] = kFormat;
    header["version"] = kVersion;
    ojson meta = ojson::object();
    for (const auto& [k, v] : metadata) meta[k] = v;
    header["metadata"] = std::move(meta);
    header["tensors"] = std::move(entries);
    const std::string header_text = header.dump();

    std::string bytes;
    bytes.reserve(8 + header_text.size() + offset);
    put_u64le(bytes, header_text.size());
    bytes += header_text;
    for (const auto& nt : tensors) append_f32le(bytes, nt.tensor.data);
    write_file_atomic(path, bytes);
}

void write_container(const TensorMap& tensors, const fs::path& path, const Metadata& metadata) {
    std::vector<NamedTensor> list;
    list.reserve(tensors.size());
    for (const auto& [name, t] : tensors) list.push_back({name, t});
    write_container(list, metadata, path);
}

Container parse_container(std::span<const std::byte> bytes, std::string_view origin,
                          ReadOptions opts) {
    if (bytes.size() < 8) throw DataError(fmt::format("{}: file too short for header", origin));
    const std::uint64_t header_len = get_u64le(bytes.data());
    if (header_len > bytes.size() - 8)
        throw DataError(fmt::format("{}: header underrun ({} declared, {} available)", origin,
                                    header_len, bytes.size() - 8));

    json header;
    try {
        const auto* p = reinterpret_cast<const char*>(bytes.data() + 8);
        header = json::parse(p, p + header_len);
    } catch (const json::exception& e) {
        throw DataError(fmt::format("{}: header is not valid JSON: {}", origin, e.what()));
    }
    if (!header.is_object() || header.value("format", "") != kFormat)
        throw DataError(fmt::format("{}: not an initfeat tensor container", origin));
    if (header.value("version", 0) != kVersion)
        throw DataError(fmt::format("{}: unsupported container version", origin));

    const std::byte* payload = bytes.data() + 8 + header_len;
    const std::size_t payload_len = bytes.size() - 8 - header_len;

    Container out;
    if (header.contains("metadata")) {
        for (const auto& [k, v] : header["metadata"].items()) {
            if (!v.is_string())
                throw DataError(fmt::format("{}: metadata '{}' must be a string", origin, k));
            out.metadata[k] = v.get<std::string>();
        }
    }

    struct Span {
        std::size_t begin, end;
        std::string name;
    };
    std::vector<Span> spans;
    if (!header.contains("tensors") || !header["tensors"].is_array())
        throw DataError(fmt::format("{}: header lacks a tensors array", origin));

    for (const auto& e : header["tensors"]) {
        std::string name;
        std::vector<std::size_t> shape;
        std::size_t offset = 0;
        try {
            name = e.at("name").get<std::string>();
            if (e.at("dtype").get<std::string>() != "f32le")
                throw DataError(fmt::format("{}: tensor '{}' has unsupported dtype", origin, name));
            shape = e.at("shape").get<std::vector<std::size_t>>();
            offset = e.at("offset").get<std::size_t>();
        } catch (const json::exception& ex) {
            throw DataError(fmt::format("{}: malformed tensor entry: {}", origin, ex.what()));
        }
        check_name(name);
        if (out.tensors.count(name) != 0)
            throw DataError(fmt::format("{}: duplicate tensor name '{}'", origin, name));
        const std::size_t n = checked_numel(shape, name);
        const std::size_t nbytes = n * 4;
        if (offset > payload_len || nbytes > payload_len - offset)
            throw DataError(fmt::format("{}: payload underrun in tensor '{}'", origin, name));
        spans.push_back({offset, offset + nbytes, name});

        Tensor t;
        t.shape = std::move(shape);
        t.data.resize(n);
        decode_f32le(payload + offset, t.data);
        if (!opts.allow_nonfinite) {
            for (std::size_t i = 0; i < n; ++i)
                if (!std::isfinite(t.data[i]))
                    throw DataError(
                        fmt::format("{}: nonfinite value at {}[{}]", origin, name, i));
        }
        out.tensors.emplace(name, std::move(t));
    }

    std::sort(spans.begin(), spans.end(),
              [](const Span& a, const Span& b) { return a.begin < b.begin; });
    for (std::size_t i = 1; i < spans.size(); ++i)
        if (spans[i].begin < spans[i - 1].end)
            throw DataError(fmt::format("{}: overlapping tensors '{}' and '{}'", origin,
                                        spans[i - 1].name, spans[i].name));
    return out;
}

Container read_container(const fs::path& path, ReadOptions opts) {
    const std::string bytes = read_file(path);
    return parse_container(std::as_bytes(std::span(bytes.data(), bytes.size())), path.string(), opts);
}

// ---------------------------------------------------------------------------

void DatasetManifest::validate() const {
    if (d_model == 0) throw DataError("manifest: d_model must be positive");
    if (num_samples == 0) throw DataError("manifest: num_samples must be positive");
    if (layers.empty()) throw DataError("manifest: layers must be non-empty");
    for (std::size_t i = 1; i < layers.size(); ++i)
        if (layers[i] <= layers[i - 1]) throw DataError("manifest: layers must be strictly increasing");
    if (positions.size() != kNumPositions)
        throw DataError("manifest: positions must have exactly three entries");
    for (std::size_t i = 0; i < kNumPositions; ++i)
        if (positions[i] != kPositionNames[i])
            throw DataError(fmt::format("manifest: position {} must be '{}', got '{}'", i,
                                        kPositionNames[i], positions[i]));
    if (dtype != "f32le") throw DataError("manifest: dtype must be f32le");
}

DatasetManifest read_manifest(const fs::path& path) {
    json j;
    try {
        j = json::parse(read_file(path));
    } catch (const json::exception& e) {
        throw DataError(fmt::format("{}: {}", path.string(), e.what()));
    }
    DatasetManifest m;
    try {
        m.model_name = j.value("model_name", "");
        m.d_model = j.at("d_model").get<std::size_t>();
        m.layers = j.at("layers").get<std::vector<int>>();
        m.num_samples = j.at("num_samples").get<std::size_t>();
        m.positions = j.at("positions").get<std::vector<std::string>>();
        m.dtype = j.value("dtype", "f32le");
    } catch (const json::exception& e) {
        throw DataError(fmt::format("{}: {}", path.string(), e.what()));
    }
    for (const auto& [k, v] : j.items())
        if (k != "model_name" && k != "d_model" && k != "layers" && k != "num_samples" &&
            k != "positions" && k != "dtype")
            m.extra[k] = v;
    m.validate();
    return m;
}

void write_manifest(const DatasetManifest& m, const fs::path& path) {
    m.validate();
    ojson j;
    j["model_name"] = m.model_name;
    j["d_model"] = m.d_model;
    j["layers"] = m.layers;
    j["num_samples"] = m.num_samples;
    j["positions"] = m.positions;
    j["dtype"] = m.dtype;
    for (const auto& [k, v] : m.extra.items()) j[k] = v;
    write_file_atomic(path, j.dump(2) + "\n");
}

std::vector<SampleMeta> read_samples_jsonl(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError(fmt::format("cannot open '{}'", path.string()));
    std::vector<SampleMeta> out;
    std::set<std::string> ids;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw DataError(fmt::format("{}:{}: {}", path.string(), lineno, e.what()));
        }
        SampleMeta s;
        try {
            s.id = j.at("id").get<std::string>();
            s.source_text = j.value("source_text", "");
            s.source_lang = j.value("source_lang", "");
            s.target_lang = j.value("target_lang", "");
            if (j.contains("quality") && !j["quality"].is_null()) s.quality = j["quality"].get<double>();
            if (j.contains("loss") && !j["loss"].is_null()) s.loss = j["loss"].get<double>();
            if (j.contains("output_text") && !j["output_text"].is_null())
                s.output_text = j["output_text"].get<std::string>();
        } catch (const json::exception& e) {
            throw DataError(fmt::format("{}:{}: {}", path.string(), lineno, e.what()));
        }
        if ((s.quality && !std::isfinite(*s.quality)) || (s.loss && !std::isfinite(*s.loss)))
            throw DataError(fmt::format("{}:{}: non-finite quality/loss", path.string(), lineno));
        if (!ids.insert(s.id).second)
            throw DataError(fmt::format("{}:{}: duplicate sample id '{}'", path.string(), lineno, s.id));
        out.push_back(std::move(s));
    }
    return out;
}

void write_samples_jsonl(const std::vector<SampleMeta>& samples, const fs::path& path) {
    std::string text;
    for (const auto& s : samples) {
        ojson j;
        j["id"] = s.id;
        j["source_text"] = s.source_text;
        j["source_lang"] = s.source_lang;
        j["target_lang"] = s.target_lang;
        if (s.quality) j["quality"] = *s.quality;
        if (s.loss) j["loss"] = *s.loss;
        if (s.output_text) j["output_text"] = *s.output_text;
        text += j.dump();
        text += '\n';
    }
    write_file_atomic(path, text);
}

// ---------------------------------------------------------------------------

ActivationDataset::ActivationDataset(DatasetManifest manifest, std::vector<SampleMeta> samples,
                                     std::map<int, Tensor> layers)
    : manifest_(std::move(manifest)), samples_(std::move(samples)), layers_(std::move(layers)) {
    manifest_.validate();
    if (samples_.size() != manifest_.num_samples)
        throw DataError(fmt::format("sample count mismatch: manifest says {}, metadata has {}",
                                    manifest_.num_samples, samples_.size()));
    const std::vector<std::size_t> want{manifest_.num_samples, kNumPositions, manifest_.d_model};
    for (const auto& [layer, t] : layers_) {
        if (!std::binary_search(manifest_.layers.begin(), manifest_.layers.end(), layer))
            throw DataError(fmt::format("layer {} is not listed in the manifest", layer));
        if (t.shape != want)
            throw DataError(fmt::format("layer {}: tensor h has shape [{}], expected [{}]", layer,
                                        fmt::join(t.shape, ","), fmt::join(want, ",")));
    }
}

std::span<const float> ActivationDataset::hidden(std::size_t sample, int layer, Position pos) const {
    const Tensor& t = layer_tensor(layer);
    if (sample >= manifest_.num_samples)
        throw DataError(fmt::format("sample index {} out of range", sample));
    const std::size_t d = manifest_.d_model;
    const std::size_t off = (sample * kNumPositions + index_of(pos)) * d;
    return std::span<const float>(t.data).subspan(off, d);
}

const Tensor& ActivationDataset::layer_tensor(int layer) const {
    auto it = layers_.find(layer);
    if (it == layers_.end()) throw DataError(fmt::format("layer {} not loaded", layer));
    return it->second;
}

fs::path layer_file(const fs::path& dir, int layer) {
    return dir / fmt::format("layer_{}.bin", layer);
}

ActivationDataset load_activation_dataset(const fs::path& dir, const DatasetLoadOptions& opts) {
    if (!fs::is_directory(dir))
        throw DataError(fmt::format("dataset directory '{}' does not exist", dir.string()));
    DatasetManifest manifest = read_manifest(dir / "manifest.json");
    std::vector<SampleMeta> samples = read_samples_jsonl(dir / "samples.jsonl");
    if (samples.size() != manifest.num_samples)
        throw DataError(fmt::format("sample count mismatch: manifest says {}, {} has {} rows",
                                    manifest.num_samples, (dir / "samples.jsonl").string(),
                                    samples.size()));

    std::vector<int> wanted = opts.only_layers.empty() ? manifest.layers : opts.only_layers;
    std::map<int, Tensor> layers;
    for (int l : wanted) {
        if (!std::binary_search(manifest.layers.begin(), manifest.layers.end(), l))
            throw DataError(fmt::format("layer {} is not listed in the manifest", l));
        const fs::path p = layer_file(dir, l);
        if (!fs::exists(p)) throw DataError(fmt::format("missing layer file '{}'", p.string()));
        Container c = read_container(p, opts.read);
        auto it = c.tensors.find("h");
        if (it == c.tensors.end()) throw DataError(fmt::format("{}: no tensor 'h'", p.string()));
        layers.emplace(l, std::move(it->second));
    }
    return ActivationDataset(std::move(manifest), std::move(samples), std::move(layers));
}

void save_activation_dataset(const ActivationDataset& ds, const fs::path& dir) {
    fs::create_directories(dir);
    write_manifest(ds.manifest(), dir / "manifest.json");
    write_samples_jsonl(ds.samples(), dir / "samples.jsonl");
    for (int l : ds.layers()) {
        TensorMap m;
        m.emplace("h", ds.layer_tensor(l));
        write_container(m, layer_file(dir, l));
    }
}

}  // namespace initfeat
