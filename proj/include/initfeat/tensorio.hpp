#pragma once

// Binary tensor container and activation-dataset directory layout.
//
// Container file layout (all integers little-endian):
//
//   [0, 8)          u64 header_len
//   [8, 8+H)        UTF-8 JSON header
//   [8+H, EOF)      payload: raw f32le values
//
// Header:
//   {"format":"initfeat.tensors","version":1,
//    "metadata":{"key":"value",...},
//    "tensors":[{"name":"h","dtype":"f32le","shape":[N,3,D],"offset":0},...]}
//
// "offset" is a byte offset into the payload. Tensors are row-major.
//
// Dataset directory:
//   manifest.json    model_name, d_model, layers, num_samples, positions, dtype
//   samples.jsonl    one SampleMeta object per line
//   layer_<l>.bin    container with tensor "h" of shape [N, 3, d_model]

#include "initfeat/common.hpp"

#include <json.hpp>

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace initfeat {

struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<float> data;

    Tensor() = default;
    Tensor(std::vector<std::size_t> shape_, std::vector<float> data_)
        : shape(std::move(shape_)), data(std::move(data_)) {}

    std::size_t numel() const;
    std::size_t rank() const { return shape.size(); }
};

using TensorMap = std::map<std::string, Tensor>;
using Metadata = std::map<std::string, std::string>;

struct NamedTensor {
    std::string name;
    Tensor tensor;
};

struct Container {
    TensorMap tensors;
    Metadata metadata;
};

struct ReadOptions {
    bool allow_nonfinite = false;
};

/// Tensors are laid out in the order given. Throws DataError on an empty or
/// zero-sized shape, a shape/data size mismatch, a duplicate or non-ASCII
/// name, or an I/O failure. The file is written to a sibling temp path and
/// renamed into place.
void write_container(const std::vector<NamedTensor>& tensors, const Metadata& metadata,
                     const std::filesystem::path& path);
void write_container(const TensorMap& tensors, const std::filesystem::path& path,
                     const Metadata& metadata = {});

Container read_container(const std::filesystem::path& path, ReadOptions opts = {});

/// Parse an in-memory container image. read_container is a thin wrapper.
Container parse_container(std::span<const std::byte> bytes, std::string_view origin,
                          ReadOptions opts = {});

// ---------------------------------------------------------------------------
// Dataset

struct DatasetManifest {
    std::string model_name;
    std::size_t d_model = 0;
    std::vector<int> layers;
    std::size_t num_samples = 0;
    std::vector<std::string> positions{"src_last", "tgt_lang", "input_last"};
    std::string dtype = "f32le";
    // Unknown keys are kept and written back untouched.
    nlohmann::json extra = nlohmann::json::object();

    void validate() const;
};

struct SampleMeta {
    std::string id;
    std::string source_text;
    std::string source_lang;
    std::string target_lang;
    std::optional<double> quality;
    std::optional<double> loss;
    std::optional<std::string> output_text;
};

DatasetManifest read_manifest(const std::filesystem::path& path);
void write_manifest(const DatasetManifest& m, const std::filesystem::path& path);

/// One JSON object per line; unknown fields ignored; blank lines skipped.
/// Throws DataError on duplicate ids or non-finite quality/loss.
std::vector<SampleMeta> read_samples_jsonl(const std::filesystem::path& path);
void write_samples_jsonl(const std::vector<SampleMeta>& samples, const std::filesystem::path& path);

class ActivationDataset {
public:
    ActivationDataset() = default;
    ActivationDataset(DatasetManifest manifest, std::vector<SampleMeta> samples,
                      std::map<int, Tensor> layers);

    const DatasetManifest& manifest() const { return manifest_; }
    const std::vector<SampleMeta>& samples() const { return samples_; }
    std::size_t num_samples() const { return manifest_.num_samples; }
    std::size_t d_model() const { return manifest_.d_model; }
    const std::vector<int>& layers() const { return manifest_.layers; }
    bool has_layer(int layer) const { return layers_.count(layer) != 0; }

    /// d_model-length hidden state for (sample, layer, position).
    std::span<const float> hidden(std::size_t sample, int layer, Position pos) const;

    /// The raw [N, 3, d_model] tensor for a layer.
    const Tensor& layer_tensor(int layer) const;

private:
    DatasetManifest manifest_;
    std::vector<SampleMeta> samples_;
    std::map<int, Tensor> layers_;
};

std::filesystem::path layer_file(const std::filesystem::path& dir, int layer);

struct DatasetLoadOptions {
    ReadOptions read;
    // Load only these layers (must be listed in the manifest); empty = all.
    std::vector<int> only_layers;
};

ActivationDataset load_activation_dataset(const std::filesystem::path& dir,
                                          const DatasetLoadOptions& opts = {});
void save_activation_dataset(const ActivationDataset& ds, const std::filesystem::path& dir);

}  // namespace initfeat
