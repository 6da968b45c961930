#pragma once

// Shared fixtures for the unit tests.

#include "initfeat/random.hpp"
#include "initfeat/sae.hpp"
#include "initfeat/tensorio.hpp"

#include <filesystem>
#include <string>

namespace testsupport {

/// Gaussian weights scaled so that roughly a third of features fire on
/// gaussian inputs.
inline initfeat::SaeParams random_sae(std::uint64_t seed, std::size_t d_model, std::size_t d_sae, int layer = 0) {
    initfeat::Rng rng(seed);
    initfeat::SaeParams p;
    p.layer = layer;
    p.d_model = d_model;
    p.d_sae = d_sae;
    const double s = 1.0 / std::sqrt(static_cast<double>(d_model));
    for (std::size_t i = 0; i < d_model * d_sae; ++i) p.w_enc.push_back(static_cast<float>(s * rng.normal()));
    for (std::size_t j = 0; j < d_sae; ++j) {
        p.b_enc.push_back(static_cast<float>(0.1 * rng.normal()));
        p.theta.push_back(static_cast<float>(rng.uniform(0.0, 0.5)));
    }
    for (std::size_t i = 0; i < d_sae * d_model; ++i) p.w_dec.push_back(static_cast<float>(s * rng.normal()));
    for (std::size_t i = 0; i < d_model; ++i) p.b_dec.push_back(static_cast<float>(0.05 * rng.normal()));
    return p;
}

inline std::vector<float> random_vec(initfeat::Rng& rng, std::size_t n, double scale = 1.0) {
    std::vector<float> v(n);
    for (float& x : v) x = static_cast<float>(scale * rng.normal());
    return v;
}

/// Gaussian hidden states for the listed layers.
inline initfeat::ActivationDataset random_dataset(std::uint64_t seed, std::size_t n, std::size_t d_model,
                                                  std::vector<int> layers) {
    initfeat::Rng rng(seed);
    initfeat::DatasetManifest m;
    m.model_name = "test";
    m.d_model = d_model;
    m.layers = layers;
    m.num_samples = n;
    std::vector<initfeat::SampleMeta> samples(n);
    for (std::size_t i = 0; i < n; ++i) {
        samples[i].id = "s" + std::to_string(1000 + i);
        samples[i].source_lang = "en";
        samples[i].target_lang = "zh";
    }
    std::map<int, initfeat::Tensor> t;
    for (int l : layers) t.emplace(l, initfeat::Tensor({n, 3, d_model}, random_vec(rng, n * 3 * d_model)));
    return initfeat::ActivationDataset(m, samples, std::move(t));
}

/// Fresh empty directory under the build tree, removed at destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        path_ = std::filesystem::temp_directory_path() /
                ("initfeat_test_" + tag + "_" + std::to_string(reinterpret_cast<std::uintptr_t>(this)));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
};

}  // namespace testsupport
