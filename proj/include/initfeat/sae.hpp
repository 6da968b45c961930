#pragma once

// JumpReLU sparse autoencoder forward math.
//
//   z    = W_encᵀ h + b_enc
//   a[j] = z[j] if z[j] > theta[j] else 0
//   ĥ    = Σ_j a[j] · W_dec[j, :] + b_dec
//
// Encode accumulates rows of W_enc in ascending input index; decode
// accumulates rows of W_dec in ascending feature index. Both orders are fixed
// so results are reproducible run to run and across SIMD levels.

#include "initfeat/tensorio.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace initfeat {

struct SaeParams {
    int layer = 0;
    std::size_t d_model = 0;
    std::size_t d_sae = 0;
    std::vector<float> w_enc;  // [d_model, d_sae]
    std::vector<float> b_enc;  // [d_sae]
    std::vector<float> theta;  // [d_sae], >= 0
    std::vector<float> w_dec;  // [d_sae, d_model]
    std::vector<float> b_dec;  // [d_model]

    /// Checks sizes, d_sae >= d_model, theta >= 0 and finiteness.
    void validate() const;

    std::span<const float> enc_row(std::size_t i) const {
        return std::span<const float>(w_enc).subspan(i * d_sae, d_sae);
    }
    std::span<const float> dec_row(std::size_t j) const {
        return std::span<const float>(w_dec).subspan(j * d_model, d_model);
    }
};

std::filesystem::path sae_file(const std::filesystem::path& dir, int layer);

/// Reads tensors w_enc, b_enc, theta, w_dec, b_dec. A missing theta defaults
/// to zeros (plain ReLU) with a warning.
SaeParams load_sae(const std::filesystem::path& path, int layer, ReadOptions opts = {});
void save_sae(const SaeParams& params, const std::filesystem::path& path);

struct SparseActivations {
    std::size_t dim = 0;
    std::vector<std::uint32_t> index;  // strictly increasing
    std::vector<double> value;         // strictly positive
};

SparseActivations to_sparse(std::span<const double> dense);
std::vector<double> to_dense(const SparseActivations& sparse);

/// Pre-activations z (before the gate).
std::vector<double> pre_activations(const SaeParams& p, std::span<const float> h);
std::vector<double> pre_activations(const SaeParams& p, std::span<const double> h);

/// Dense activations a, length d_sae.
std::vector<double> encode(const SaeParams& p, std::span<const float> h);
std::vector<double> encode(const SaeParams& p, std::span<const double> h);

std::vector<double> decode(const SaeParams& p, std::span<const double> a);
std::vector<double> decode(const SaeParams& p, const SparseActivations& a);

struct Reconstruction {
    std::vector<double> h_hat;
    double error = 0.0;  // ‖h − ĥ‖₂
};

Reconstruction reconstruct(const SaeParams& p, std::span<const float> h);
Reconstruction reconstruct(const SaeParams& p, std::span<const double> h);

/// Encoder restricted to a fixed subset of features. W_enc columns are
/// gathered once; outputs are bitwise identical to the same entries of
/// encode().
class SubsetEncoder {
public:
    SubsetEncoder(const SaeParams& p, std::vector<std::uint32_t> features);

    const std::vector<std::uint32_t>& features() const { return features_; }

    /// Activations for features()[k] at position k.
    std::vector<double> encode(std::span<const float> h) const;

private:
    std::size_t d_model_;
    std::vector<std::uint32_t> features_;
    std::vector<float> columns_;  // [d_model, k]
    std::vector<float> bias_;
    std::vector<float> theta_;
};

}  // namespace initfeat
