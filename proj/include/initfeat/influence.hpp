#pragma once

// Stage 2: feature influence vectors.
//
// For a context h and feature j, the influence vector is the change in the
// SAE reconstruction when a_j(h) is overwritten with alpha_act:
//
//   v = decode(a with a_j := alpha) − decode(a)  =  (alpha − a_j(h)) · W_dec[j, :]
//
// The canonical direction of a feature is the normalized mean of v over every
// (sample, position) context of the identification set.

#include "initfeat/report.hpp"
#include "initfeat/sae.hpp"

#include <filesystem>

namespace initfeat {

struct AlphaPolicy {
    enum class Kind { max_plus_margin, fixed };
    Kind kind = Kind::max_plus_margin;
    double value = 1.0;  // margin or fixed alpha

    double resolve(double max_activation) const {
        return kind == Kind::fixed ? value : max_activation + value;
    }
    std::string describe() const;
};

/// Literal two-decode form.
std::vector<double> influence_vector(const SaeParams& p, std::span<const float> h, std::uint32_t j,
                                     double alpha_act);
std::vector<double> influence_vector(const SaeParams& p, std::span<const double> h,
                                     std::uint32_t j, double alpha_act);

struct CanonicalInfluence {
    FeatureId feature;
    std::vector<double> direction;  // unit, d_model
    double alpha = 0.0;
    double mean_gap = 0.0;          // mean over contexts of alpha − a_j
    double max_activation = 0.0;    // over all contexts
    double mean_active_activation = 0.0;  // mean of a_j over contexts where a_j > 0
    std::size_t active_contexts = 0;
    std::size_t contexts_used = 0;
    double decoder_norm = 0.0;
    // Cross-checks: cosine between `direction` and sign(mean_gap)·normalize(W_dec[j]);
    // over a sample of contexts, the smallest |cos| between the literal
    // two-decode vector and `direction`, and the largest relative deviation
    // between the two-decode and linear forms.
    double closed_form_cos = 0.0;
    std::size_t verified_contexts = 0;
    double min_context_abs_cos = 1.0;
    double max_linear_rel_dev = 0.0;
};

struct InfluenceOptions {
    AlphaPolicy alpha;
    unsigned threads = 1;
    std::size_t verify_contexts = 8;
};

/// Canonical influence for each listed feature of one layer. Throws DataError
/// "degenerate feature" when a decoder row is zero or every gap is zero.
std::vector<CanonicalInfluence> canonical_influences(const SaeParams& p, const ActivationDataset& ds,
                                                     const std::vector<std::uint32_t>& features,
                                                     const InfluenceOptions& opts = {});

CanonicalInfluence canonical_influence(const SaeParams& p, const ActivationDataset& ds,
                                       std::uint32_t j, const InfluenceOptions& opts = {});

/// influence_vectors.bin: "directions" [n, d_model] plus per-feature columns
/// feature_layer, feature_index, alpha, mean_gap, max_activation,
/// mean_active_activation, decoder_norm (each [n]).
void save_influence_table(const std::vector<CanonicalInfluence>& table, const AlphaPolicy& policy,
                          const std::filesystem::path& path);
std::vector<CanonicalInfluence> load_influence_table(const std::filesystem::path& path);

ojson to_json(const std::vector<CanonicalInfluence>& table, const AlphaPolicy& policy);

}  // namespace initfeat
