#pragma once

// Multiplicative feature interventions on hidden states, and steering exports
// for runtimes that apply them during generation.

#include "initfeat/consistency.hpp"
#include "initfeat/influence.hpp"
#include "initfeat/sae.hpp"

#include <filesystem>

namespace initfeat {

enum class PatchMode {
    delta,    // h' = h + Σ (c − 1)·a_j(h)·W_dec[j, :]
    replace,  // h' = decode(a with listed a_j scaled by c)
};

PatchMode parse_patch_mode(std::string_view s);
std::string_view to_string(PatchMode m);

struct InterventionSpec {
    std::vector<FeatureId> features;
    double coefficient = 1.0;  // 0 ablates, 2 amplifies, 1 is identity
    PatchMode mode = PatchMode::delta;
};

/// Reusable patcher for one SAE layer; all listed features are scaled in a
/// single encode pass. Throws DataError if a feature belongs to another layer.
class HiddenPatcher {
public:
    HiddenPatcher(const SaeParams& p, InterventionSpec spec);

    std::vector<double> apply(std::span<const float> h) const;
    std::vector<double> apply(std::span<const double> h) const;

private:
    template <class T>
    std::vector<double> apply_impl(std::span<const T> h) const;

    const SaeParams* params_;
    InterventionSpec spec_;
    std::vector<std::uint32_t> indices_;
    SubsetEncoder encoder_;
};

std::vector<double> patch_hidden(const SaeParams& p, std::span<const float> h,
                                 const InterventionSpec& spec);
std::vector<double> patch_hidden(const SaeParams& p, std::span<const double> h,
                                 const InterventionSpec& spec);

struct SteeringLayer {
    int layer = 0;
    std::vector<std::uint32_t> feature_index;
    std::vector<std::vector<double>> directions;  // unit decoder directions
    std::vector<double> gains;                    // (c − 1)·mean active activation
    std::vector<double> decoder_norms;
};

struct SteeringExport {
    double coefficient = 2.0;
    PatchMode mode = PatchMode::delta;
    std::string apply_rule = "every_generation_step";
    std::vector<SteeringLayer> layers;
};

/// Directions are the canonical influence directions oriented along the
/// decoder row. The gain is a static approximation; the exact per-token delta
/// is (c − 1)·a_j(h)·decoder_norm·direction and needs live activations.
SteeringExport build_steering(const FinalFeatureSet& final_set,
                              const std::vector<CanonicalInfluence>& table, double coefficient,
                              PatchMode mode = PatchMode::delta);

/// Writes steering_<c>.bin and steering_meta.json into dir; returns the .bin path.
std::filesystem::path write_steering(const SteeringExport& s, const std::filesystem::path& dir);
SteeringExport read_steering(const std::filesystem::path& bin_path);

std::string coefficient_tag(double c);

}  // namespace initfeat
