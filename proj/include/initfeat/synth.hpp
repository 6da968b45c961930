#pragma once

// Synthetic datasets and SAEs with planted ground truth.
//
// Every feature that can fire gets its own orthonormal decoder direction,
// except the planted features of a layer, which share one direction u
// (perturbed by ε) and fire together as a cohort. Encoder columns are matched
// to the decoder so encode(h) recovers exactly the planted activation pattern.

#include "initfeat/report.hpp"
#include "initfeat/sae.hpp"
#include "initfeat/tensorio.hpp"

#include <filesystem>
#include <map>

namespace initfeat {

struct PlantedSpec {
    int layer = 0;
    std::uint32_t index = 0;
    double frequency = 0.8;  // exactly floor(frequency·N) samples
    double epsilon = 0.0;    // direction noise
    // Bit p set = fires at position p. 0 = a random nonempty subset per sample.
    std::uint8_t position_mask = 0;
};

struct SynthConfig {
    std::size_t d_model = 32;
    std::size_t d_sae = 128;
    std::vector<int> layers{0, 1, 2};
    std::size_t n_samples = 98;
    std::vector<PlantedSpec> planted;
    std::size_t distractors = 40;           // spread round-robin over layers
    double distractor_max_frequency = 0.3;
    std::size_t decoys_per_layer = 0;       // frequent but incoherent, only in layers without planted
    double decoy_frequency = 0.8;
    double noise = 1e-4;                    // isotropic noise added to each hidden state
    std::uint64_t seed = 1;
    std::string model_name = "synthetic";

    void validate() const;
};

/// The acceptance fixture: 98 samples, d_model 32, d_sae 128, layers 0..2,
/// planted l0 {3, 17, 40} at 0.8 and l1 {5, 60, 99} at 0.7 with ε = 0, three
/// decoys in layer 2 and 40 distractors at frequency ≤ 0.3.
SynthConfig acceptance_fixture_config();

enum class SynthRole { planted, decoy, distractor };
std::string_view to_string(SynthRole r);

struct SynthFeature {
    FeatureId feature;
    SynthRole role = SynthRole::distractor;
    std::size_t count = 0;  // samples where it fires at some position
};

struct GroundTruth {
    std::size_t num_samples = 0;
    std::vector<SynthFeature> features;  // every feature that can fire, sorted by id
    std::vector<FeatureId> final_set;    // the planted features
    std::map<int, std::vector<double>> planted_direction;

    /// Features whose exact frequency meets tau (inclusive, exact rational).
    std::vector<FeatureId> expected_recalled(double tau) const;
};

struct SynthResult {
    ActivationDataset dataset;
    std::map<int, SaeParams> saes;
    GroundTruth truth;
};

/// Throws DataError on an infeasible configuration (more firing features
/// than d_model, planted features of one layer with different frequencies,
/// frequencies rounding to zero samples).
SynthResult generate(const SynthConfig& cfg);

ojson to_json(const GroundTruth& t);
GroundTruth ground_truth_from_json(const ojson& j);

/// <dir>/dataset, <dir>/sae, <dir>/ground_truth.json
void write_synth(const SynthResult& r, const std::filesystem::path& dir);

}  // namespace initfeat
