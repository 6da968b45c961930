#pragma once

// Stage 1: features present (activation > 0) at the union of the three
// tagged positions in at least tau_freq of the identification samples.

#include "initfeat/ratio.hpp"
#include "initfeat/report.hpp"
#include "initfeat/sae.hpp"

#include <array>
#include <map>

namespace initfeat {

using PositionRecord = std::array<std::span<const float>, kNumPositions>;

struct PositionMask {
    std::array<bool, kNumPositions> on{true, true, true};

    static PositionMask only(Position p) {
        PositionMask m{{false, false, false}};
        m.on[index_of(p)] = true;
        return m;
    }
};

struct RecallOptions {
    unsigned threads = 1;
    PositionMask positions;
};

/// True iff a[j] > 0 at src_last, tgt_lang or input_last.
bool feature_present(const SaeParams& p, const PositionRecord& record, std::uint32_t j);

struct LayerRecall {
    int layer = 0;
    std::size_t d_sae = 0;
    std::size_t num_samples = 0;
    std::vector<std::uint32_t> presence;  // per feature: #samples where present
    std::vector<std::uint32_t> recalled;  // ascending feature indices

    double frequency(std::uint32_t j) const {
        return static_cast<double>(presence.at(j)) / static_cast<double>(num_samples);
    }
    double rate() const { return static_cast<double>(recalled.size()) / static_cast<double>(d_sae); }
};

struct RecallReport {
    double tau_freq = 0.6;
    std::size_t num_samples = 0;
    std::vector<LayerRecall> layers;  // ascending layer

    std::vector<FeatureId> candidates() const;
    const LayerRecall& layer(int l) const;
};

/// Recall on one layer. Count comparison is exact: count/N >= tau_freq with
/// tau_freq read as the decimal it prints as.
LayerRecall recall_layer(const ActivationDataset& ds, const SaeParams& p, double tau_freq,
                         const RecallOptions& opts = {});

RecallReport recall_features(const ActivationDataset& ds, const std::map<int, SaeParams>& saes,
                             double tau_freq, const RecallOptions& opts = {});

ojson to_json(const RecallReport& r);
RecallReport recall_report_from_json(const ojson& j);

}  // namespace initfeat
