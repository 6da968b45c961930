#pragma once

// Fine-tuning data curation: mechanistic scores and the S0–S3 strategies.

#include "initfeat/consistency.hpp"
#include "initfeat/sae.hpp"
#include "initfeat/tensorio.hpp"

#include <filesystem>
#include <map>
#include <optional>

namespace initfeat {

enum class Strategy { S0_random, S1_high_quality, S2_high_loss, S3_mechanistic };

/// Accepts "S0".."S3" or the full names ("S3_mechanistic").
Strategy parse_strategy(std::string_view s);
std::string_view to_string(Strategy s);
inline constexpr std::array<Strategy, 4> kAllStrategies{
    Strategy::S0_random, Strategy::S1_high_quality, Strategy::S2_high_loss, Strategy::S3_mechanistic};

enum class ScoreAggregator { mean, sum, min };
ScoreAggregator parse_aggregator(std::string_view s);
std::string_view to_string(ScoreAggregator a);

/// Per-sample score: aggregate over final-set features of the max activation
/// over the three positions. Throws DataError on an empty final set.
double mechanistic_score(const ActivationDataset& ds, const std::map<int, SaeParams>& saes,
                         const FinalFeatureSet& final_set, std::size_t sample,
                         ScoreAggregator agg = ScoreAggregator::mean);

/// All samples, parallel over samples; the result does not depend on threads.
std::vector<double> mechanistic_scores(const ActivationDataset& ds,
                                       const std::map<int, SaeParams>& saes,
                                       const FinalFeatureSet& final_set,
                                       ScoreAggregator agg = ScoreAggregator::mean,
                                       unsigned threads = 1);

struct PoolEntry {
    std::string id;
    std::optional<double> quality;
    std::optional<double> loss;
    std::optional<double> mech_score;
};

/// Pool from samples.jsonl plus optional scores keyed by sample id.
std::vector<PoolEntry> make_pool(const std::vector<SampleMeta>& samples,
                                 const std::map<std::string, double>& mech_scores = {});

struct Budget {
    enum class Kind { count, fraction } kind = Kind::count;
    std::size_t count = 0;
    double fraction = 0.0;

    static Budget of_count(std::size_t k);
    static Budget of_fraction(double f);  // f in (0, 1]
    /// "100" or "0.2"; integers are counts, anything with a '.' is a fraction.
    static Budget parse(std::string_view s);

    /// Requested size for a pool of n. Fractions use max(1, floor(f·n)) exactly.
    std::size_t resolve(std::size_t n) const;
    std::string tag() const;
};

struct SelectionOptions {
    double quality_gate = 0.5;  // S2/S3 keep the top ceil(gate·n) by quality
    std::uint64_t seed = 0;     // S0 only
};

struct SelectionLedger {
    Strategy strategy = Strategy::S0_random;
    Budget budget;
    SelectionOptions options;
    std::size_t pool_size = 0;
    std::size_t eligible = 0;              // after the quality gate
    std::optional<double> quality_cutoff;  // lowest gated quality (S2/S3)
    std::vector<PoolEntry> selected;       // in rank order
};

/// Full ranking of pool indices for a strategy. S2/S3 rankings cover the
/// gated pool only; S0 is a seeded permutation.
std::vector<std::size_t> rank_pool(const std::vector<PoolEntry>& pool, Strategy s,
                                   const SelectionOptions& opts);

SelectionLedger select(const std::vector<PoolEntry>& pool, Strategy s, const Budget& budget,
                       const SelectionOptions& opts = {});

/// S1–S3 subsets are prefixes of one ranking and therefore nested. S0 draws
/// independently per fraction from seed + fraction position.
std::vector<SelectionLedger> budget_sweep(const std::vector<PoolEntry>& pool,
                                          const std::vector<Strategy>& strategies,
                                          const std::vector<double>& fractions,
                                          const SelectionOptions& opts = {});

/// Fisher–Yates driven by mt19937_64 with rejection sampling, so the
/// permutation is identical on every platform.
std::vector<std::size_t> seeded_permutation(std::size_t n, std::uint64_t seed);

std::filesystem::path selection_file(const std::filesystem::path& dir, const SelectionLedger& l);
void write_selection_jsonl(const SelectionLedger& l, const std::filesystem::path& path);
std::vector<std::string> read_selection_ids(const std::filesystem::path& path);

void write_mech_scores_jsonl(const std::vector<SampleMeta>& samples, const std::vector<double>& scores,
                             const std::filesystem::path& path);
std::map<std::string, double> read_mech_scores_jsonl(const std::filesystem::path& path);

}  // namespace initfeat
