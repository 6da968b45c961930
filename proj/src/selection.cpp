#include "initfeat/selection.hpp"

#include "initfeat/parallel.hpp"
#include "initfeat/random.hpp"
#include "initfeat/ratio.hpp"
#include "initfeat/report.hpp"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <set>

namespace initfeat {

namespace fs = std::filesystem;

Strategy parse_strategy(std::string_view s) {
    for (Strategy st : kAllStrategies) {
        const std::string_view full = to_string(st);
        if (s == full || s == full.substr(0, 2)) return st;
    }
    throw UsageError(fmt::format("unknown selection strategy '{}' (S0|S1|S2|S3)", s));
}

std::string_view to_string(Strategy s) {
    switch (s) {
        case Strategy::S0_random: return "S0_random";
        case Strategy::S1_high_quality: return "S1_high_quality";
        case Strategy::S2_high_loss: return "S2_high_loss";
        case Strategy::S3_mechanistic: return "S3_mechanistic";
    }
    return "?";
}

ScoreAggregator parse_aggregator(std::string_view s) {
    if (s == "mean") return ScoreAggregator::mean;
    if (s == "sum") return ScoreAggregator::sum;
    if (s == "min") return ScoreAggregator::min;
    throw UsageError(fmt::format("unknown score aggregator '{}' (mean|sum|min)", s));
}

std::string_view to_string(ScoreAggregator a) {
    switch (a) {
        case ScoreAggregator::mean: return "mean";
        case ScoreAggregator::sum: return "sum";
        case ScoreAggregator::min: return "min";
    }
    return "?";
}

// ---------------------------------------------------------------------------
// Mechanistic score

namespace {

struct LayerScorer {
    int layer;
    std::vector<std::size_t> slots;  // position of each encoder feature in the final set
    SubsetEncoder encoder;
};

std::vector<LayerScorer> make_scorers(const ActivationDataset& ds, const std::map<int, SaeParams>& saes,
                                      const FinalFeatureSet& final_set) {
    if (final_set.features.empty()) throw DataError("mechanistic score: final feature set is empty");
    std::map<int, std::vector<std::pair<std::uint32_t, std::size_t>>> by_layer;
    for (std::size_t i = 0; i < final_set.features.size(); ++i) {
        const FeatureId& f = final_set.features[i].feature;
        by_layer[f.layer].emplace_back(f.index, i);
    }
    std::vector<LayerScorer> out;
    for (auto& [layer, items] : by_layer) {
        auto it = saes.find(layer);
        if (it == saes.end()) throw DataError(fmt::format("mechanistic score: no SAE for layer {}", layer));
        if (!ds.has_layer(layer))
            throw DataError(fmt::format("mechanistic score: dataset has no activations for layer {}", layer));
        std::vector<std::uint32_t> idx;
        std::vector<std::size_t> slots;
        for (auto [j, slot] : items) {
            if (j >= it->second.d_sae)
                throw DataError(fmt::format("feature l{}_f{} out of range", layer, j));
            idx.push_back(j);
            slots.push_back(slot);
        }
        out.push_back({layer, std::move(slots), SubsetEncoder(it->second, std::move(idx))});
    }
    return out;
}

double score_one(const ActivationDataset& ds, const std::vector<LayerScorer>& scorers, std::size_t n_features,
                 std::size_t sample, ScoreAggregator agg) {
    std::vector<double> per_feature(n_features, 0.0);
    for (const auto& sc : scorers) {
        for (Position p : kAllPositions) {
            const std::vector<double> a = sc.encoder.encode(ds.hidden(sample, sc.layer, p));
            for (std::size_t k = 0; k < a.size(); ++k)
                per_feature[sc.slots[k]] = std::max(per_feature[sc.slots[k]], a[k]);
        }
    }
    switch (agg) {
        case ScoreAggregator::min: return *std::min_element(per_feature.begin(), per_feature.end());
        case ScoreAggregator::sum: return std::accumulate(per_feature.begin(), per_feature.end(), 0.0);
        case ScoreAggregator::mean:
            return std::accumulate(per_feature.begin(), per_feature.end(), 0.0) /
                   static_cast<double>(n_features);
    }
    return 0.0;
}

}  // namespace

double mechanistic_score(const ActivationDataset& ds, const std::map<int, SaeParams>& saes,
                         const FinalFeatureSet& final_set, std::size_t sample, ScoreAggregator agg) {
    if (sample >= ds.num_samples()) throw DataError(fmt::format("sample index {} out of range", sample));
    const auto scorers = make_scorers(ds, saes, final_set);
    return score_one(ds, scorers, final_set.features.size(), sample, agg);
}

std::vector<double> mechanistic_scores(const ActivationDataset& ds, const std::map<int, SaeParams>& saes,
                                       const FinalFeatureSet& final_set, ScoreAggregator agg,
                                       unsigned threads) {
    const auto scorers = make_scorers(ds, saes, final_set);
    std::vector<double> out(ds.num_samples());
    parallel_for(out.size(), threads, [&](std::size_t b, std::size_t e, std::size_t) {
        for (std::size_t i = b; i < e; ++i) out[i] = score_one(ds, scorers, final_set.features.size(), i, agg);
    });
    return out;
}

// ---------------------------------------------------------------------------
// Pool and budget

std::vector<PoolEntry> make_pool(const std::vector<SampleMeta>& samples,
                                 const std::map<std::string, double>& mech_scores) {
    std::vector<PoolEntry> pool;
    pool.reserve(samples.size());
    for (const auto& s : samples) {
        PoolEntry e{s.id, s.quality, s.loss, std::nullopt};
        if (auto it = mech_scores.find(s.id); it != mech_scores.end()) e.mech_score = it->second;
        pool.push_back(std::move(e));
    }
    return pool;
}

Budget Budget::of_count(std::size_t k) {
    Budget b;
    b.kind = Kind::count;
    b.count = k;
    return b;
}

Budget Budget::of_fraction(double f) {
    if (!(f > 0.0 && f <= 1.0)) throw UsageError(fmt::format("budget fraction must be in (0, 1], got {}", f));
    Budget b;
    b.kind = Kind::fraction;
    b.fraction = f;
    return b;
}

Budget Budget::parse(std::string_view s) {
    if (s.find_first_of(".eE") != std::string_view::npos) {
        double f = 0.0;
        auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), f);
        if (ec != std::errc() || p != s.data() + s.size()) throw UsageError(fmt::format("bad budget '{}'", s));
        return of_fraction(f);
    }
    std::size_t k = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), k);
    if (ec != std::errc() || p != s.data() + s.size() || k == 0)
        throw UsageError(fmt::format("bad budget '{}' (positive count or fraction in (0, 1])", s));
    return of_count(k);
}

std::size_t Budget::resolve(std::size_t n) const {
    if (kind == Kind::count) return count;
    return std::max<std::size_t>(1, DecimalRatio::from_double(fraction).floor_times(n));
}

std::string Budget::tag() const {
    if (kind == Kind::count) return std::to_string(count);
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), fraction);
    std::string s(buf, res.ptr);
    if (s.find_first_of(".e") == std::string::npos) s += ".0";
    return s;
}

// ---------------------------------------------------------------------------
// Rankings

std::vector<std::size_t> seeded_permutation(std::size_t n, std::uint64_t seed) {
    return Rng(seed).permutation(n);
}

namespace {

void require(const std::vector<PoolEntry>& pool, Strategy s, const char* field,
             std::optional<double> PoolEntry::*member) {
    for (const auto& e : pool)
        if (!(e.*member))
            throw DataError(fmt::format("strategy {} needs '{}' but sample '{}' has none", to_string(s),
                                        field, e.id));
}

// Descending by key, ties by id ascending.
void sort_desc(std::vector<std::size_t>& idx, const std::vector<PoolEntry>& pool,
               std::optional<double> PoolEntry::*member) {
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
        const double ka = *(pool[a].*member), kb = *(pool[b].*member);
        if (ka != kb) return ka > kb;
        return pool[a].id < pool[b].id;
    });
}

void sort_asc(std::vector<std::size_t>& idx, const std::vector<PoolEntry>& pool,
              std::optional<double> PoolEntry::*member) {
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
        const double ka = *(pool[a].*member), kb = *(pool[b].*member);
        if (ka != kb) return ka < kb;
        return pool[a].id < pool[b].id;
    });
}

void check_pool(const std::vector<PoolEntry>& pool) {
    if (pool.empty()) throw DataError("selection pool is empty");
    std::set<std::string_view> seen;
    for (const auto& e : pool)
        if (!seen.insert(e.id).second) throw DataError(fmt::format("duplicate sample id '{}' in pool", e.id));
}

std::size_t gate_size(std::size_t n, double gate) {
    if (!(gate > 0.0 && gate <= 1.0))
        throw UsageError(fmt::format("quality gate must be in (0, 1], got {}", gate));
    return std::max<std::size_t>(1, DecimalRatio::from_double(gate).ceil_times(n));
}

}  // namespace

std::vector<std::size_t> rank_pool(const std::vector<PoolEntry>& pool, Strategy s,
                                   const SelectionOptions& opts) {
    check_pool(pool);
    std::vector<std::size_t> idx(pool.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    switch (s) {
        case Strategy::S0_random: {
            // Permute an id-sorted view so the draw ignores input order.
            std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return pool[a].id < pool[b].id; });
            const auto perm = seeded_permutation(idx.size(), opts.seed);
            std::vector<std::size_t> out(idx.size());
            for (std::size_t i = 0; i < idx.size(); ++i) out[i] = idx[perm[i]];
            return out;
        }
        case Strategy::S1_high_quality:
            require(pool, s, "quality", &PoolEntry::quality);
            sort_desc(idx, pool, &PoolEntry::quality);
            return idx;
        case Strategy::S2_high_loss:
        case Strategy::S3_mechanistic: {
            require(pool, s, "quality", &PoolEntry::quality);
            if (s == Strategy::S2_high_loss)
                require(pool, s, "loss", &PoolEntry::loss);
            else
                require(pool, s, "mech_score", &PoolEntry::mech_score);
            sort_desc(idx, pool, &PoolEntry::quality);
            idx.resize(gate_size(pool.size(), opts.quality_gate));
            if (s == Strategy::S2_high_loss)
                sort_desc(idx, pool, &PoolEntry::loss);
            else
                sort_asc(idx, pool, &PoolEntry::mech_score);
            return idx;
        }
    }
    return idx;
}

SelectionLedger select(const std::vector<PoolEntry>& pool, Strategy s, const Budget& budget,
                       const SelectionOptions& opts) {
    const std::vector<std::size_t> order = rank_pool(pool, s, opts);
    SelectionLedger l;
    l.strategy = s;
    l.budget = budget;
    l.options = opts;
    l.pool_size = pool.size();
    l.eligible = order.size();
    if (s == Strategy::S2_high_loss || s == Strategy::S3_mechanistic) {
        double cutoff = std::numeric_limits<double>::infinity();
        for (std::size_t i : order) cutoff = std::min(cutoff, *pool[i].quality);
        l.quality_cutoff = cutoff;
    }
    std::size_t k = budget.resolve(pool.size());
    if (k > pool.size()) {
        spdlog::warn("{}: budget {} exceeds pool of {}; taking the whole pool", to_string(s), k, pool.size());
        k = pool.size();
    }
    if (k > order.size()) {
        spdlog::warn("{}: budget {} exceeds the {} samples passing the quality gate; taking all of them",
                     to_string(s), k, order.size());
        k = order.size();
    }
    for (std::size_t r = 0; r < k; ++r) l.selected.push_back(pool[order[r]]);
    return l;
}

std::vector<SelectionLedger> budget_sweep(const std::vector<PoolEntry>& pool,
                                          const std::vector<Strategy>& strategies,
                                          const std::vector<double>& fractions,
                                          const SelectionOptions& opts) {
    std::vector<SelectionLedger> out;
    for (Strategy s : strategies) {
        for (std::size_t i = 0; i < fractions.size(); ++i) {
            SelectionOptions o = opts;
            if (s == Strategy::S0_random) o.seed = opts.seed + i;
            out.push_back(select(pool, s, Budget::of_fraction(fractions[i]), o));
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Files

fs::path selection_file(const fs::path& dir, const SelectionLedger& l) {
    return dir / fmt::format("selection_{}_{}.jsonl", to_string(l.strategy), l.budget.tag());
}

void write_selection_jsonl(const SelectionLedger& l, const fs::path& path) {
    std::string text;
    for (std::size_t r = 0; r < l.selected.size(); ++r) {
        const PoolEntry& e = l.selected[r];
        ojson j;
        j["id"] = e.id;
        j["rank"] = r;
        if (e.quality) j["quality"] = sig9(*e.quality);
        if (e.loss) j["loss"] = sig9(*e.loss);
        if (e.mech_score) j["mech_score"] = sig9(*e.mech_score);
        text += j.dump();
        text += '\n';
    }
    write_text_file(path, text);
}

std::vector<std::string> read_selection_ids(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError(fmt::format("cannot open '{}'", path.string()));
    std::vector<std::string> ids;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        ids.push_back(ojson::parse(line).at("id").get<std::string>());
    }
    return ids;
}

void write_mech_scores_jsonl(const std::vector<SampleMeta>& samples, const std::vector<double>& scores,
                             const fs::path& path) {
    if (samples.size() != scores.size())
        throw DataError(fmt::format("{} samples but {} scores", samples.size(), scores.size()));
    std::string text;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        ojson j;
        j["id"] = samples[i].id;
        j["mech_score"] = sig9(scores[i]);
        text += j.dump();
        text += '\n';
    }
    write_text_file(path, text);
}

std::map<std::string, double> read_mech_scores_jsonl(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError(fmt::format("cannot open mechanistic scores '{}'", path.string()));
    std::map<std::string, double> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            const auto j = ojson::parse(line);
            const double v = j.at("mech_score").get<double>();
            if (!std::isfinite(v) || v < 0.0) throw DataError("mech_score must be finite and >= 0");
            if (!out.emplace(j.at("id").get<std::string>(), v).second) throw DataError("duplicate id");
        } catch (const std::exception& e) {
            throw DataError(fmt::format("{}:{}: {}", path.string(), lineno, e.what()));
        }
    }
    return out;
}

}  // namespace initfeat
