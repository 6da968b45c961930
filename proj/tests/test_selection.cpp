#include "initfeat/selection.hpp"
#include "initfeat/synth.hpp"

#include "support.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

using namespace initfeat;

namespace {

std::vector<PoolEntry> random_pool(std::uint64_t seed, std::size_t n, bool ties = false) {
    Rng rng(seed);
    std::vector<PoolEntry> pool(n);
    for (std::size_t i = 0; i < n; ++i) {
        pool[i].id = "x" + std::to_string(n - i);  // ids not in pool order
        auto draw = [&] { return ties ? std::floor(rng.uniform() * 5) / 5 : rng.uniform(); };
        pool[i].quality = draw();
        pool[i].loss = draw() * 4;
        pool[i].mech_score = draw() * 2;
    }
    return pool;
}

std::vector<std::string> ids_of(const SelectionLedger& l) {
    std::vector<std::string> out;
    for (const auto& e : l.selected) out.push_back(e.id);
    return out;
}

// Reference: sort a copy by the strategy key with explicit comparisons.
std::vector<std::string> brute(const std::vector<PoolEntry>& pool, Strategy s, std::size_t k, double gate) {
    std::vector<PoolEntry> v = pool;
    auto by_quality = [](const PoolEntry& a, const PoolEntry& b) {
        if (*a.quality != *b.quality) return *a.quality > *b.quality;
        return a.id < b.id;
    };
    std::sort(v.begin(), v.end(), by_quality);
    if (s == Strategy::S2_high_loss || s == Strategy::S3_mechanistic) {
        const auto g = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(gate * pool.size() - 1e-12)));
        v.resize(g);
        if (s == Strategy::S2_high_loss)
            std::sort(v.begin(), v.end(), [](const PoolEntry& a, const PoolEntry& b) {
                if (*a.loss != *b.loss) return *a.loss > *b.loss;
                return a.id < b.id;
            });
        else
            std::sort(v.begin(), v.end(), [](const PoolEntry& a, const PoolEntry& b) {
                if (*a.mech_score != *b.mech_score) return *a.mech_score < *b.mech_score;
                return a.id < b.id;
            });
    }
    std::vector<std::string> out;
    for (std::size_t i = 0; i < std::min(k, v.size()); ++i) out.push_back(v[i].id);
    return out;
}

}  // namespace

TEST_CASE("S1-S3 match a brute-force sort") {
    for (bool ties : {false, true}) {
        const auto pool = random_pool(ties ? 2 : 1, 200, ties);
        for (Strategy s : {Strategy::S1_high_quality, Strategy::S2_high_loss, Strategy::S3_mechanistic})
            for (std::size_t k : {1u, 10u, 50u, 100u}) {
                CAPTURE(to_string(s));
                CAPTURE(k);
                CHECK(ids_of(select(pool, s, Budget::of_count(k))) == brute(pool, s, k, 0.5));
            }
    }
}

TEST_CASE("quality gate keeps the top half by quality") {
    const auto pool = random_pool(3, 101);
    const auto l = select(pool, Strategy::S3_mechanistic, Budget::of_count(20));
    CHECK(l.eligible == 51);
    REQUIRE(l.quality_cutoff);
    for (const auto& e : l.selected) CHECK(*e.quality >= *l.quality_cutoff);
    std::size_t above = 0;
    for (const auto& e : pool) above += *e.quality >= *l.quality_cutoff;
    CHECK(above == 51);
    // Scores ascend along the selection.
    for (std::size_t i = 1; i < l.selected.size(); ++i)
        CHECK(*l.selected[i - 1].mech_score <= *l.selected[i].mech_score);
}

TEST_CASE("sweep subsets are nested for ranked strategies") {
    const auto pool = random_pool(4, 120);
    const std::vector<double> fr{0.05, 0.1, 0.2, 0.4};
    const auto sweep = budget_sweep(pool, {Strategy::S1_high_quality, Strategy::S2_high_loss, Strategy::S3_mechanistic},
                                    fr);
    REQUIRE(sweep.size() == 12);
    for (std::size_t s = 0; s < 3; ++s)
        for (std::size_t f = 1; f < fr.size(); ++f) {
            const auto small = ids_of(sweep[s * fr.size() + f - 1]);
            const auto big = ids_of(sweep[s * fr.size() + f]);
            CHECK(std::equal(small.begin(), small.end(), big.begin()));
        }
    CHECK(sweep[0].selected.size() == 6);
    CHECK(sweep[3].selected.size() == 48);
}

TEST_CASE("S0 is reproducible per seed and covers the pool") {
    const auto pool = random_pool(5, 60);
    SelectionOptions a, b;
    a.seed = b.seed = 42;
    CHECK(ids_of(select(pool, Strategy::S0_random, Budget::of_count(15), a)) ==
          ids_of(select(pool, Strategy::S0_random, Budget::of_count(15), b)));
    b.seed = 43;
    CHECK(ids_of(select(pool, Strategy::S0_random, Budget::of_count(15), a)) !=
          ids_of(select(pool, Strategy::S0_random, Budget::of_count(15), b)));
    auto reversed = pool;
    std::reverse(reversed.begin(), reversed.end());
    CHECK(ids_of(select(pool, Strategy::S0_random, Budget::of_count(15), a)) ==
          ids_of(select(reversed, Strategy::S0_random, Budget::of_count(15), a)));
    const auto all = ids_of(select(pool, Strategy::S0_random, Budget::of_fraction(1.0), a));
    CHECK(std::set<std::string>(all.begin(), all.end()).size() == 60);

    const auto perm = seeded_permutation(1000, 7);
    std::vector<std::size_t> sorted = perm;
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t i = 0; i < 1000; ++i) CHECK(sorted[i] == i);
    CHECK(perm == seeded_permutation(1000, 7));
}

TEST_CASE("budgets") {
    CHECK(Budget::parse("100").resolve(1000) == 100);
    CHECK(Budget::parse("0.2").resolve(98) == 19);
    CHECK(Budget::parse("0.6").resolve(98) == 58);
    CHECK(Budget::parse("1e-3").resolve(98) == 1);
    CHECK(Budget::parse("0.1").resolve(30) == 3);
    CHECK(Budget::parse("0.2").tag() == "0.2");
    CHECK(Budget::parse("25").tag() == "25");
    CHECK_THROWS_AS(Budget::parse("0"), UsageError);
    CHECK_THROWS_AS(Budget::parse("1.5"), UsageError);
    CHECK_THROWS_AS(Budget::parse("ten"), UsageError);
    const auto pool = random_pool(6, 10);
    CHECK(select(pool, Strategy::S1_high_quality, Budget::of_count(50)).selected.size() == 10);
    CHECK(select(pool, Strategy::S2_high_loss, Budget::of_count(50)).selected.size() == 5);
}

TEST_CASE("missing fields name the strategy") {
    auto pool = random_pool(7, 8);
    pool[3].mech_score.reset();
    CHECK_THROWS_WITH_AS(select(pool, Strategy::S3_mechanistic, Budget::of_count(2)), doctest::Contains("S3"),
                         DataError);
    CHECK_NOTHROW(select(pool, Strategy::S2_high_loss, Budget::of_count(2)));
    pool[1].quality.reset();
    CHECK_THROWS_AS(select(pool, Strategy::S1_high_quality, Budget::of_count(2)), DataError);
    CHECK_NOTHROW(select(pool, Strategy::S0_random, Budget::of_count(2)));
}

TEST_CASE("strategy and aggregator names") {
    for (Strategy s : kAllStrategies) CHECK(parse_strategy(to_string(s)) == s);
    CHECK(parse_strategy("S3") == Strategy::S3_mechanistic);
    CHECK_THROWS_AS(parse_strategy("S4"), UsageError);
    CHECK(parse_aggregator("min") == ScoreAggregator::min);
}

TEST_CASE("mechanistic score: max over positions then aggregate") {
    SaeParams p;
    p.layer = 0;
    p.d_model = 2;
    p.d_sae = 2;
    p.w_enc = {1, 0, 0, 1};
    p.b_enc = {0, 0};
    p.theta = {0, 0};
    p.w_dec = {1, 0, 0, 1};
    p.b_dec = {0, 0};
    DatasetManifest m;
    m.d_model = 2;
    m.layers = {0};
    m.num_samples = 1;
    // Feature 0 peaks at 0.5, feature 1 at 2.0 → mean 1.25 (feature 0 alone → 0.5).
    std::vector<float> h{0.5f, 0.0f, 0.1f, 2.0f, 0.2f, 1.0f};
    std::map<int, Tensor> t;
    t.emplace(0, Tensor({1, 3, 2}, h));
    SampleMeta only;
    only.id = "a";
    ActivationDataset ds(m, {only}, std::move(t));
    std::map<int, SaeParams> saes{{0, p}};
    FinalFeatureSet fs;
    fs.features = {{{0, 0}, 1, 1}, {{0, 1}, 1, 1}};
    CHECK(mechanistic_score(ds, saes, fs, 0) == doctest::Approx(1.25));
    CHECK(mechanistic_score(ds, saes, fs, 0, ScoreAggregator::sum) == doctest::Approx(2.5));
    CHECK(mechanistic_score(ds, saes, fs, 0, ScoreAggregator::min) == doctest::Approx(0.5));
    fs.features = {{{0, 1}, 1, 1}};
    CHECK(mechanistic_score(ds, saes, fs, 0) == doctest::Approx(2.0));
    CHECK_THROWS_AS(mechanistic_score(ds, saes, FinalFeatureSet{}, 0), DataError);
}

TEST_CASE("mechanistic scores agree with a direct recount on synth data") {
    SynthConfig c;
    c.d_model = 24;
    c.d_sae = 64;
    c.layers = {0, 1};
    c.n_samples = 50;
    c.planted = {{0, 2, 0.6}, {0, 7, 0.6}, {1, 4, 0.5}};
    c.distractors = 10;
    const SynthResult r = generate(c);
    FinalFeatureSet fs;
    for (const auto& id : r.truth.final_set) fs.features.push_back({id, 1, 1});
    const auto one = mechanistic_scores(r.dataset, r.saes, fs, ScoreAggregator::mean, 1);
    const auto many = mechanistic_scores(r.dataset, r.saes, fs, ScoreAggregator::mean, 5);
    CHECK(one == many);
    for (std::size_t s = 0; s < r.dataset.num_samples(); ++s) {
        double sum = 0;
        for (const auto& id : r.truth.final_set) {
            double best = 0;
            for (Position pos : kAllPositions)
                best = std::max(best, encode(r.saes.at(id.layer), r.dataset.hidden(s, id.layer, pos))[id.index]);
            sum += best;
        }
        CHECK(one[s] == doctest::Approx(sum / 3).epsilon(1e-12));
    }
}

TEST_CASE("selection and score files round trip") {
    testsupport::TempDir dir("sel");
    const auto pool = random_pool(8, 30);
    const auto l = select(pool, Strategy::S2_high_loss, Budget::of_fraction(0.2));
    const auto path = selection_file(dir.path(), l);
    CHECK(path.filename() == "selection_S2_high_loss_0.2.jsonl");
    write_selection_jsonl(l, path);
    CHECK(read_selection_ids(path) == ids_of(l));

    std::vector<SampleMeta> samples(3);
    samples[0].id = "a";
    samples[1].id = "b";
    samples[2].id = "c";
    write_mech_scores_jsonl(samples, {0.25, 1.5, 0.0}, dir.path() / "mech.jsonl");
    const auto back = read_mech_scores_jsonl(dir.path() / "mech.jsonl");
    CHECK(back.at("b") == 1.5);
    const auto p2 = make_pool(samples, back);
    CHECK(*p2[2].mech_score == 0.0);
    CHECK_FALSE(p2[0].quality.has_value());
}
