// One PASS/FAIL line per acceptance criterion; exit status 1 if any fails.

#include "initfeat/cli.hpp"
#include "initfeat/consistency.hpp"
#include "initfeat/evalstats.hpp"
#include "initfeat/influence.hpp"
#include "initfeat/intervene.hpp"
#include "initfeat/recall.hpp"
#include "initfeat/report.hpp"
#include "initfeat/sae.hpp"
#include "initfeat/selection.hpp"
#include "initfeat/synth.hpp"

#include "oracles/oracles.hpp"
#include "support.hpp"

#include <fmt/core.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <numeric>
#include <sstream>

using namespace initfeat;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool ok = true;
    std::string detail;

    void require(bool cond, const std::string& what) {
        if (!cond && ok) {
            ok = false;
            detail = what;
        }
    }
};

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

double norm(const std::vector<double>& v) {
    return std::sqrt(std::inner_product(v.begin(), v.end(), v.begin(), 0.0));
}

// ---------------------------------------------------------------------------

Outcome planted_recovery() {
    Outcome o;
    const auto t0 = std::chrono::steady_clock::now();
    const SynthResult r = generate(acceptance_fixture_config());
    RecallOptions ro;
    ro.threads = 1;
    const RecallReport rep = recall_features(r.dataset, r.saes, 0.6, ro);
    std::vector<InfluenceDirection> dirs;
    for (const auto& lr : rep.layers)
        for (const auto& ci : canonical_influences(r.saes.at(lr.layer), r.dataset, lr.recalled))
            dirs.push_back({ci.feature, ci.direction});
    const auto res = filter_features(dirs);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    o.require(res.final_set.ids() == r.truth.final_set,
              fmt::format("{} features selected, expected the 6 planted", res.final_set.features.size()));
    o.require(r.truth.final_set.size() == 6, "fixture does not plant 6 features");
    o.require(secs < 10.0, fmt::format("took {:.2f} s", secs));
    if (o.ok) o.detail = fmt::format("6/6 planted, {:.3f} s", secs);
    return o;
}

Outcome pca_oracle() {
    Outcome o;
    Rng rng(20250101);
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t n = 2 + rng.below(15), d = 2 + rng.below(31);
        std::vector<std::vector<double>> g(n, std::vector<double>(d));
        for (auto& v : g)
            for (double& x : v) x = rng.normal();
        const auto spec = oracle::pca_spectrum(g);
        const double err = std::abs(pca_consistency(g).rho - spec.front());
        worst = std::max(worst, err);
        o.require(err <= 1e-8, fmt::format("trial {}: |rho - oracle| = {:.3g}", trial, err));
        const double sum = std::accumulate(spec.begin(), spec.end(), 0.0);
        o.require(std::abs(sum - 1.0) <= 1e-6, fmt::format("trial {}: eigenvalue sum {}", trial, sum));
    }
    for (std::size_t n = 2; n <= 16; ++n) {
        std::vector<double> u(12);
        for (double& x : u) x = rng.normal();
        const double same = pca_consistency(std::vector<std::vector<double>>(n, u)).rho;
        o.require(std::abs(same - 1.0) <= 1e-9, fmt::format("identical n={}: rho = {}", n, same));
        std::vector<std::vector<double>> e(n, std::vector<double>(16, 0.0));
        for (std::size_t i = 0; i < n; ++i) e[i][i] = 1.0;
        const double orth = pca_consistency(e).rho;
        o.require(std::abs(orth - 1.0 / static_cast<double>(n)) <= 1e-9,
                  fmt::format("orthonormal n={}: rho = {}", n, orth));
    }
    if (o.ok) o.detail = fmt::format("100 groups, max error {:.2g}", worst);
    return o;
}

Outcome influence_collinearity() {
    Outcome o;
    double worst_cos = 1.0, worst_rel = 0.0;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        const SaeParams p = testsupport::random_sae(seed, 24, 96);
        Rng rng(seed * 101);
        for (std::uint32_t j : {0u, 17u, 50u, 95u}) {
            std::vector<std::vector<double>> vs;
            for (int t = 0; t < 10; ++t) {
                const auto h = testsupport::random_vec(rng, 24);
                const double alpha = 8.0;
                const auto v = influence_vector(p, std::span<const float>(h), j, alpha);
                const auto a = oracle::encode(p.w_enc, p.b_enc, p.theta, 24, 96, h.data());
                std::vector<double> lin(24);
                for (std::size_t i = 0; i < 24; ++i) lin[i] = (alpha - a[j]) * p.w_dec[j * 24 + i];
                double dev = 0.0;
                for (std::size_t i = 0; i < 24; ++i) dev = std::max(dev, std::abs(v[i] - lin[i]));
                const double rel = dev / norm(lin);
                worst_rel = std::max(worst_rel, rel);
                o.require(rel <= 1e-6, fmt::format("seed {} feature {}: relative deviation {:.3g}", seed, j, rel));
                vs.push_back(v);
            }
            for (std::size_t a = 0; a < vs.size(); ++a)
                for (std::size_t b = a + 1; b < vs.size(); ++b) {
                    const double c = std::abs(oracle::cosine(vs[a], vs[b]));
                    worst_cos = std::min(worst_cos, c);
                    o.require(c >= 1 - 1e-6, fmt::format("seed {} feature {}: |cos| = {}", seed, j, c));
                }
        }
    }
    if (o.ok) o.detail = fmt::format("min |cos| 1-{:.2g}, max rel dev {:.2g}", 1 - worst_cos, worst_rel);
    return o;
}

Outcome intervention() {
    Outcome o;
    SaeParams p = testsupport::random_sae(7, 32, 128, 3);
    p.b_enc[100] = -1000.0f;  // never active
    Rng rng(8);
    std::vector<FeatureId> feats;
    for (std::uint32_t j : {1u, 9u, 40u, 77u, 100u}) feats.push_back({3, j});
    double worst = 0.0;
    for (int t = 0; t < 200; ++t) {
        const auto h = testsupport::random_vec(rng, 32);
        std::vector<double> hd(h.begin(), h.end());
        const auto same = patch_hidden(p, std::span<const float>(h), {feats, 1.0});
        o.require(same == hd, "c = 1 changed h");
        const auto base = patch_hidden(p, std::span<const float>(h), {feats, 2.0});
        for (double c : {0.0, 0.5, 3.0, 5.0}) {
            const auto out = patch_hidden(p, std::span<const float>(h), {feats, c});
            for (std::size_t i = 0; i < 32; ++i) {
                const double err = std::abs(out[i] - (hd[i] + (c - 1) * (base[i] - hd[i])));
                worst = std::max(worst, err);
                o.require(err <= 1e-7, fmt::format("c = {}: linearity error {:.3g}", c, err));
            }
        }
        const auto ablated = patch_hidden(p, std::span<const float>(h), {{{3, 100}}, 0.0});
        o.require(ablated == hd, "ablating an inactive feature changed h");
    }
    if (o.ok) o.detail = fmt::format("200 states, max linearity error {:.2g}", worst);
    return o;
}

Outcome jumprelu_gate() {
    Outcome o;
    // One-feature SAE with unit encoder: the pre-activation is exactly h.
    SaeParams p;
    p.d_model = 1;
    p.d_sae = 1;
    p.w_enc = {1.0f};
    p.b_enc = {0.0f};
    p.w_dec = {1.0f};
    p.b_dec = {0.0f};
    Rng rng(9);
    std::size_t ties = 0;
    for (int t = 0; t < 10000; ++t) {
        const float theta = static_cast<float>(rng.uniform(-1.0, 1.0));
        float z = static_cast<float>(rng.uniform(-1.5, 1.5));
        if (t % 10 == 0) {
            z = theta;
            ++ties;
        }
        p.theta = {theta};
        const double a = encode(p, std::span<const float>(&z, 1))[0];
        const double want = z > theta ? static_cast<double>(z) : 0.0;
        o.require(a == want, fmt::format("z = {}, theta = {}: got {}", z, theta, a));
    }
    if (o.ok) o.detail = fmt::format("10000 pairs, {} exact ties", ties);
    return o;
}

Outcome selection_oracle() {
    Outcome o;
    Rng rng(10);
    std::vector<PoolEntry> pool(200);
    for (std::size_t i = 0; i < pool.size(); ++i) {
        pool[i].id = fmt::format("q{:03}", (i * 37) % 200);
        // Coarse values so ties are common.
        pool[i].quality = std::floor(rng.uniform() * 20) / 20;
        pool[i].loss = std::floor(rng.uniform() * 10) / 2;
        pool[i].mech_score = std::floor(rng.uniform() * 8) / 4;
    }
    auto oracle_rank = [&](Strategy s) {
        std::vector<PoolEntry> v = pool;
        std::sort(v.begin(), v.end(), [](const PoolEntry& a, const PoolEntry& b) {
            return *a.quality != *b.quality ? *a.quality > *b.quality : a.id < b.id;
        });
        if (s == Strategy::S1_high_quality) return v;
        v.resize(100);
        if (s == Strategy::S2_high_loss)
            std::sort(v.begin(), v.end(), [](const PoolEntry& a, const PoolEntry& b) {
                return *a.loss != *b.loss ? *a.loss > *b.loss : a.id < b.id;
            });
        else
            std::sort(v.begin(), v.end(), [](const PoolEntry& a, const PoolEntry& b) {
                return *a.mech_score != *b.mech_score ? *a.mech_score < *b.mech_score : a.id < b.id;
            });
        return v;
    };
    const std::vector<double> fractions{0.05, 0.1, 0.2, 0.35, 0.5};
    for (Strategy s : {Strategy::S1_high_quality, Strategy::S2_high_loss, Strategy::S3_mechanistic}) {
        const auto want = oracle_rank(s);
        const auto sweep = budget_sweep(pool, {s}, fractions);
        std::vector<std::string> prev;
        for (const auto& l : sweep) {
            std::vector<std::string> got;
            for (const auto& e : l.selected) got.push_back(e.id);
            for (std::size_t i = 0; i < got.size(); ++i)
                o.require(got[i] == want[i].id, fmt::format("{} rank {}: {} vs oracle {}", to_string(s), i, got[i],
                                                            want[i].id));
            o.require(std::equal(prev.begin(), prev.end(), got.begin()), fmt::format("{} sweep not nested", to_string(s)));
            prev = got;
        }
    }
    SelectionOptions so;
    so.seed = 99;
    auto ids = [](const SelectionLedger& l) {
        std::vector<std::string> v;
        for (const auto& e : l.selected) v.push_back(e.id);
        return v;
    };
    o.require(ids(select(pool, Strategy::S0_random, Budget::of_count(40), so)) ==
                  ids(select(pool, Strategy::S0_random, Budget::of_count(40), so)),
              "S0 differs between runs with one seed");
    if (o.ok) o.detail = "S1-S3 match sorted oracles with ties, nested sweeps, S0 reproducible";
    return o;
}

Outcome threshold_boundary() {
    Outcome o;
    o.require(DecimalRatio::from_double(0.6).met_by(59, 98), "59/98 not recalled by ratio");
    o.require(!DecimalRatio::from_double(0.6).met_by(58, 98), "58/98 recalled by ratio");
    // Identity SAE on a 98-sample dataset: feature 0 present in 59 samples, feature 1 in 58.
    SaeParams p;
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
    m.num_samples = 98;
    std::vector<SampleMeta> samples(98);
    std::vector<float> h(98 * 3 * 2, 0.0f);
    for (std::size_t s = 0; s < 98; ++s) {
        samples[s].id = fmt::format("b{}", s);
        const std::size_t pos = s % 3;
        if (s < 59) h[(s * 3 + pos) * 2 + 0] = 1.0f;
        if (s >= 40) h[(s * 3 + (2 - pos)) * 2 + 1] = 1.0f;
    }
    std::map<int, Tensor> t;
    t.emplace(0, Tensor({98, 3, 2}, h));
    const ActivationDataset ds(m, samples, std::move(t));
    const auto rep = recall_features(ds, {{0, p}}, 0.6);
    const auto& l = rep.layers.at(0);
    o.require(l.presence.at(0) == 59 && l.presence.at(1) == 58, "presence counts are not 59 and 58");
    o.require(l.recalled == std::vector<std::uint32_t>{0}, "recall did not keep exactly the 59/98 feature");
    if (o.ok) o.detail = "59/98 recalled, 58/98 not";
    return o;
}

Outcome evalstats_replay() {
    Outcome o;
    testsupport::TempDir dir("acceptance_judge");
    // 16 flag combinations, one unknown-language reply, one empty output.
    std::vector<SampleMeta> samples;
    for (int i = 0; i < 18; ++i) {
        SampleMeta s;
        s.id = fmt::format("j{}", i);
        s.source_text = fmt::format("Sentence number {}.", i);
        s.source_lang = "en";
        s.target_lang = "zh-CN";
        s.output_text = i == 17 ? "" : fmt::format("第{}句。", i);
        samples.push_back(s);
    }
    auto reply_for = [](int i, Detector d) -> std::string {
        if (i == 16) return d == Detector::language ? "unknown" : "0";
        switch (d) {
            case Detector::irrelevant: return i & 1 ? "1" : "0";
            case Detector::untranslated: return i & 2 ? "1" : "0";
            case Detector::repetition: return i & 4 ? "1" : "0";
            case Detector::language: return i & 8 ? "en" : "zh";
        }
        return "";
    };
    {
        std::ofstream rp(dir.path() / "replay.jsonl");
        for (int i = 0; i < 17; ++i)
            for (Detector d : kAllDetectors) {
                const JudgeRequest req{"judge", render_judge_prompt(d, samples[i])};
                rp << ojson{{"hash", req.hash()}, {"reply", reply_for(i, d)}}.dump() << "\n";
            }
    }
    ReplayTransport replay(dir.path() / "replay.jsonl");
    const auto verdicts = judge_samples(replay, samples);
    for (int i = 0; i < 16; ++i) {
        const auto& v = verdicts[i];
        const bool ok = v.flags.irrelevant == bool(i & 1) && v.flags.untranslated == bool(i & 2) &&
                        v.flags.repetition == bool(i & 4) && v.flags.wrong_language == bool(i & 8) &&
                        v.is_hallucination == (i != 0) && !v.judge_error;
        o.require(ok, fmt::format("combination {} gave the wrong verdict", i));
    }
    o.require(verdicts[16].flags.wrong_language && verdicts[16].is_hallucination, "unknown language not flagged");
    o.require(verdicts[17].empty_output && verdicts[17].is_hallucination, "empty output not short-circuited");
    const auto again = judge_samples(replay, samples, JudgeOptions{"judge", 3, std::chrono::milliseconds(1), 1});
    for (std::size_t i = 0; i < verdicts.size(); ++i)
        o.require(to_json(verdicts[i]).dump() == to_json(again[i]).dump(), "replay verdicts differ between runs");
    const auto sum = hallucination_rate(verdicts);
    o.require(sum.rate.numerator == 17 && sum.rate.denominator == 18,
              fmt::format("rate {}/{}, expected 17/18", sum.rate.numerator, sum.rate.denominator));

    const FramingTokenList zh{"zh", {"翻译", "以下是", "译文"}};
    const std::vector<std::string> zh_out{"以下是翻译：猫坐在垫子上。", "猫坐在垫子上。", "  译文：猫。", "好的。",
                                          "猫坐在垫子上，这是一个很长很长很长很长很长的句子，最后才说翻译。"};
    const Rate zr = framing_rate(zh_out, zh);
    o.require(zr.numerator == 2 && zr.denominator == 5, fmt::format("zh framing {}/{}, expected 2/5", zr.numerator,
                                                                     zr.denominator));
    const FramingTokenList ru{"ru", {"перевод", "вот перевод"}};
    const Rate rr = framing_rate({"Вот ПЕРЕВОД: кот сидит.", "Кот сидит.", "ПЕРЕВОД: кот", "кот"}, ru);
    o.require(rr.numerator == 2 && rr.denominator == 4, fmt::format("ru framing {}/{}, expected 2/4", rr.numerator,
                                                                     rr.denominator));
    if (o.ok) o.detail = "18 scripted verdicts, rate 17/18, framing 2/5 and 2/4";
    return o;
}

Outcome determinism() {
    Outcome o;
    testsupport::TempDir dir("acceptance_det");
    const std::string root = dir.path().string();
    auto run = [&](std::vector<std::string> args) {
        args.insert(args.begin(), "initfeat");
        args.push_back("--log-level");
        args.push_back("off");
        return run_cli(args);
    };
    o.require(run({"synth", "--out", root + "/sy"}) == 0, "synth failed");
    const std::vector<std::string> io{"--dataset", root + "/sy/dataset", "--sae", root + "/sy/sae"};
    auto pipeline = [&](const std::string& out, const std::string& threads) {
        std::vector<std::string> a{"pipeline"};
        a.insert(a.end(), io.begin(), io.end());
        a.insert(a.end(), {"--out", root + "/" + out, "--threads", threads});
        return run(a);
    };
    o.require(pipeline("a", "1") == 0 && pipeline("b", "1") == 0 && pipeline("c", "8") == 0, "pipeline failed");
    std::size_t compared = 0;
    for (const char* f : {"recall_report.json", "influence_report.json", "influence_vectors.bin",
                          "consistency_report.json", "final_features.json"}) {
        const std::string a = slurp(dir.path() / "a" / f);
        o.require(!a.empty(), fmt::format("{} missing", f));
        o.require(a == slurp(dir.path() / "b" / f), fmt::format("{} differs between reruns", f));
        o.require(a == slurp(dir.path() / "c" / f), fmt::format("{} differs between 1 and 8 threads", f));
        ++compared;
    }
    if (o.ok) o.detail = fmt::format("{} reports identical across 3 runs", compared);
    return o;
}

}  // namespace

int main() {
    spdlog::set_level(spdlog::level::err);
    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
        {"planted-circuit recovery", planted_recovery},
        {"PCA oracle equivalence", pca_oracle},
        {"influence collinearity", influence_collinearity},
        {"intervention identity and linearity", intervention},
        {"JumpReLU gate", jumprelu_gate},
        {"selection oracle", selection_oracle},
        {"threshold boundary", threshold_boundary},
        {"evalstats replay", evalstats_replay},
        {"determinism", determinism},
    };
    int failed = 0;
    for (const auto& [name, fn] : criteria) {
        Outcome o;
        try {
            o = fn();
        } catch (const std::exception& e) {
            o.ok = false;
            o.detail = fmt::format("exception: {}", e.what());
        }
        failed += !o.ok;
        fmt::print("{} {}: {}\n", o.ok ? "PASS" : "FAIL", name, o.detail);
    }
    return failed == 0 ? 0 : 1;
}
