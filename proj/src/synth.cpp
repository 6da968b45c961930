#include "initfeat/synth.hpp"

#include "initfeat/random.hpp"
#include "initfeat/ratio.hpp"
#include "initfeat/report.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <set>

namespace initfeat {

namespace fs = std::filesystem;

namespace {

constexpr float kTheta = 0.5f;
constexpr float kDeadBias = -10.0f;

// One firing unit: a planted cohort or a single decoy/distractor.
struct Unit {
    SynthRole role;
    std::vector<std::uint32_t> members;
    std::vector<std::vector<double>> dec;  // decoder row per member
    std::vector<double> enc;               // shared encoder column
    std::size_t count = 0;
    std::uint8_t position_mask = 0;
};

std::vector<double> random_unit(Rng& rng, std::size_t d) {
    std::vector<double> v(d);
    double n2 = 0.0;
    do {
        n2 = 0.0;
        for (double& x : v) {
            x = rng.normal();
            n2 += x * x;
        }
    } while (n2 < 1e-6);
    const double n = std::sqrt(n2);
    for (double& x : v) x /= n;
    return v;
}

// Gaussian vector projected off `basis` and normalized; modified Gram–Schmidt
// run twice for stability.
std::vector<double> orthogonal_unit(Rng& rng, const std::vector<std::vector<double>>& basis, std::size_t d) {
    for (int attempt = 0; attempt < 100; ++attempt) {
        std::vector<double> v = random_unit(rng, d);
        for (int pass = 0; pass < 2; ++pass) {
            for (const auto& b : basis) {
                double c = 0.0;
                for (std::size_t i = 0; i < d; ++i) c += v[i] * b[i];
                for (std::size_t i = 0; i < d; ++i) v[i] -= c * b[i];
            }
        }
        double n2 = 0.0;
        for (double x : v) n2 += x * x;
        if (n2 > 1e-6) {
            const double n = std::sqrt(n2);
            for (double& x : v) x /= n;
            return v;
        }
    }
    throw DataError("synth: could not draw an orthogonal direction");
}

double dotd(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

std::size_t exact_count(double f, std::size_t n, const std::string& what) {
    if (!(f > 0.0 && f <= 1.0)) throw DataError(fmt::format("synth: {} frequency {} not in (0, 1]", what, f));
    const std::size_t c = DecimalRatio::from_double(f).floor_times(n);
    if (c == 0)
        throw DataError(fmt::format("synth: infeasible frequency {} for {}: floor({}·{}) = 0 samples", f, what,
                                    f, n));
    return c;
}

}  // namespace

std::string_view to_string(SynthRole r) {
    switch (r) {
        case SynthRole::planted: return "planted";
        case SynthRole::decoy: return "decoy";
        case SynthRole::distractor: return "distractor";
    }
    return "?";
}

void SynthConfig::validate() const {
    if (d_model == 0 || d_sae < d_model)
        throw DataError(fmt::format("synth: need 0 < d_model <= d_sae, got {} and {}", d_model, d_sae));
    if (n_samples == 0) throw DataError("synth: n_samples must be positive");
    if (layers.empty()) throw DataError("synth: no layers");
    std::set<int> ls(layers.begin(), layers.end());
    if (ls.size() != layers.size()) throw DataError("synth: duplicate layer ids");
    std::set<FeatureId> seen;
    std::map<int, const PlantedSpec*> first;
    for (const auto& p : planted) {
        if (!ls.count(p.layer)) throw DataError(fmt::format("synth: planted layer {} not in layers", p.layer));
        if (p.index >= d_sae) throw DataError(fmt::format("synth: planted index {} >= d_sae", p.index));
        if (!seen.insert({p.layer, p.index}).second)
            throw DataError(fmt::format("synth: planted feature l{}_f{} listed twice", p.layer, p.index));
        if (!(p.epsilon >= 0.0) || !std::isfinite(p.epsilon))
            throw DataError("synth: epsilon must be finite and >= 0");
        if (p.position_mask > 7) throw DataError("synth: position_mask must be in 0..7");
        exact_count(p.frequency, n_samples, "planted");
        auto [it, fresh] = first.emplace(p.layer, &p);
        if (!fresh && (it->second->frequency != p.frequency || it->second->position_mask != p.position_mask))
            throw DataError(fmt::format(
                "synth: infeasible plan: planted features of layer {} share a direction and must share "
                "frequency and positions",
                p.layer));
    }
    if (distractors > 0) exact_count(distractor_max_frequency, n_samples, "distractor");
    if (decoys_per_layer > 0) exact_count(decoy_frequency, n_samples, "decoy");
    if (!(noise >= 0.0) || !std::isfinite(noise)) throw DataError("synth: noise must be finite and >= 0");
}

SynthConfig acceptance_fixture_config() {
    SynthConfig c;
    c.d_model = 32;
    c.d_sae = 128;
    c.layers = {0, 1, 2};
    c.n_samples = 98;
    c.planted = {{0, 3, 0.8, 0.0}, {0, 17, 0.8, 0.0}, {0, 40, 0.8, 0.0},
                 {1, 5, 0.7, 0.0}, {1, 60, 0.7, 0.0}, {1, 99, 0.7, 0.0}};
    c.distractors = 40;
    c.distractor_max_frequency = 0.3;
    c.decoys_per_layer = 3;
    c.decoy_frequency = 0.8;
    c.seed = 20250101;
    return c;
}

std::vector<FeatureId> GroundTruth::expected_recalled(double tau) const {
    const DecimalRatio t = DecimalRatio::from_double(tau);
    std::vector<FeatureId> out;
    for (const auto& f : features)
        if (t.met_by(f.count, num_samples)) out.push_back(f.feature);
    return out;
}

SynthResult generate(const SynthConfig& cfg) {
    cfg.validate();
    Rng rng(cfg.seed);
    const std::size_t D = cfg.d_model, N = cfg.n_samples;

    // Units per layer.
    std::map<int, std::vector<Unit>> units;
    std::map<int, std::vector<const PlantedSpec*>> planted_by_layer;
    for (const auto& p : cfg.planted) planted_by_layer[p.layer].push_back(&p);
    std::map<int, std::size_t> distractor_count;
    for (std::size_t i = 0; i < cfg.distractors; ++i) ++distractor_count[cfg.layers[i % cfg.layers.size()]];

    SynthResult out;
    out.truth.num_samples = N;

    for (int layer : cfg.layers) {
        auto& lu = units[layer];
        const auto& cohort = planted_by_layer[layer];
        const std::size_t decoys = cohort.empty() ? cfg.decoys_per_layer : 0;
        const std::size_t directions = (cohort.empty() ? 0 : 1) + decoys + distractor_count[layer];
        const bool perturbed =
            std::any_of(cohort.begin(), cohort.end(), [](const PlantedSpec* p) { return p->epsilon > 0.0; });
        if (directions + (perturbed ? 1 : 0) > D)
            throw DataError(fmt::format(
                "synth: infeasible plan: layer {} needs {} orthogonal directions but d_model is {}", layer,
                directions + (perturbed ? 1 : 0), D));

        std::set<std::uint32_t> used;
        for (const auto* p : cohort) used.insert(p->index);
        std::vector<std::uint32_t> free_idx;
        for (std::size_t i : rng.permutation(cfg.d_sae))
            if (!used.count(static_cast<std::uint32_t>(i))) free_idx.push_back(static_cast<std::uint32_t>(i));
        std::size_t next_free = 0;

        std::vector<std::vector<double>> basis;
        if (!cohort.empty()) {
            Unit u;
            u.role = SynthRole::planted;
            const auto dir = orthogonal_unit(rng, basis, D);
            basis.push_back(dir);
            u.count = exact_count(cohort.front()->frequency, N, "planted");
            u.position_mask = cohort.front()->position_mask;
            u.enc = dir;
            for (double& x : u.enc) x /= static_cast<double>(cohort.size());
            for (const auto* p : cohort) u.members.push_back(p->index);
            out.truth.planted_direction[layer] = dir;
            lu.push_back(std::move(u));
        }
        for (std::size_t k = 0; k < decoys + distractor_count[layer]; ++k) {
            Unit u;
            u.role = k < decoys ? SynthRole::decoy : SynthRole::distractor;
            const auto dir = orthogonal_unit(rng, basis, D);
            basis.push_back(dir);
            u.enc = dir;
            u.dec.push_back(dir);
            u.members.push_back(free_idx[next_free++]);
            if (u.role == SynthRole::decoy) {
                u.count = exact_count(cfg.decoy_frequency, N, "decoy");
            } else {
                const std::size_t max_count = exact_count(cfg.distractor_max_frequency, N, "distractor");
                u.count = 1 + rng.below(max_count);
            }
            lu.push_back(std::move(u));
        }
        // Planted decoder rows: u perturbed by ε along directions orthogonal to
        // every other firing direction, so the perturbation never leaks into
        // another feature's encoder.
        if (!cohort.empty()) {
            Unit& u = lu.front();
            for (const auto* p : cohort) {
                std::vector<double> row = basis.front();
                if (p->epsilon > 0.0) {
                    const auto g = orthogonal_unit(rng, basis, D);
                    double n2 = 0.0;
                    for (std::size_t i = 0; i < D; ++i) {
                        row[i] += p->epsilon * g[i];
                        n2 += row[i] * row[i];
                    }
                    const double n = std::sqrt(n2);
                    for (double& x : row) x /= n;
                }
                u.dec.push_back(std::move(row));
            }
        }
    }

    // SAE weights.
    for (int layer : cfg.layers) {
        SaeParams p;
        p.layer = layer;
        p.d_model = D;
        p.d_sae = cfg.d_sae;
        p.w_enc.assign(D * cfg.d_sae, 0.0f);
        p.b_enc.assign(cfg.d_sae, kDeadBias);
        p.theta.assign(cfg.d_sae, kTheta);
        p.w_dec.assign(cfg.d_sae * D, 0.0f);
        p.b_dec.resize(D);
        std::vector<double> b_dec(D);
        for (std::size_t i = 0; i < D; ++i) {
            p.b_dec[i] = static_cast<float>(0.1 * rng.normal());
            b_dec[i] = p.b_dec[i];
        }
        std::vector<bool> live(cfg.d_sae, false);
        for (const Unit& u : units[layer]) {
            for (std::size_t m = 0; m < u.members.size(); ++m) {
                const std::uint32_t j = u.members[m];
                live[j] = true;
                for (std::size_t i = 0; i < D; ++i) {
                    p.w_dec[j * D + i] = static_cast<float>(u.dec[m][i]);
                    p.w_enc[i * cfg.d_sae + j] = static_cast<float>(u.enc[i]);
                }
                p.b_enc[j] = static_cast<float>(-dotd(u.enc, b_dec));
            }
        }
        for (std::size_t j = 0; j < cfg.d_sae; ++j) {
            if (live[j]) continue;
            const auto dir = random_unit(rng, D);
            for (std::size_t i = 0; i < D; ++i) {
                p.w_dec[j * D + i] = static_cast<float>(dir[i]);
                p.w_enc[i * cfg.d_sae + j] = static_cast<float>(0.01 * rng.normal());
            }
        }
        p.validate();
        out.saes.emplace(layer, std::move(p));
    }

    // Activation patterns and hidden states, [N, 3, D] per layer.
    std::map<int, Tensor> tensors;
    for (int layer : cfg.layers) {
        const SaeParams& p = out.saes.at(layer);
        std::vector<double> h(N * kNumPositions * D);
        for (std::size_t s = 0; s < N; ++s)
            for (std::size_t q = 0; q < kNumPositions; ++q)
                for (std::size_t i = 0; i < D; ++i) h[(s * kNumPositions + q) * D + i] = p.b_dec[i];

        for (const Unit& u : units[layer]) {
            const auto order = rng.permutation(N);
            for (std::size_t r = 0; r < u.count; ++r) {
                const std::size_t s = order[r];
                const std::uint8_t mask =
                    u.position_mask ? u.position_mask : static_cast<std::uint8_t>(1 + rng.below(7));
                for (std::size_t q = 0; q < kNumPositions; ++q) {
                    if (!(mask & (1u << q))) continue;
                    double* hs = &h[(s * kNumPositions + q) * D];
                    for (std::size_t m = 0; m < u.members.size(); ++m) {
                        const double a = rng.uniform(1.0, 2.0);
                        for (std::size_t i = 0; i < D; ++i) hs[i] += a * u.dec[m][i];
                    }
                }
            }
            for (std::uint32_t j : u.members) out.truth.features.push_back({{layer, j}, u.role, u.count});
            if (u.role == SynthRole::planted)
                for (std::uint32_t j : u.members) out.truth.final_set.push_back({layer, j});
        }
        std::vector<float> hf(h.size());
        for (std::size_t i = 0; i < h.size(); ++i)
            hf[i] = static_cast<float>(h[i] + (cfg.noise > 0.0 ? cfg.noise * rng.normal() : 0.0));
        tensors.emplace(layer, Tensor({N, kNumPositions, D}, std::move(hf)));
    }
    std::sort(out.truth.features.begin(), out.truth.features.end(),
              [](const SynthFeature& a, const SynthFeature& b) { return a.feature < b.feature; });
    std::sort(out.truth.final_set.begin(), out.truth.final_set.end());

    DatasetManifest m;
    m.model_name = cfg.model_name;
    m.d_model = D;
    m.layers = cfg.layers;
    m.num_samples = N;
    m.extra["generator"] = "initfeat synth";
    m.extra["seed"] = cfg.seed;

    static constexpr std::array<const char*, 4> kTargets{"zh", "ja", "ru", "ar"};
    const int width = std::max(4, static_cast<int>(std::to_string(N - 1).size()));
    std::vector<SampleMeta> samples(N);
    for (std::size_t s = 0; s < N; ++s) {
        SampleMeta& sm = samples[s];
        sm.id = fmt::format("s{:0{}}", s, width);
        sm.source_text = fmt::format("synthetic source sentence {}", s);
        sm.source_lang = "en";
        sm.target_lang = kTargets[s % kTargets.size()];
        sm.quality = std::round(rng.uniform(0.5, 1.0) * 1e4) / 1e4;
        sm.loss = std::round(rng.uniform(0.2, 3.0) * 1e4) / 1e4;
    }
    out.dataset = ActivationDataset(std::move(m), std::move(samples), std::move(tensors));

    // The construction guarantees the planned firing pattern; check it so a
    // configuration with too much noise fails loudly instead of silently.
    for (int layer : cfg.layers) {
        const SaeParams& p = out.saes.at(layer);
        std::vector<std::size_t> counts(cfg.d_sae, 0);
        for (std::size_t s = 0; s < N; ++s) {
            std::vector<bool> fired(cfg.d_sae, false);
            for (Position q : kAllPositions) {
                const auto a = encode(p, out.dataset.hidden(s, layer, q));
                for (std::size_t j = 0; j < a.size(); ++j)
                    if (a[j] > 0.0) fired[j] = true;
            }
            for (std::size_t j = 0; j < cfg.d_sae; ++j) counts[j] += fired[j];
        }
        std::vector<std::size_t> planned(cfg.d_sae, 0);
        for (const auto& f : out.truth.features)
            if (f.feature.layer == layer) planned[f.feature.index] = f.count;
        for (std::size_t j = 0; j < cfg.d_sae; ++j)
            if (counts[j] != planned[j])
                throw DataError(fmt::format(
                    "synth: layer {} feature {} fires in {} samples, planned {}; lower noise or epsilon", layer,
                    j, counts[j], planned[j]));
    }
    return out;
}

ojson to_json(const GroundTruth& t) {
    ojson j;
    j["num_samples"] = t.num_samples;
    ojson feats = ojson::array();
    for (const auto& f : t.features) {
        ojson e;
        e["layer"] = f.feature.layer;
        e["index"] = f.feature.index;
        e["role"] = to_string(f.role);
        e["count"] = f.count;
        feats.push_back(std::move(e));
    }
    j["features"] = std::move(feats);
    ojson fin = ojson::array();
    for (const auto& f : t.final_set) fin.push_back({{"layer", f.layer}, {"index", f.index}});
    j["final_features"] = std::move(fin);
    ojson dirs = ojson::object();
    for (const auto& [layer, d] : t.planted_direction) {
        ojson arr = ojson::array();
        for (double x : d) arr.push_back(sig9(x));
        dirs[std::to_string(layer)] = std::move(arr);
    }
    j["planted_directions"] = std::move(dirs);
    return j;
}

GroundTruth ground_truth_from_json(const ojson& j) {
    GroundTruth t;
    try {
        t.num_samples = j.at("num_samples").get<std::size_t>();
        for (const auto& e : j.at("features")) {
            SynthFeature f;
            f.feature = {e.at("layer").get<int>(), e.at("index").get<std::uint32_t>()};
            const auto role = e.at("role").get<std::string>();
            f.role = role == "planted" ? SynthRole::planted
                                       : role == "decoy" ? SynthRole::decoy : SynthRole::distractor;
            f.count = e.at("count").get<std::size_t>();
            t.features.push_back(f);
        }
        for (const auto& e : j.at("final_features"))
            t.final_set.push_back({e.at("layer").get<int>(), e.at("index").get<std::uint32_t>()});
        for (const auto& [k, v] : j.at("planted_directions").items())
            t.planted_direction[std::stoi(k)] = v.get<std::vector<double>>();
    } catch (const nlohmann::json::exception& e) {
        throw DataError(fmt::format("ground truth: {}", e.what()));
    }
    return t;
}

void write_synth(const SynthResult& r, const fs::path& dir) {
    fs::create_directories(dir / "sae");
    save_activation_dataset(r.dataset, dir / "dataset");
    for (const auto& [layer, p] : r.saes) save_sae(p, sae_file(dir / "sae", layer));
    write_json_file(dir / "ground_truth.json", to_json(r.truth));
}

}  // namespace initfeat
