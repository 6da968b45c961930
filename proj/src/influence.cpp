#include "initfeat/influence.hpp"

#include "initfeat/kernels.hpp"
#include "initfeat/parallel.hpp"

#include <fmt/format.h>

#include <cmath>

namespace initfeat {

namespace {

double norm2(std::span<const double> v) { return std::sqrt(kernels::dot(v, v)); }

template <class T>
std::vector<double> influence_impl(const SaeParams& p, std::span<const T> h, std::uint32_t j,
                                   double alpha) {
    if (j >= p.d_sae) throw DataError(fmt::format("feature index {} out of range", j));
    if (!std::isfinite(alpha)) throw DataError("alpha_act must be finite");
    std::vector<double> a = encode(p, h);
    const std::vector<double> base = decode(p, std::span<const double>(a));
    a[j] = alpha;
    std::vector<double> v = decode(p, std::span<const double>(a));
    for (std::size_t i = 0; i < v.size(); ++i) v[i] -= base[i];
    return v;
}

}  // namespace

std::string AlphaPolicy::describe() const {
    return kind == Kind::fixed ? fmt::format("fixed:{}", value)
                               : fmt::format("max_activation+{}", value);
}

std::vector<double> influence_vector(const SaeParams& p, std::span<const float> h, std::uint32_t j,
                                     double alpha_act) {
    return influence_impl(p, h, j, alpha_act);
}

std::vector<double> influence_vector(const SaeParams& p, std::span<const double> h,
                                     std::uint32_t j, double alpha_act) {
    return influence_impl(p, h, j, alpha_act);
}

std::vector<CanonicalInfluence> canonical_influences(const SaeParams& p, const ActivationDataset& ds,
                                                     const std::vector<std::uint32_t>& features,
                                                     const InfluenceOptions& opts) {
    if (ds.d_model() != p.d_model)
        throw DataError(fmt::format("influence: layer {} SAE d_model {} != dataset d_model {}",
                                    p.layer, p.d_model, ds.d_model()));
    const std::size_t n_ctx = ds.num_samples() * kNumPositions;
    const std::size_t k = features.size();
    if (n_ctx == 0) throw DataError("influence: empty dataset");
    auto context = [&](std::size_t c) {
        return ds.hidden(c / kNumPositions, p.layer, kAllPositions[c % kNumPositions]);
    };

    // acts[c * k + f]: activation of features[f] at context c.
    const SubsetEncoder enc(p, features);
    std::vector<double> acts(n_ctx * k);
    parallel_for(n_ctx, opts.threads, [&](std::size_t begin, std::size_t end, std::size_t) {
        for (std::size_t c = begin; c < end; ++c) {
            const std::vector<double> a = enc.encode(context(c));
            std::copy(a.begin(), a.end(), acts.begin() + static_cast<std::ptrdiff_t>(c * k));
        }
    });

    // Full encodings of an evenly spaced sample of contexts for the literal
    // two-decode cross-check.
    const std::size_t n_verify = std::min(opts.verify_contexts, n_ctx);
    std::vector<std::size_t> verify_idx;
    for (std::size_t v = 0; v < n_verify; ++v) verify_idx.push_back(v * n_ctx / n_verify);
    std::vector<std::vector<double>> verify_acts(n_verify);
    std::vector<std::vector<double>> verify_base(n_verify);
    parallel_for(n_verify, opts.threads, [&](std::size_t begin, std::size_t end, std::size_t) {
        for (std::size_t v = begin; v < end; ++v) {
            verify_acts[v] = encode(p, context(verify_idx[v]));
            verify_base[v] = decode(p, std::span<const double>(verify_acts[v]));
        }
    });

    std::vector<CanonicalInfluence> out(k);
    parallel_for(k, opts.threads, [&](std::size_t begin, std::size_t end, std::size_t) {
        for (std::size_t f = begin; f < end; ++f) {
            const std::uint32_t j = features[f];
            CanonicalInfluence ci;
            ci.feature = {p.layer, j};
            ci.contexts_used = n_ctx;
            const std::span<const float> row = p.dec_row(j);
            {
                double ss = 0.0;
                for (float x : row) ss += static_cast<double>(x) * static_cast<double>(x);
                ci.decoder_norm = std::sqrt(ss);
            }
            if (ci.decoder_norm == 0.0)
                throw DataError(fmt::format("degenerate feature {}: zero decoder row", to_string(ci.feature)));

            double active_sum = 0.0;
            ci.max_activation = 0.0;
            for (std::size_t c = 0; c < n_ctx; ++c) {
                const double a = acts[c * k + f];
                ci.max_activation = std::max(ci.max_activation, a);
                if (a > 0.0) {
                    active_sum += a;
                    ++ci.active_contexts;
                }
            }
            ci.mean_active_activation =
                ci.active_contexts ? active_sum / static_cast<double>(ci.active_contexts) : 0.0;
            ci.alpha = opts.alpha.resolve(ci.max_activation);

            // Mean of the raw per-context vectors (alpha − a_c)·W_dec[j].
            std::vector<double> mean(p.d_model, 0.0);
            double gap_sum = 0.0;
            for (std::size_t c = 0; c < n_ctx; ++c) {
                const double gap = ci.alpha - acts[c * k + f];
                gap_sum += gap;
                if (gap != 0.0) kernels::axpy(gap, row, mean);
            }
            ci.mean_gap = gap_sum / static_cast<double>(n_ctx);
            const double inv_n = 1.0 / static_cast<double>(n_ctx);
            for (double& x : mean) x *= inv_n;
            const double len = norm2(mean);
            if (len == 0.0 || ci.mean_gap == 0.0)
                throw DataError(fmt::format("degenerate feature {}: every influence vector is zero",
                                            to_string(ci.feature)));
            for (double& x : mean) x /= len;
            ci.direction = std::move(mean);

            const double sign = ci.mean_gap > 0.0 ? 1.0 : -1.0;
            double cf = 0.0;
            for (std::size_t i = 0; i < p.d_model; ++i)
                cf += ci.direction[i] * sign * static_cast<double>(row[i]) / ci.decoder_norm;
            ci.closed_form_cos = cf;

            for (std::size_t v = 0; v < n_verify; ++v) {
                std::vector<double> a = verify_acts[v];
                const double a_j = a[j];
                a[j] = ci.alpha;
                std::vector<double> lit = decode(p, std::span<const double>(a));
                double dev = 0.0, ref = 0.0;
                for (std::size_t i = 0; i < p.d_model; ++i) {
                    lit[i] -= verify_base[v][i];
                    const double lin = (ci.alpha - a_j) * static_cast<double>(row[i]);
                    dev = std::max(dev, std::abs(lit[i] - lin));
                    ref = std::max(ref, std::abs(lin));
                }
                if (ref > 0.0) ci.max_linear_rel_dev = std::max(ci.max_linear_rel_dev, dev / ref);
                const double ln = norm2(lit);
                if (ln > 0.0) {
                    const double c = std::abs(kernels::dot(lit, ci.direction)) / ln;
                    ci.min_context_abs_cos = std::min(ci.min_context_abs_cos, c);
                    ++ci.verified_contexts;
                }
            }
            out[f] = std::move(ci);
        }
    });
    return out;
}

CanonicalInfluence canonical_influence(const SaeParams& p, const ActivationDataset& ds,
                                       std::uint32_t j, const InfluenceOptions& opts) {
    return canonical_influences(p, ds, {j}, opts).front();
}

void save_influence_table(const std::vector<CanonicalInfluence>& table, const AlphaPolicy& policy,
                          const std::filesystem::path& path) {
    if (table.empty()) throw DataError("influence table is empty");
    const std::size_t n = table.size();
    const std::size_t d = table.front().direction.size();
    std::vector<float> dirs;
    dirs.reserve(n * d);
    std::vector<float> layer, index, alpha, gap, maxa, meana, dnorm;
    for (const auto& ci : table) {
        if (ci.direction.size() != d) throw DataError("influence table: mixed d_model");
        for (double x : ci.direction) dirs.push_back(static_cast<float>(x));
        layer.push_back(static_cast<float>(ci.feature.layer));
        index.push_back(static_cast<float>(ci.feature.index));
        alpha.push_back(static_cast<float>(ci.alpha));
        gap.push_back(static_cast<float>(ci.mean_gap));
        maxa.push_back(static_cast<float>(ci.max_activation));
        meana.push_back(static_cast<float>(ci.mean_active_activation));
        dnorm.push_back(static_cast<float>(ci.decoder_norm));
    }
    std::vector<NamedTensor> t;
    t.push_back({"directions", Tensor({n, d}, std::move(dirs))});
    t.push_back({"feature_layer", Tensor({n}, std::move(layer))});
    t.push_back({"feature_index", Tensor({n}, std::move(index))});
    t.push_back({"alpha", Tensor({n}, std::move(alpha))});
    t.push_back({"mean_gap", Tensor({n}, std::move(gap))});
    t.push_back({"max_activation", Tensor({n}, std::move(maxa))});
    t.push_back({"mean_active_activation", Tensor({n}, std::move(meana))});
    t.push_back({"decoder_norm", Tensor({n}, std::move(dnorm))});
    write_container(t, {{"alpha_policy", policy.describe()}, {"contexts", "union of three positions"}},
                    path);
}

std::vector<CanonicalInfluence> load_influence_table(const std::filesystem::path& path) {
    const Container c = read_container(path);
    auto get = [&](const char* name) -> const Tensor& {
        auto it = c.tensors.find(name);
        if (it == c.tensors.end())
            throw DataError(fmt::format("{}: missing tensor '{}'", path.string(), name));
        return it->second;
    };
    const Tensor& dirs = get("directions");
    if (dirs.rank() != 2) throw DataError(fmt::format("{}: directions must be rank 2", path.string()));
    const std::size_t n = dirs.shape[0], d = dirs.shape[1];
    auto column = [&](const char* name) {
        const Tensor& t = get(name);
        if (t.shape != std::vector<std::size_t>{n})
            throw DataError(fmt::format("{}: '{}' must have shape [{}]", path.string(), name, n));
        return t.data;
    };
    const auto layer = column("feature_layer"), index = column("feature_index"),
               alpha = column("alpha"), gap = column("mean_gap"), maxa = column("max_activation"),
               meana = column("mean_active_activation"), dnorm = column("decoder_norm");
    std::vector<CanonicalInfluence> out(n);
    for (std::size_t r = 0; r < n; ++r) {
        auto& ci = out[r];
        ci.feature = {static_cast<int>(layer[r]), static_cast<std::uint32_t>(index[r])};
        ci.direction.assign(dirs.data.begin() + static_cast<std::ptrdiff_t>(r * d),
                            dirs.data.begin() + static_cast<std::ptrdiff_t>((r + 1) * d));
        ci.alpha = alpha[r];
        ci.mean_gap = gap[r];
        ci.max_activation = maxa[r];
        ci.mean_active_activation = meana[r];
        ci.decoder_norm = dnorm[r];
    }
    return out;
}

ojson to_json(const std::vector<CanonicalInfluence>& table, const AlphaPolicy& policy) {
    ojson j;
    j["alpha_policy"] = policy.describe();
    ojson feats = ojson::array();
    for (const auto& ci : table) {
        ojson f;
        f["feature"] = to_string(ci.feature);
        f["layer"] = ci.feature.layer;
        f["index"] = ci.feature.index;
        f["alpha"] = sig9(ci.alpha);
        f["mean_gap"] = sig9(ci.mean_gap);
        f["max_activation"] = sig9(ci.max_activation);
        f["mean_active_activation"] = sig9(ci.mean_active_activation);
        f["active_contexts"] = ci.active_contexts;
        f["contexts_used"] = ci.contexts_used;
        f["decoder_norm"] = sig9(ci.decoder_norm);
        f["closed_form_cos"] = sig9(ci.closed_form_cos);
        f["verified_contexts"] = ci.verified_contexts;
        f["min_context_abs_cos"] = sig9(ci.min_context_abs_cos);
        f["max_linear_rel_dev"] = sig9z(ci.max_linear_rel_dev);
        feats.push_back(std::move(f));
    }
    j["features"] = std::move(feats);
    return j;
}

}  // namespace initfeat
