#include "initfeat/intervene.hpp"

#include "initfeat/kernels.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <map>

namespace initfeat {

namespace fs = std::filesystem;

namespace {

std::vector<std::uint32_t> checked_indices(const SaeParams& p, const InterventionSpec& spec) {
    if (!std::isfinite(spec.coefficient) || spec.coefficient < 0.0)
        throw UsageError(fmt::format("intervention coefficient must be finite and >= 0, got {}",
                                     spec.coefficient));
    std::vector<std::uint32_t> idx;
    for (const auto& f : spec.features) {
        if (f.layer != p.layer)
            throw DataError(fmt::format("feature {} belongs to layer {}, SAE is layer {}",
                                        to_string(f), f.layer, p.layer));
        if (f.index >= p.d_sae) throw DataError(fmt::format("feature {} out of range", to_string(f)));
        idx.push_back(f.index);
    }
    std::sort(idx.begin(), idx.end());
    idx.erase(std::unique(idx.begin(), idx.end()), idx.end());
    return idx;
}

}  // namespace

PatchMode parse_patch_mode(std::string_view s) {
    if (s == "delta") return PatchMode::delta;
    if (s == "replace") return PatchMode::replace;
    throw UsageError(fmt::format("unknown patch mode '{}' (delta|replace)", s));
}

std::string_view to_string(PatchMode m) { return m == PatchMode::delta ? "delta" : "replace"; }

HiddenPatcher::HiddenPatcher(const SaeParams& p, InterventionSpec spec)
    : params_(&p), spec_(std::move(spec)), indices_(checked_indices(p, spec_)), encoder_(p, indices_) {}

template <class T>
std::vector<double> HiddenPatcher::apply_impl(std::span<const T> h) const {
    const SaeParams& p = *params_;
    if (h.size() != p.d_model)
        throw DataError(fmt::format("dimension mismatch: hidden state has length {}, expected {}",
                                    h.size(), p.d_model));
    const double scale = spec_.coefficient - 1.0;

    if (spec_.mode == PatchMode::replace) {
        std::vector<double> a = encode(p, h);
        for (std::uint32_t j : indices_) a[j] *= spec_.coefficient;
        return decode(p, std::span<const double>(a));
    }

    std::vector<double> out(h.begin(), h.end());
    if (indices_.empty() || scale == 0.0) return out;

    std::vector<double> a;
    if constexpr (std::is_same_v<T, float>) {
        a = encoder_.encode(h);
    } else {
        const std::vector<double> full = encode(p, h);
        for (std::uint32_t j : indices_) a.push_back(full[j]);
    }
    std::vector<double> delta(p.d_model, 0.0);
    bool touched = false;
    for (std::size_t k = 0; k < indices_.size(); ++k) {
        const double t = scale * a[k];
        if (t == 0.0) continue;
        kernels::axpy(t, p.dec_row(indices_[k]), delta);
        touched = true;
    }
    if (touched)
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += delta[i];
    return out;
}

std::vector<double> HiddenPatcher::apply(std::span<const float> h) const { return apply_impl(h); }
std::vector<double> HiddenPatcher::apply(std::span<const double> h) const { return apply_impl(h); }

std::vector<double> patch_hidden(const SaeParams& p, std::span<const float> h,
                                 const InterventionSpec& spec) {
    return HiddenPatcher(p, spec).apply(h);
}

std::vector<double> patch_hidden(const SaeParams& p, std::span<const double> h,
                                 const InterventionSpec& spec) {
    return HiddenPatcher(p, spec).apply(h);
}

std::string coefficient_tag(double c) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), c);
    std::string s(buf, res.ptr);
    if (s.find_first_of(".e") == std::string::npos) s += ".0";
    return s;
}

SteeringExport build_steering(const FinalFeatureSet& final_set,
                              const std::vector<CanonicalInfluence>& table, double coefficient,
                              PatchMode mode) {
    if (final_set.features.empty()) throw DataError("steering export: final feature set is empty");
    if (!std::isfinite(coefficient) || coefficient < 0.0)
        throw UsageError(fmt::format("steering coefficient must be finite and >= 0, got {}", coefficient));
    std::map<FeatureId, const CanonicalInfluence*> by_id;
    for (const auto& ci : table) by_id[ci.feature] = &ci;

    SteeringExport out;
    out.coefficient = coefficient;
    out.mode = mode;
    std::map<int, SteeringLayer> layers;
    for (const auto& f : final_set.features) {
        auto it = by_id.find(f.feature);
        if (it == by_id.end())
            throw DataError(fmt::format("steering export: no canonical direction for {}", to_string(f.feature)));
        const CanonicalInfluence& ci = *it->second;
        SteeringLayer& l = layers[f.feature.layer];
        l.layer = f.feature.layer;
        l.feature_index.push_back(f.feature.index);
        std::vector<double> dir = ci.direction;
        if (ci.mean_gap < 0.0)
            for (double& x : dir) x = -x;
        l.directions.push_back(std::move(dir));
        l.gains.push_back((coefficient - 1.0) * ci.mean_active_activation);
        l.decoder_norms.push_back(ci.decoder_norm);
    }
    for (auto& [_, l] : layers) out.layers.push_back(std::move(l));
    return out;
}

fs::path write_steering(const SteeringExport& s, const fs::path& dir) {
    if (s.layers.empty()) throw DataError("steering export: nothing to write");
    std::vector<NamedTensor> tensors;
    ojson meta;
    meta["coefficient"] = s.coefficient;
    meta["mode"] = to_string(s.mode);
    meta["apply_rule"] = s.apply_rule;
    meta["gain_definition"] = "(coefficient - 1) * mean activation over contexts where the feature is active";
    meta["exact_delta"] = "(coefficient - 1) * a_j(h) * decoder_norm * direction; needs live a_j(h)";
    ojson feats = ojson::array();
    std::vector<int> layer_ids;
    for (const auto& l : s.layers) {
        const std::size_t k = l.directions.size();
        const std::size_t d = l.directions.front().size();
        std::vector<float> dirs, gains, norms, idx;
        for (std::size_t r = 0; r < k; ++r) {
            for (double x : l.directions[r]) dirs.push_back(static_cast<float>(x));
            gains.push_back(static_cast<float>(l.gains[r]));
            norms.push_back(static_cast<float>(l.decoder_norms[r]));
            idx.push_back(static_cast<float>(l.feature_index[r]));
            ojson f;
            f["layer"] = l.layer;
            f["index"] = l.feature_index[r];
            f["gain"] = sig9(l.gains[r]);
            f["decoder_norm"] = sig9(l.decoder_norms[r]);
            feats.push_back(std::move(f));
        }
        const std::string pre = fmt::format("layer_{}.", l.layer);
        tensors.push_back({pre + "directions", Tensor({k, d}, std::move(dirs))});
        tensors.push_back({pre + "gains", Tensor({k}, std::move(gains))});
        tensors.push_back({pre + "decoder_norms", Tensor({k}, std::move(norms))});
        tensors.push_back({pre + "feature_index", Tensor({k}, std::move(idx))});
        layer_ids.push_back(l.layer);
    }
    meta["layers"] = layer_ids;
    meta["features"] = std::move(feats);

    const std::string tag = coefficient_tag(s.coefficient);
    const fs::path bin = dir / fmt::format("steering_{}.bin", tag);
    write_container(tensors,
                    {{"coefficient", tag},
                     {"mode", std::string(to_string(s.mode))},
                     {"apply_rule", s.apply_rule},
                     {"layers", fmt::format("{}", fmt::join(layer_ids, ","))},
                     {"per_token_gain_requires_live_activation", "true"}},
                    bin);
    write_json_file(dir / "steering_meta.json", meta);
    return bin;
}

SteeringExport read_steering(const fs::path& bin_path) {
    const Container c = read_container(bin_path);
    SteeringExport s;
    auto meta = [&](const char* k) {
        auto it = c.metadata.find(k);
        if (it == c.metadata.end()) throw DataError(fmt::format("{}: missing metadata '{}'", bin_path.string(), k));
        return it->second;
    };
    s.coefficient = std::stod(meta("coefficient"));
    s.mode = parse_patch_mode(meta("mode"));
    s.apply_rule = meta("apply_rule");
    const std::string layers = meta("layers");
    std::size_t pos = 0;
    while (pos < layers.size()) {
        const std::size_t comma = layers.find(',', pos);
        const int layer = std::stoi(layers.substr(pos, comma - pos));
        pos = comma == std::string::npos ? layers.size() : comma + 1;
        const std::string pre = fmt::format("layer_{}.", layer);
        auto get = [&](const std::string& n) -> const Tensor& {
            auto it = c.tensors.find(pre + n);
            if (it == c.tensors.end()) throw DataError(fmt::format("{}: missing '{}'", bin_path.string(), pre + n));
            return it->second;
        };
        const Tensor& dirs = get("directions");
        const std::size_t k = dirs.shape.at(0), d = dirs.shape.at(1);
        SteeringLayer l;
        l.layer = layer;
        for (std::size_t r = 0; r < k; ++r) {
            l.directions.emplace_back(dirs.data.begin() + static_cast<std::ptrdiff_t>(r * d),
                                      dirs.data.begin() + static_cast<std::ptrdiff_t>((r + 1) * d));
            l.gains.push_back(get("gains").data.at(r));
            l.decoder_norms.push_back(get("decoder_norms").data.at(r));
            l.feature_index.push_back(static_cast<std::uint32_t>(get("feature_index").data.at(r)));
        }
        s.layers.push_back(std::move(l));
    }
    return s;
}

}  // namespace initfeat
