#include "initfeat/recall.hpp"

#include "initfeat/parallel.hpp"

#include <fmt/format.h>

namespace initfeat {

bool feature_present(const SaeParams& p, const PositionRecord& record, std::uint32_t j) {
    const SubsetEncoder enc(p, {j});
    for (const auto& h : record)
        if (enc.encode(h)[0] > 0.0) return true;
    return false;
}

LayerRecall recall_layer(const ActivationDataset& ds, const SaeParams& p, double tau_freq,
                         const RecallOptions& opts) {
    if (ds.num_samples() == 0) throw DataError("recall: empty dataset");
    if (ds.d_model() != p.d_model)
        throw DataError(fmt::format("recall: layer {} SAE d_model {} != dataset d_model {}", p.layer,
                                    p.d_model, ds.d_model()));
    if (!(tau_freq > 0.0 && tau_freq <= 1.0))
        throw UsageError(fmt::format("tau_freq must be in (0, 1], got {}", tau_freq));
    const DecimalRatio tau = DecimalRatio::from_double(tau_freq);

    const std::size_t n = ds.num_samples();
    const std::size_t workers = std::min<std::size_t>(resolve_threads(opts.threads), n);
    std::vector<std::vector<std::uint32_t>> partial(workers, std::vector<std::uint32_t>(p.d_sae, 0));

    parallel_for(n, static_cast<unsigned>(workers), [&](std::size_t begin, std::size_t end, std::size_t w) {
        std::vector<std::uint8_t> present(p.d_sae);
        auto& counts = partial[w];
        for (std::size_t s = begin; s < end; ++s) {
            std::fill(present.begin(), present.end(), 0);
            for (Position pos : kAllPositions) {
                if (!opts.positions.on[index_of(pos)]) continue;
                const std::vector<double> a = encode(p, ds.hidden(s, p.layer, pos));
                for (std::size_t j = 0; j < p.d_sae; ++j) present[j] |= a[j] > 0.0;
            }
            for (std::size_t j = 0; j < p.d_sae; ++j) counts[j] += present[j];
        }
    });

    LayerRecall out;
    out.layer = p.layer;
    out.d_sae = p.d_sae;
    out.num_samples = n;
    out.presence.assign(p.d_sae, 0);
    for (const auto& c : partial)
        for (std::size_t j = 0; j < p.d_sae; ++j) out.presence[j] += c[j];
    for (std::size_t j = 0; j < p.d_sae; ++j)
        if (tau.met_by(out.presence[j], n)) out.recalled.push_back(static_cast<std::uint32_t>(j));
    return out;
}

RecallReport recall_features(const ActivationDataset& ds, const std::map<int, SaeParams>& saes,
                             double tau_freq, const RecallOptions& opts) {
    if (ds.num_samples() == 0) throw DataError("recall: empty dataset");
    RecallReport r;
    r.tau_freq = tau_freq;
    r.num_samples = ds.num_samples();
    for (const auto& [layer, p] : saes) {
        if (!ds.has_layer(layer)) throw DataError(fmt::format("recall: dataset has no layer {}", layer));
        r.layers.push_back(recall_layer(ds, p, tau_freq, opts));
    }
    return r;
}

std::vector<FeatureId> RecallReport::candidates() const {
    std::vector<FeatureId> out;
    for (const auto& l : layers)
        for (std::uint32_t j : l.recalled) out.push_back({l.layer, j});
    return out;
}

const LayerRecall& RecallReport::layer(int l) const {
    for (const auto& x : layers)
        if (x.layer == l) return x;
    throw DataError(fmt::format("recall report has no layer {}", l));
}

ojson to_json(const RecallReport& r) {
    ojson j;
    j["tau_freq"] = r.tau_freq;
    j["num_samples"] = r.num_samples;
    j["presence_rule"] = "union(src_last,tgt_lang,input_last), activation > 0";
    ojson layers = ojson::array();
    std::size_t total = 0;
    for (const auto& l : r.layers) {
        ojson lj;
        lj["layer"] = l.layer;
        lj["d_sae"] = l.d_sae;
        lj["recalled_count"] = l.recalled.size();
        lj["rate"] = sig9(l.rate());
        ojson feats = ojson::object();
        ojson counts = ojson::object();
        for (std::uint32_t f : l.recalled) {
            feats[std::to_string(f)] = sig9(l.frequency(f));
            counts[std::to_string(f)] = l.presence[f];
        }
        lj["features"] = std::move(feats);
        lj["counts"] = std::move(counts);
        layers.push_back(std::move(lj));
        total += l.recalled.size();
    }
    j["total_candidates"] = total;
    j["layers"] = std::move(layers);
    return j;
}

RecallReport recall_report_from_json(const ojson& j) {
    RecallReport r;
    try {
        r.tau_freq = j.at("tau_freq").get<double>();
        r.num_samples = j.at("num_samples").get<std::size_t>();
        for (const auto& lj : j.at("layers")) {
            LayerRecall l;
            l.layer = lj.at("layer").get<int>();
            l.d_sae = lj.at("d_sae").get<std::size_t>();
            l.num_samples = r.num_samples;
            l.presence.assign(l.d_sae, 0);
            for (const auto& [k, v] : lj.at("counts").items()) {
                const auto idx = static_cast<std::uint32_t>(std::stoul(k));
                if (idx >= l.d_sae) throw DataError("recall report: feature index out of range");
                l.recalled.push_back(idx);
                l.presence[idx] = v.get<std::uint32_t>();
            }
            std::sort(l.recalled.begin(), l.recalled.end());
            r.layers.push_back(std::move(l));
        }
    } catch (const ojson::exception& e) {
        throw DataError(fmt::format("malformed recall report: {}", e.what()));
    }
    return r;
}

}  // namespace initfeat
