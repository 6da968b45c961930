#include "initfeat/consistency.hpp"

#include "initfeat/kernels.hpp"
#include "initfeat/parallel.hpp"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <map>

namespace initfeat {

namespace {

void matvec(const std::vector<double>& m, std::size_t dim, std::span<const double> x,
            std::span<double> y) {
    for (std::size_t r = 0; r < dim; ++r)
        y[r] = kernels::dot(std::span<const double>(m).subspan(r * dim, dim), x);
}

double norm2(std::span<const double> v) { return std::sqrt(kernels::dot(v, v)); }

// Sign convention: the component sum of U·pc1 is non-negative; ties go to the
// first nonzero entry being positive.
void orient(std::vector<double>& pc1, const std::vector<std::vector<double>>& unit_rows) {
    double s = 0.0;
    for (const auto& u : unit_rows) s += kernels::dot(u, pc1);
    bool flip = s < 0.0;
    if (s == 0.0)
        for (double x : pc1)
            if (x != 0.0) {
                flip = x < 0.0;
                break;
            }
    if (flip)
        for (double& x : pc1) x = -x;
}

}  // namespace

EigenEstimate dominant_eigen(const std::vector<double>& m, std::size_t dim,
                             const PowerIterationOptions& opts) {
    if (dim == 0 || m.size() != dim * dim) throw DataError("dominant_eigen: bad matrix size");
    EigenEstimate e;
    std::vector<double> x(dim), y(dim);
    // All-ones perturbed by a golden-ratio sequence of the index.
    for (std::size_t i = 0; i < dim; ++i) {
        const double frac = std::fmod(static_cast<double>(i + 1) * 0.6180339887498949, 1.0);
        x[i] = 1.0 + 0.1 * frac;
    }
    const double x0 = norm2(x);
    for (double& v : x) v /= x0;

    double prev = 0.0;
    for (std::size_t it = 1; it <= opts.max_iterations; ++it) {
        matvec(m, dim, x, y);
        const double rq = kernels::dot(x, y);
        const double len = norm2(y);
        e.iterations = it;
        if (len == 0.0) {
            e.value = 0.0;
            e.vector = x;
            e.converged = true;
            return e;
        }
        double res = 0.0;
        for (std::size_t i = 0; i < dim; ++i) res += (y[i] - rq * x[i]) * (y[i] - rq * x[i]);
        for (std::size_t i = 0; i < dim; ++i) x[i] = y[i] / len;
        e.value = rq;
        if (it > 1 && std::abs(rq - prev) < opts.tolerance) e.converged = true;
        // The quotient settles long before the vector does; keep going until the residual is small too.
        if (e.converged && std::sqrt(res) < opts.residual_tolerance) break;
        prev = rq;
    }
    // Rayleigh quotient of the final iterate.
    matvec(m, dim, x, y);
    e.value = kernels::dot(x, y);
    e.vector = std::move(x);
    return e;
}

PcaConsistency pca_consistency(const std::vector<std::vector<double>>& vectors,
                               const PowerIterationOptions& opts) {
    const std::size_t n = vectors.size();
    if (n < 2) throw DataError(fmt::format("PCA consistency needs at least 2 vectors, got {}", n));
    const std::size_t d = vectors.front().size();
    std::vector<std::vector<double>> u(n);
    std::vector<std::size_t> degenerate;
    for (std::size_t i = 0; i < n; ++i) {
        if (vectors[i].size() != d) throw DataError("PCA consistency: vectors differ in length");
        const double len = norm2(vectors[i]);
        if (!(len > 1e-12)) {
            degenerate.push_back(i);
            continue;
        }
        u[i] = vectors[i];
        for (double& x : u[i]) x /= len;
    }
    if (!degenerate.empty())
        throw DataError(fmt::format("degenerate direction at vector index {}", fmt::join(degenerate, ", ")));

    const double inv_n = 1.0 / static_cast<double>(n);
    PcaConsistency out;
    std::vector<double> mat;
    std::size_t dim;
    const bool gram = n < d;
    if (gram) {
        dim = n;
        mat.assign(n * n, 0.0);
        for (std::size_t a = 0; a < n; ++a)
            for (std::size_t b = a; b < n; ++b) {
                const double g = kernels::dot(u[a], u[b]) * inv_n;
                mat[a * n + b] = g;
                mat[b * n + a] = g;
            }
    } else {
        dim = d;
        mat.assign(d * d, 0.0);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t a = 0; a < d; ++a)
                kernels::axpy(u[i][a] * inv_n, std::span<const double>(u[i]),
                              std::span<double>(mat).subspan(a * d, d));
    }

    const EigenEstimate top = dominant_eigen(mat, dim, opts);
    out.rho = top.value;
    out.iterations = top.iterations;
    out.converged = top.converged;
    if (!top.converged)
        spdlog::warn("PCA consistency: power iteration hit {} iterations without converging",
                     opts.max_iterations);

    if (gram) {
        out.pc1.assign(d, 0.0);
        for (std::size_t i = 0; i < n; ++i) kernels::axpy(top.vector[i], std::span<const double>(u[i]), out.pc1);
        const double len = norm2(out.pc1);
        for (double& x : out.pc1) x /= len;
    } else {
        out.pc1 = top.vector;
    }
    orient(out.pc1, u);

    std::vector<double> deflated = mat;
    for (std::size_t a = 0; a < dim; ++a)
        for (std::size_t b = 0; b < dim; ++b)
            deflated[a * dim + b] -= top.value * top.vector[a] * top.vector[b];
    out.lambda2 = std::max(0.0, dominant_eigen(deflated, dim, opts).value);
    out.pc1_unstable = out.rho - out.lambda2 < 1e-9;
    return out;
}

std::vector<double> alignment_scores(const std::vector<std::vector<double>>& vectors,
                                     const std::vector<double>& pc1) {
    std::vector<double> out;
    out.reserve(vectors.size());
    for (const auto& v : vectors) {
        if (v.size() != pc1.size()) throw DataError("alignment: vector length differs from pc1");
        const double len = norm2(v);
        if (len == 0.0) {
            out.push_back(0.0);
            continue;
        }
        out.push_back(std::clamp(std::abs(kernels::dot(v, pc1)) / len, 0.0, 1.0));
    }
    return out;
}

std::vector<FeatureId> FinalFeatureSet::ids() const {
    std::vector<FeatureId> out;
    for (const auto& f : features) out.push_back(f.feature);
    return out;
}

FilterResult filter_features(const std::vector<InfluenceDirection>& candidates,
                             const FilterOptions& opts) {
    std::map<int, std::vector<const InfluenceDirection*>> by_layer;
    for (const auto& c : candidates) by_layer[c.feature.layer].push_back(&c);
    for (auto& [layer, members] : by_layer)
        std::sort(members.begin(), members.end(),
                  [](const auto* a, const auto* b) { return a->feature < b->feature; });

    std::vector<std::pair<int, std::vector<const InfluenceDirection*>>> groups(by_layer.begin(),
                                                                               by_layer.end());
    std::vector<GroupReport> reports(groups.size());
    parallel_for(groups.size(), opts.threads, [&](std::size_t begin, std::size_t end, std::size_t) {
        for (std::size_t g = begin; g < end; ++g) {
            const auto& [layer, members] = groups[g];
            GroupReport r;
            r.layer = layer;
            r.size = members.size();
            if (members.size() < 2) {
                r.skipped = true;
                reports[g] = std::move(r);
                continue;
            }
            std::vector<std::vector<double>> vecs;
            for (const auto* m : members) vecs.push_back(m->direction);
            const PcaConsistency pca = pca_consistency(vecs, opts.power);
            r.rho = pca.rho;
            r.pc1 = pca.pc1;
            r.lambda2 = pca.lambda2;
            r.pc1_unstable = pca.pc1_unstable;
            r.group_pass = pca.rho > opts.tau_cons;
            const std::vector<double> align = alignment_scores(vecs, pca.pc1);
            for (std::size_t i = 0; i < members.size(); ++i)
                r.alignments.emplace_back(members[i]->feature, align[i]);
            reports[g] = std::move(r);
        }
    });

    FilterResult out;
    out.report.tau_cons = opts.tau_cons;
    out.report.tau_align = opts.tau_align;
    out.final_set.tau_cons = opts.tau_cons;
    out.final_set.tau_align = opts.tau_align;
    out.final_set.require_group_pass = opts.require_group_pass;
    for (auto& r : reports) {
        if (r.skipped) {
            spdlog::warn("consistency: layer {} has a single candidate; group skipped", r.layer);
        } else {
            if (r.pc1_unstable)
                spdlog::warn("consistency: layer {} PC1 is unstable (lambda gap {:.3g})", r.layer,
                             r.rho - r.lambda2);
            for (const auto& [f, a] : r.alignments) {
                const bool group_ok = !opts.require_group_pass || r.group_pass;
                if (group_ok && a > opts.tau_align) out.final_set.features.push_back({f, a, r.rho});
            }
        }
        out.report.groups.push_back(std::move(r));
    }
    return out;
}

ojson to_json(const ConsistencyReport& r) {
    ojson j;
    j["tau_cons"] = r.tau_cons;
    j["tau_align"] = r.tau_align;
    j["alignment_metric"] = "abs_cosine";
    j["centering"] = "none";
    ojson groups = ojson::array();
    for (const auto& g : r.groups) {
        ojson gj;
        gj["layer"] = g.layer;
        gj["size"] = g.size;
        gj["skipped"] = g.skipped;
        if (!g.skipped) {
            gj["rho"] = sig9(g.rho);
            gj["lambda2"] = sig9z(g.lambda2);
            gj["pc1_unstable"] = g.pc1_unstable;
            gj["group_pass"] = g.group_pass;
            ojson al = ojson::object();
            for (const auto& [f, a] : g.alignments) al[to_string(f)] = sig9(a);
            gj["alignments"] = std::move(al);
            ojson pc = ojson::array();
            for (double x : g.pc1) pc.push_back(sig9z(x));
            gj["pc1"] = std::move(pc);
        }
        groups.push_back(std::move(gj));
    }
    j["groups"] = std::move(groups);
    return j;
}

ojson to_json(const FinalFeatureSet& s) {
    ojson j;
    j["tau_cons"] = s.tau_cons;
    j["tau_align"] = s.tau_align;
    j["rule"] = s.require_group_pass ? "group_rho > tau_cons AND alignment > tau_align"
                                     : "alignment > tau_align";
    j["count"] = s.features.size();
    ojson feats = ojson::array();
    for (const auto& f : s.features) {
        ojson fj;
        fj["layer"] = f.feature.layer;
        fj["index"] = f.feature.index;
        fj["alignment"] = sig9(f.alignment);
        fj["layer_rho"] = sig9(f.layer_rho);
        feats.push_back(std::move(fj));
    }
    j["features"] = std::move(feats);
    return j;
}

FinalFeatureSet final_set_from_json(const ojson& j) {
    FinalFeatureSet s;
    try {
        s.tau_cons = j.at("tau_cons").get<double>();
        s.tau_align = j.at("tau_align").get<double>();
        s.require_group_pass = j.value("rule", std::string{}).find("group_rho") != std::string::npos;
        for (const auto& f : j.at("features"))
            s.features.push_back({{f.at("layer").get<int>(), f.at("index").get<std::uint32_t>()},
                                  f.at("alignment").get<double>(),
                                  f.at("layer_rho").get<double>()});
    } catch (const ojson::exception& e) {
        throw DataError(fmt::format("malformed final feature set: {}", e.what()));
    }
    return s;
}

}  // namespace initfeat
