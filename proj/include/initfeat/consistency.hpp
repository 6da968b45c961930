#pragma once

// Stage 3: PCA consistency of a group of influence directions.
//
// Rows of U are the unit-normalized vectors. The score is the largest
// eigenvalue of S = (1/n) UᵀU, with no mean-centering, so antipodal vectors
// count as aligned. When n < d the n×n Gram matrix (1/n) U Uᵀ is iterated
// instead; it has the same nonzero spectrum.

#include "initfeat/common.hpp"
#include "initfeat/report.hpp"

#include <vector>

namespace initfeat {

struct PowerIterationOptions {
    double tolerance = 1e-10;  // on successive Rayleigh quotients
    double residual_tolerance = 1e-10;  // on |Mx - rq x|
    std::size_t max_iterations = 10000;
};

struct EigenEstimate {
    double value = 0.0;
    std::vector<double> vector;
    std::size_t iterations = 0;
    bool converged = false;
};

/// Dominant eigenpair of a symmetric PSD matrix (row-major, dim×dim) by power
/// iteration from a fixed start vector.
EigenEstimate dominant_eigen(const std::vector<double>& matrix, std::size_t dim,
                             const PowerIterationOptions& opts = {});

struct PcaConsistency {
    double rho = 0.0;
    std::vector<double> pc1;  // unit, d
    double lambda2 = 0.0;     // second eigenvalue estimate (deflation)
    bool pc1_unstable = false;  // lambda_max − lambda2 < 1e-9
    std::size_t iterations = 0;
    bool converged = false;
};

/// Throws DataError for n < 2, mismatched lengths, or any vector with norm
/// <= 1e-12 ("degenerate direction", listing offenders).
PcaConsistency pca_consistency(const std::vector<std::vector<double>>& vectors,
                               const PowerIterationOptions& opts = {});

/// |u_i · pc1| for each unit-normalized u_i, clamped to [0, 1].
std::vector<double> alignment_scores(const std::vector<std::vector<double>>& vectors,
                                     const std::vector<double>& pc1);

struct InfluenceDirection {
    FeatureId feature;
    std::vector<double> direction;
};

struct GroupReport {
    int layer = 0;
    std::size_t size = 0;
    bool skipped = false;  // fewer than two candidates
    double rho = 0.0;
    std::vector<double> pc1;
    double lambda2 = 0.0;
    bool pc1_unstable = false;
    bool group_pass = false;
    std::vector<std::pair<FeatureId, double>> alignments;
};

struct ConsistencyReport {
    double tau_cons = 0.95;
    double tau_align = 0.95;
    std::vector<GroupReport> groups;  // ascending layer
};

struct FinalFeature {
    FeatureId feature;
    double alignment = 0.0;
    double layer_rho = 0.0;
};

struct FinalFeatureSet {
    double tau_cons = 0.95;
    double tau_align = 0.95;
    bool require_group_pass = true;
    std::vector<FinalFeature> features;  // ordered by (layer, index)

    std::vector<FeatureId> ids() const;
};

struct FilterOptions {
    double tau_cons = 0.95;
    double tau_align = 0.95;
    // false: keep any feature whose own alignment passes, regardless of its
    // group's score.
    bool require_group_pass = true;
    PowerIterationOptions power;
    unsigned threads = 1;
};

struct FilterResult {
    ConsistencyReport report;
    FinalFeatureSet final_set;
};

/// Groups candidates by layer, scores each group, and keeps features whose
/// group rho > tau_cons and whose alignment > tau_align.
FilterResult filter_features(const std::vector<InfluenceDirection>& candidates,
                             const FilterOptions& opts = {});

ojson to_json(const ConsistencyReport& r);
ojson to_json(const FinalFeatureSet& s);
FinalFeatureSet final_set_from_json(const ojson& j);

}  // namespace initfeat
