#pragma once

#include <cstdint>
#include <vector>

#include "comatch/common.hpp"
#include "comatch/tensor.hpp"

namespace comatch::inter {

/// Column-normalized features of a group of images, concatenated image-major.
/// Column p of image g sits at index g*w*h + p.
struct FeaturePack {
    Tensor features;                // {c, n_total}, unit-norm columns
    std::vector<double> raw_norms;  // pre-normalization activation norm per column
    int group_n = 0;
    int w = 0, h = 0, c = 0;

    std::size_t n_total() const { return static_cast<std::size_t>(group_n) * w * h; }
};

/// Pairwise affinity of the packed columns: inner products minus one.
/// Symmetric, zero diagonal, entries in [-2, 0]; equals -1/2 of the squared
/// Euclidean distance matrix of the columns.
struct AffinityMatrix {
    Tensor values;  // {n_total, n_total}
};

enum class IndicatorMode { Discrete, Relaxed };

/// Signed foreground/background assignment of every packed column. Discrete
/// mode holds +-1/sqrt(n); relaxed mode is any unit vector with zero mean.
struct ClusterIndicator {
    Tensor values;  // {n_total}
    IndicatorMode mode = IndicatorMode::Relaxed;
};

/// Per-image slice of an indicator, reshaped to the spatial grid.
struct CoMask {
    int w = 0, h = 0;
    Tensor values;  // {h, w}, entry (r,c) = indicator[r*w + c] of this image
};

struct InterMatchConfig {
    double alpha = 1.5;        // foreground re-weighting factor, must be > 1
    int group_n = 2;
    int power_iters_max = 500;
    double tol = 1e-8;         // stop when successive Rayleigh quotients differ less
};

struct SolveResult {
    ClusterIndicator indicator;  // relaxed, unit norm, zero mean
    double rayleigh = 0.0;       // m' A m at the returned iterate
    int iterations = 0;
    bool converged = false;
    bool degenerate = false;     // affinity is numerically zero; any feasible vector ties
    std::vector<double> rayleigh_trace;  // quotient per iteration
};

/// Concatenates >=2 same-shape feature maps image-major and normalizes the
/// columns, recording their raw activation norms.
FeaturePack pack_features(const std::vector<FeatureMap>& maps);

/// Clustering objective evaluated literally: squared distances within the
/// foreground set plus within the background set minus both cross sums.
/// fg[i] nonzero marks column i as foreground.
double sum_objective(const std::vector<std::uint8_t>& fg, const FeaturePack& pack);

/// Discrete indicator (+-1/sqrt(n)) for a foreground flag vector.
ClusterIndicator indicator_from_assignment(const std::vector<std::uint8_t>& fg);

/// Matrix form of the objective, n_total * m'Dm over the squared-distance
/// matrix. Agrees with sum_objective exactly for every discrete indicator.
double matrix_objective(const ClusterIndicator& m, const FeaturePack& pack);

AffinityMatrix build_affinity(const FeaturePack& pack);

/// Maximizes m'Am over unit vectors with zero mean by shifted power
/// iteration: the operator A + n*I is positive on the feasible subspace, the
/// iterate is re-centered and re-normalized after every multiply, and the
/// loop stops when the Rayleigh quotient settles within cfg.tol.
SolveResult solve_indicator(const AffinityMatrix& a, const InterMatchConfig& cfg);

/// Resolves the eigenvector sign so that the positive side carries the larger
/// mean raw activation norm. Exact ties keep the input sign.
ClusterIndicator orient(const ClusterIndicator& m, const std::vector<double>& raw_norms);

/// Image-major split of an indicator into one spatial mask per group image.
std::vector<CoMask> split_masks(const ClusterIndicator& m, int w, int h, int group_n);

/// Scales feature columns by alpha where the mask is positive and leaves the
/// rest untouched. Zero mask entries count as background.
FeatureMap reweight(const FeatureMap& f, const CoMask& mask, double alpha);

/// Sign-rounding of a relaxed indicator; entries > 0 become foreground.
std::vector<std::uint8_t> round_indicator(const ClusterIndicator& m);

struct BruteForceResult {
    std::vector<std::uint8_t> assignment;
    double objective = 0.0;
};

/// Exhaustive minimizer of sum_objective over all 2^n assignments, ties
/// resolved to the lexicographically smallest flag vector. Test oracle;
/// refuses n_total > 16.
BruteForceResult brute_force(const FeaturePack& pack);

/// Median wall-clock seconds of pack -> affinity -> solve on random feature
/// maps of the given size. group_n must lie in [2,5].
double time_group_match(int w, int h, int c, int group_n, int trials);

}  // namespace comatch::inter
