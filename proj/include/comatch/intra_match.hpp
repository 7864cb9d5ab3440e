#pragma once

#include <vector>

#include "comatch/common.hpp"
#include "comatch/tensor.hpp"

namespace comatch::intra {

/// Pairwise inner products of the feature columns with the diagonal replaced
/// by a -Inf sentinel so a point can never match itself. The sentinel is read
/// only by top-k selection, never by arithmetic.
struct SimilarityMatrix {
    Tensor values;  // {n, n}
};

/// Two-layer point MLP, c -> c -> c with a rectifier in between.
struct PointUpdateParams {
    Tensor w1;  // {c, c}
    Tensor b1;  // {c}
    Tensor w2;  // {c, c}
    Tensor b2;  // {c}

    static PointUpdateParams init(int c, RngStream& rng);
};

struct IntraMatchConfig {
    int k = 8;  // correspondences per point, must be < w*h
};

SimilarityMatrix similarity(const FeatureMap& f);

/// Top-k correspondences per point; the sentinel keeps the self index out.
MatchIndex top_k_match(const SimilarityMatrix& g, int k);

/// out[:, i, j] = f[:, idx[i, j]].
Tensor gather(const Tensor& f_cols, const MatchIndex& idx);

/// Forward activations retained for the backward pass.
struct UpdateCache {
    Tensor neigh;       // {c, n, K} gathered inputs
    Tensor pre1;        // {c, n, K} first-layer pre-activation
    Tensor mlp_out;     // {c, n, K} second-layer output
    std::vector<int> winner;  // c*n argmax slot per output entry
    bool valid = false;
};

/// Each point becomes the elementwise max over the MLP images of its K
/// neighbors. Ties go to the lowest slot so gradients route deterministically.
FeatureMap update_points(const Tensor& neigh, const PointUpdateParams& p, int w, int h,
                         UpdateCache* cache = nullptr);

struct UpdateGrads {
    Tensor d_neigh;  // {c, n, K}
    PointUpdateParams d_params;
};

/// Reverse-mode gradients of update_points. The max routes each output
/// gradient to its winning slot only.
UpdateGrads backward_update(const Tensor& d_out, const UpdateCache& cache,
                            const PointUpdateParams& p);

/// Adjoint of gather: scatter-adds slot gradients back onto source columns.
Tensor gather_backward(const Tensor& d_neigh, const MatchIndex& idx, std::size_t n_cols);

}  // namespace comatch::intra
