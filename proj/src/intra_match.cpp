#include "comatch/intra_match.hpp"

#include <cmath>
#include <string>

namespace comatch::intra {

PointUpdateParams PointUpdateParams::init(int c, RngStream& rng) {
    const double s = 1.0 / std::sqrt(static_cast<double>(c));
    PointUpdateParams p;
    p.w1 = Tensor({static_cast<std::size_t>(c), static_cast<std::size_t>(c)});
    p.b1 = Tensor({static_cast<std::size_t>(c)});
    p.w2 = Tensor({static_cast<std::size_t>(c), static_cast<std::size_t>(c)});
    p.b2 = Tensor({static_cast<std::size_t>(c)});
    for (double& v : p.w1.values()) v = rng.uniform(-s, s);
    for (double& v : p.w2.values()) v = rng.uniform(-s, s);
    return p;
}

SimilarityMatrix similarity(const FeatureMap& f) {
    Tensor g = matmul(transpose(f.x), f.x);
    const std::size_t n = g.extent(0);
    for (std::size_t i = 0; i < n; ++i) g.at(i, i) = kNegInf;
    return SimilarityMatrix{std::move(g)};
}

MatchIndex top_k_match(const SimilarityMatrix& g, int k) {
    return top_k_rows(g.values, k);
}

Tensor gather(const Tensor& f_cols, const MatchIndex& idx) {
    if (f_cols.rank() != 2) throw DimensionError("gather needs {c,n} features");
    const std::size_t c = f_cols.extent(0), n = f_cols.extent(1);
    if (idx.rows != n) throw DimensionError("gather: index rows must match point count");
    const std::size_t K = static_cast<std::size_t>(idx.k);
    Tensor out({c, n, K});
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < K; ++j) {
            const std::int64_t src = idx.at(i, static_cast<int>(j));
            if (src < 0 || static_cast<std::size_t>(src) >= n) {
                throw ContractError("gather: index out of range: " + std::to_string(src));
            }
            for (std::size_t ch = 0; ch < c; ++ch) out.at(ch, i, j) = f_cols.at(ch, src);
        }
    }
    return out;
}

FeatureMap update_points(const Tensor& neigh, const PointUpdateParams& p, int w, int h,
                         UpdateCache* cache) {
    if (neigh.rank() != 3) throw DimensionError("update_points needs {c,n,K} neighbors");
    const std::size_t c = neigh.extent(0), n = neigh.extent(1), K = neigh.extent(2);
    if (p.w1.extent(0) != c || p.w1.extent(1) != c || p.w2.extent(0) != c || p.w2.extent(1) != c ||
        p.b1.extent(0) != c || p.b2.extent(0) != c) {
        throw DimensionError("update_points: parameter extents must match channel count");
    }
    if (static_cast<std::size_t>(w) * h != n) {
        throw DimensionError("update_points: grid extents do not match point count");
    }

    Tensor pre1({c, n, K});
    Tensor mlp_out({c, n, K});
    std::vector<double> hidden(c);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < K; ++j) {
            for (std::size_t r = 0; r < c; ++r) {
                double acc = p.b1[r];
                const double* wrow = p.w1.data() + r * c;
                for (std::size_t t = 0; t < c; ++t) acc += wrow[t] * neigh.at(t, i, j);
                pre1.at(r, i, j) = acc;
                hidden[r] = acc > 0.0 ? acc : 0.0;
            }
            for (std::size_t r = 0; r < c; ++r) {
                double acc = p.b2[r];
                const double* wrow = p.w2.data() + r * c;
                for (std::size_t t = 0; t < c; ++t) acc += wrow[t] * hidden[t];
                mlp_out.at(r, i, j) = acc;
            }
        }
    }

    FeatureMap out;
    out.w = w;
    out.h = h;
    out.c = static_cast<int>(c);
    out.x = Tensor({c, n});
    std::vector<int> winner(c * n, 0);
    for (std::size_t ch = 0; ch < c; ++ch) {
        for (std::size_t i = 0; i < n; ++i) {
            double best = mlp_out.at(ch, i, 0);
            int best_j = 0;
            for (std::size_t j = 1; j < K; ++j) {
                const double v = mlp_out.at(ch, i, j);
                if (v > best) {  // strict: ties stay on the lowest slot
                    best = v;
                    best_j = static_cast<int>(j);
                }
            }
            out.x.at(ch, i) = best;
            winner[ch * n + i] = best_j;
        }
    }

    if (cache) {
        cache->neigh = neigh;
        cache->pre1 = std::move(pre1);
        cache->mlp_out = std::move(mlp_out);
        cache->winner = std::move(winner);
        cache->valid = true;
    }
    return out;
}

UpdateGrads backward_update(const Tensor& d_out, const UpdateCache& cache,
                            const PointUpdateParams& p) {
    if (!cache.valid) throw ContractError("backward_update: forward cache missing");
    const std::size_t c = cache.neigh.extent(0), n = cache.neigh.extent(1),
                      K = cache.neigh.extent(2);
    if (d_out.rank() != 2 || d_out.extent(0) != c || d_out.extent(1) != n) {
        throw DimensionError("backward_update: gradient extents mismatch");
    }

    UpdateGrads g;
    g.d_neigh = Tensor({c, n, K});
    g.d_params.w1 = Tensor({c, c});
    g.d_params.b1 = Tensor({c});
    g.d_params.w2 = Tensor({c, c});
    g.d_params.b2 = Tensor({c});

    // Route each output gradient to the slot that won its channel max.
    Tensor d_mlp_out({c, n, K});
    for (std::size_t ch = 0; ch < c; ++ch) {
        for (std::size_t i = 0; i < n; ++i) {
            const int j = cache.winner[ch * n + i];
            d_mlp_out.at(ch, i, j) += d_out.at(ch, i);
        }
    }

    std::vector<double> d2(c), dh(c), d1(c);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < K; ++j) {
            bool any = false;
            for (std::size_t r = 0; r < c; ++r) {
                d2[r] = d_mlp_out.at(r, i, j);
                any = any || d2[r] != 0.0;
            }
            if (!any) continue;  // no channel won through this slot

            for (std::size_t r = 0; r < c; ++r) {
                const double gr = d2[r];
                if (gr == 0.0) continue;
                g.d_params.b2[r] += gr;
                double* wrow = g.d_params.w2.data() + r * c;
                for (std::size_t t = 0; t < c; ++t) {
                    const double pre = cache.pre1.at(t, i, j);
                    wrow[t] += gr * (pre > 0.0 ? pre : 0.0);
                }
            }
            for (std::size_t t = 0; t < c; ++t) {
                double acc = 0.0;
                for (std::size_t r = 0; r < c; ++r) acc += p.w2.at(r, t) * d2[r];
                dh[t] = acc;
                d1[t] = cache.pre1.at(t, i, j) > 0.0 ? acc : 0.0;
            }
            for (std::size_t r = 0; r < c; ++r) {
                const double gr = d1[r];
                if (gr == 0.0) continue;
                g.d_params.b1[r] += gr;
                double* wrow = g.d_params.w1.data() + r * c;
                for (std::size_t t = 0; t < c; ++t) wrow[t] += gr * cache.neigh.at(t, i, j);
            }
            for (std::size_t t = 0; t < c; ++t) {
                double acc = 0.0;
                for (std::size_t r = 0; r < c; ++r) acc += p.w1.at(r, t) * d1[r];
                g.d_neigh.at(t, i, j) = acc;
            }
        }
    }
    return g;
}

Tensor gather_backward(const Tensor& d_neigh, const MatchIndex& idx, std::size_t n_cols) {
    if (d_neigh.rank() != 3) throw DimensionError("gather_backward needs {c,n,K} gradients");
    const std::size_t c = d_neigh.extent(0), n = d_neigh.extent(1), K = d_neigh.extent(2);
    if (idx.rows != n || static_cast<std::size_t>(idx.k) != K) {
        throw DimensionError("gather_backward: index table extents mismatch");
    }
    Tensor out({c, n_cols});
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < K; ++j) {
            const std::int64_t src = idx.at(i, static_cast<int>(j));
            if (src < 0 || static_cast<std::size_t>(src) >= n_cols) {
                throw ContractError("gather_backward: index out of range");
            }
            for (std::size_t ch = 0; ch < c; ++ch) out.at(ch, src) += d_neigh.at(ch, i, j);
        }
    }
    return out;
}

}  // namespace comatch::intra
