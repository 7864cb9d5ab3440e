#include "comatch/inter_match.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <string>

namespace comatch::inter {

namespace {

constexpr std::uint64_t kSolverInitSeed = 0x434F4D4Eull;  // fixed start vector for all solves

double dot(const Tensor& a, const Tensor& b) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
    return acc;
}

void center(Tensor& v) {
    double mean = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) mean += v[i];
    mean /= static_cast<double>(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] -= mean;
}

double norm(const Tensor& v) { return std::sqrt(dot(v, v)); }

// Squared-distance matrix of the packed columns.
Tensor distance_matrix(const FeaturePack& pack) {
    const std::size_t n = pack.n_total();
    const std::size_t c = pack.features.extent(0);
    Tensor d({n, n});
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            double acc = 0.0;
            for (std::size_t ch = 0; ch < c; ++ch) {
                const double diff = pack.features.at(ch, i) - pack.features.at(ch, j);
                acc += diff * diff;
            }
            d.at(i, j) = acc;
        }
    }
    return d;
}

}  // namespace

FeaturePack pack_features(const std::vector<FeatureMap>& maps) {
    if (maps.size() < 2) throw DimensionError("pack_features needs at least two maps");
    const int w = maps[0].w, h = maps[0].h, c = maps[0].c;
    for (const auto& m : maps) {
        if (m.w != w || m.h != h || m.c != c) {
            throw DimensionError("pack_features: group maps must share extents");
        }
    }
    const std::size_t wh = static_cast<std::size_t>(w) * h;
    const std::size_t n_total = maps.size() * wh;
    Tensor raw({static_cast<std::size_t>(c), n_total});
    for (std::size_t g = 0; g < maps.size(); ++g) {
        for (std::size_t ch = 0; ch < static_cast<std::size_t>(c); ++ch) {
            for (std::size_t p = 0; p < wh; ++p) {
                raw.at(ch, g * wh + p) = maps[g].x.at(ch, p);
            }
        }
    }
    FeaturePack pack;
    pack.raw_norms = column_norms(raw);
    pack.features = l2_normalize_cols(raw);
    pack.group_n = static_cast<int>(maps.size());
    pack.w = w;
    pack.h = h;
    pack.c = c;
    return pack;
}

double sum_objective(const std::vector<std::uint8_t>& fg, const FeaturePack& pack) {
    const std::size_t n = pack.n_total();
    if (fg.size() != n) throw DimensionError("sum_objective: assignment length mismatch");
    const std::size_t c = pack.features.extent(0);
    double within = 0.0, across = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            double d = 0.0;
            for (std::size_t ch = 0; ch < c; ++ch) {
                const double diff = pack.features.at(ch, i) - pack.features.at(ch, j);
                d += diff * diff;
            }
            if ((fg[i] != 0) == (fg[j] != 0)) {
                within += d;
            } else {
                across += d;
            }
        }
    }
    return within - across;
}

ClusterIndicator indicator_from_assignment(const std::vector<std::uint8_t>& fg) {
    const std::size_t n = fg.size();
    if (n == 0) throw DimensionError("empty assignment");
    const double mag = 1.0 / std::sqrt(static_cast<double>(n));
    ClusterIndicator m;
    m.mode = IndicatorMode::Discrete;
    m.values = Tensor({n});
    for (std::size_t i = 0; i < n; ++i) m.values[i] = fg[i] ? mag : -mag;
    return m;
}

double matrix_objective(const ClusterIndicator& m, const FeaturePack& pack) {
    if (m.mode != IndicatorMode::Discrete) {
        throw ContractError("matrix_objective requires a discrete indicator");
    }
    const std::size_t n = pack.n_total();
    if (m.values.size() != n) throw DimensionError("matrix_objective: indicator length mismatch");
    const Tensor d = distance_matrix(pack);
    double quad = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double row = 0.0;
        for (std::size_t j = 0; j < n; ++j) row += d.at(i, j) * m.values[j];
        quad += m.values[i] * row;
    }
    return static_cast<double>(n) * quad;
}

AffinityMatrix build_affinity(const FeaturePack& pack) {
    Tensor gram = matmul(transpose(pack.features), pack.features);
    for (double& v : gram.values()) v -= 1.0;  // minus the all-ones matrix
    return AffinityMatrix{std::move(gram)};
}

SolveResult solve_indicator(const AffinityMatrix& a, const InterMatchConfig& cfg) {
    const Tensor& mat = a.values;
    if (mat.rank() != 2 || mat.extent(0) != mat.extent(1)) {
        throw ContractError("solve_indicator needs a square matrix");
    }
    const std::size_t n = mat.extent(0);
    double max_abs = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            if (std::abs(mat.at(i, j) - mat.at(j, i)) > 1e-9) {
                throw ContractError("solve_indicator needs a symmetric matrix");
            }
        }
    }
    for (const double v : mat.values()) max_abs = std::max(max_abs, std::abs(v));

    // Deterministic start, re-centered onto the feasible subspace.
    RngStream rng(kSolverInitSeed, n);
    Tensor v({n});
    for (std::size_t i = 0; i < n; ++i) v[i] = rng.uniform(-1.0, 1.0);
    center(v);
    double nrm = norm(v);
    if (nrm == 0.0) {  // all draws equal; practically unreachable
        v[0] = 1.0;
        if (n > 1) v[1] = -1.0;
        center(v);
        nrm = norm(v);
    }
    for (std::size_t i = 0; i < n; ++i) v[i] /= nrm;

    SolveResult res;
    res.degenerate = max_abs <= 1e-12;  // zero affinity: every feasible vector ties

    const double shift = static_cast<double>(n);  // |eigenvalues| <= n_total
    std::vector<double> trace;
    double prev_rq = 0.0;
    int it = 0;
    while (it < cfg.power_iters_max) {
        ++it;
        Tensor w = matvec(mat, v);
        const double rq = dot(v, w);
        trace.push_back(rq);
        if (it > 1 && std::abs(rq - prev_rq) < cfg.tol) {
            res.converged = true;
            break;
        }
        prev_rq = rq;
        for (std::size_t i = 0; i < n; ++i) w[i] += shift * v[i];
        center(w);
        const double wn = norm(w);
        if (wn == 0.0) break;  // shifted operator annihilated the iterate
        for (std::size_t i = 0; i < n; ++i) v[i] = w[i] / wn;
    }
    if (res.degenerate) res.converged = true;

    center(v);
    const double fn = norm(v);
    for (std::size_t i = 0; i < n; ++i) v[i] /= fn;

    res.indicator.values = std::move(v);
    res.indicator.mode = IndicatorMode::Relaxed;
    res.rayleigh = dot(res.indicator.values, matvec(mat, res.indicator.values));
    res.iterations = it;
    res.rayleigh_trace = std::move(trace);
    return res;
}

ClusterIndicator orient(const ClusterIndicator& m, const std::vector<double>& raw_norms) {
    if (m.mode != IndicatorMode::Relaxed) throw ContractError("orient expects a relaxed indicator");
    if (raw_norms.size() != m.values.size()) {
        throw DimensionError("orient: raw_norms length mismatch");
    }
    double pos_sum = 0.0, neg_sum = 0.0;
    std::size_t pos_cnt = 0, neg_cnt = 0;
    for (std::size_t i = 0; i < m.values.size(); ++i) {
        if (m.values[i] > 0.0) {
            pos_sum += raw_norms[i];
            ++pos_cnt;
        } else if (m.values[i] < 0.0) {
            neg_sum += raw_norms[i];
            ++neg_cnt;
        }
    }
    const double pos_mean = pos_cnt ? pos_sum / static_cast<double>(pos_cnt) : 0.0;
    const double neg_mean = neg_cnt ? neg_sum / static_cast<double>(neg_cnt) : 0.0;
    if (pos_mean >= neg_mean) return m;
    ClusterIndicator flipped = m;
    for (double& v : flipped.values.values()) v = -v;
    return flipped;
}

std::vector<CoMask> split_masks(const ClusterIndicator& m, int w, int h, int group_n) {
    const std::size_t wh = static_cast<std::size_t>(w) * h;
    if (m.values.size() != wh * static_cast<std::size_t>(group_n)) {
        throw DimensionError("split_masks: indicator length does not match group extents");
    }
    std::vector<CoMask> masks;
    masks.reserve(group_n);
    for (int g = 0; g < group_n; ++g) {
        CoMask mask;
        mask.w = w;
        mask.h = h;
        mask.values = Tensor({static_cast<std::size_t>(h), static_cast<std::size_t>(w)});
        for (std::size_t p = 0; p < wh; ++p) mask.values[p] = m.values[g * wh + p];
        masks.push_back(std::move(mask));
    }
    return masks;
}

FeatureMap reweight(const FeatureMap& f, const CoMask& mask, double alpha) {
    if (alpha <= 1.0) throw ParameterError("reweight requires alpha > 1");
    if (mask.w != f.w || mask.h != f.h) throw DimensionError("reweight: mask extents mismatch");
    FeatureMap out = f;
    const std::size_t n = static_cast<std::size_t>(f.n());
    const std::size_t c = static_cast<std::size_t>(f.c);
    for (std::size_t p = 0; p < n; ++p) {
        if (mask.values[p] > 0.0) {
            for (std::size_t ch = 0; ch < c; ++ch) out.x.at(ch, p) *= alpha;
        }
    }
    return out;
}

std::vector<std::uint8_t> round_indicator(const ClusterIndicator& m) {
    std::vector<std::uint8_t> fg(m.values.size(), 0);
    for (std::size_t i = 0; i < m.values.size(); ++i) fg[i] = m.values[i] > 0.0 ? 1 : 0;
    return fg;
}

BruteForceResult brute_force(const FeaturePack& pack) {
    const std::size_t n = pack.n_total();
    if (n > 16) throw ParameterError("brute_force refuses n_total > 16");
    const Tensor d = distance_matrix(pack);

    BruteForceResult best;
    best.assignment.assign(n, 0);
    bool have_best = false;
    std::vector<std::uint8_t> fg(n, 0);
    const std::uint64_t total = 1ull << n;
    // Column 0 as the most significant bit makes numeric order equal
    // lexicographic order on the flag vector.
    for (std::uint64_t bits = 0; bits < total; ++bits) {
        for (std::size_t i = 0; i < n; ++i) fg[i] = (bits >> (n - 1 - i)) & 1u;
        double within = 0.0, across = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
                if (fg[i] == fg[j]) {
                    within += d.at(i, j);
                } else {
                    across += d.at(i, j);
                }
            }
        }
        const double obj = within - across;
        if (!have_best || obj < best.objective) {
            have_best = true;
            best.objective = obj;
            best.assignment = fg;
        }
    }
    return best;
}

double time_group_match(int w, int h, int c, int group_n, int trials) {
    if (trials <= 0) throw ParameterError("time_group_match requires trials > 0");
    if (group_n < 2 || group_n > 5) throw ParameterError("time_group_match requires group_n in [2,5]");
    if (w <= 0 || h <= 0 || c <= 0) throw ParameterError("time_group_match requires positive extents");

    InterMatchConfig cfg;
    cfg.group_n = group_n;
    std::vector<double> seconds;
    seconds.reserve(trials);
    for (int t = 0; t < trials; ++t) {
        RngStream rng(0xB33Full, static_cast<std::uint64_t>(t) * 8 + group_n);
        std::vector<FeatureMap> maps(group_n);
        for (auto& m : maps) {
            m.w = w;
            m.h = h;
            m.c = c;
            m.x = Tensor({static_cast<std::size_t>(c), static_cast<std::size_t>(w) * h});
            for (double& v : m.x.values()) v = rng.next_double();
        }
        const auto t0 = std::chrono::steady_clock::now();
        FeaturePack pack = pack_features(maps);
        AffinityMatrix aff = build_affinity(pack);
        SolveResult sol = solve_indicator(aff, cfg);
        const auto t1 = std::chrono::steady_clock::now();
        (void)sol;
        seconds.push_back(std::chrono::duration<double>(t1 - t0).count());
    }
    std::sort(seconds.begin(), seconds.end());
    const std::size_t mid = seconds.size() / 2;
    if (seconds.size() % 2 == 1) return seconds[mid];
    return 0.5 * (seconds[mid - 1] + seconds[mid]);
}

}  // namespace comatch::inter
