#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "comatch/common.hpp"
#include "comatch/intra_match.hpp"

using namespace comatch;
using namespace comatch::intra;

namespace {

FeatureMap random_map(int w, int h, int c, RngStream& rng, double lo = -1.0, double hi = 1.0) {
    FeatureMap m;
    m.w = w;
    m.h = h;
    m.c = c;
    m.x = Tensor({static_cast<std::size_t>(c), static_cast<std::size_t>(w) * h});
    for (double& v : m.x.values()) v = rng.uniform(lo, hi);
    return m;
}

PointUpdateParams random_params(int c, RngStream& rng) {
    PointUpdateParams p = PointUpdateParams::init(c, rng);
    for (double& v : p.b1.values()) v = rng.uniform(-0.3, 0.3);
    for (double& v : p.b2.values()) v = rng.uniform(-0.3, 0.3);
    return p;
}

PointUpdateParams identity_params(int c) {
    PointUpdateParams p;
    p.w1 = Tensor({static_cast<std::size_t>(c), static_cast<std::size_t>(c)});
    p.b1 = Tensor({static_cast<std::size_t>(c)});
    p.w2 = Tensor({static_cast<std::size_t>(c), static_cast<std::size_t>(c)});
    p.b2 = Tensor({static_cast<std::size_t>(c)});
    for (int i = 0; i < c; ++i) {
        p.w1.at(i, i) = 1.0;
        p.w2.at(i, i) = 1.0;
    }
    return p;
}

}  // namespace

TEST_CASE("similarity is the gram matrix with a blocked diagonal") {
    FeatureMap f;
    f.w = 3;
    f.h = 1;
    f.c = 2;
    f.x = Tensor::matrix({{1, 0, 2}, {0, 1, 2}});
    const SimilarityMatrix g = similarity(f);
    CHECK(g.values.at(0, 0) == kNegInf);
    CHECK(g.values.at(1, 1) == kNegInf);
    CHECK(g.values.at(2, 2) == kNegInf);
    CHECK(g.values.at(0, 1) == doctest::Approx(0.0));
    CHECK(g.values.at(0, 2) == doctest::Approx(2.0));
    CHECK(g.values.at(1, 2) == doctest::Approx(2.0));
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = i + 1; j < 3; ++j)
            CHECK(g.values.at(i, j) == g.values.at(j, i));
}

TEST_CASE("duplicate columns score their squared norm") {
    FeatureMap f;
    f.w = 2;
    f.h = 1;
    f.c = 3;
    f.x = Tensor::matrix({{2, 2}, {-1, -1}, {0.5, 0.5}});
    const SimilarityMatrix g = similarity(f);
    CHECK(g.values.at(0, 1) == doctest::Approx(5.25));
}

TEST_CASE("top_k_match avoids self and ranks by similarity") {
    FeatureMap f;
    f.w = 4;
    f.h = 1;
    f.c = 2;
    f.x = Tensor::matrix({{1.0, 0.9, 0.0, 1.0}, {0.0, 0.0, 1.0, 0.1}});
    const SimilarityMatrix g = similarity(f);
    const MatchIndex idx = top_k_match(g, 2);
    // Point 0 is most similar to point 3, then point 1.
    CHECK(idx.at(0, 0) == 3);
    CHECK(idx.at(0, 1) == 1);
    for (std::size_t i = 0; i < 4; ++i)
        for (int j = 0; j < 2; ++j) CHECK(idx.at(i, j) != static_cast<std::int64_t>(i));
}

TEST_CASE("top_k_match with k = n-1 permutes the other points") {
    RngStream rng(101, 1);
    const FeatureMap f = random_map(3, 2, 4, rng);
    const MatchIndex idx = top_k_match(similarity(f), 5);
    for (std::size_t i = 0; i < 6; ++i) {
        std::vector<std::int64_t> got;
        for (int j = 0; j < 5; ++j) got.push_back(idx.at(i, j));
        std::sort(got.begin(), got.end());
        std::vector<std::int64_t> want;
        for (std::int64_t v = 0; v < 6; ++v)
            if (v != static_cast<std::int64_t>(i)) want.push_back(v);
        CHECK(got == want);
    }
    CHECK_THROWS_AS(top_k_match(similarity(f), 6), ParameterError);
}

TEST_CASE("top_k_match agrees with a sort oracle") {
    RngStream rng(103, 2);
    const FeatureMap f = random_map(3, 3, 5, rng);
    const SimilarityMatrix g = similarity(f);
    const int k = 4;
    const MatchIndex idx = top_k_match(g, k);
    for (std::size_t i = 0; i < 9; ++i) {
        std::vector<std::int64_t> order(9);
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](std::int64_t a, std::int64_t b) {
            return g.values.at(i, a) > g.values.at(i, b);
        });
        for (int j = 0; j < k; ++j) CHECK(idx.at(i, j) == order[static_cast<std::size_t>(j)]);
    }
}

TEST_CASE("gather copies the selected columns") {
    Tensor cols = Tensor::matrix({{10, 20, 30}, {1, 2, 3}});
    MatchIndex idx;
    idx.rows = 3;
    idx.k = 2;
    idx.idx = {1, 2, 0, 2, 0, 1};
    const Tensor out = gather(cols, idx);
    CHECK(out.extent(0) == 2);
    CHECK(out.extent(1) == 3);
    CHECK(out.extent(2) == 2);
    CHECK(out.at(0, 0, 0) == 20.0);
    CHECK(out.at(0, 0, 1) == 30.0);
    CHECK(out.at(1, 1, 0) == 1.0);
    CHECK(out.at(0, 2, 1) == 20.0);

    // Triple-loop oracle on the full tensor.
    for (std::size_t ch = 0; ch < 2; ++ch)
        for (std::size_t i = 0; i < 3; ++i)
            for (int j = 0; j < 2; ++j)
                CHECK(out.at(ch, i, static_cast<std::size_t>(j)) ==
                      cols.at(ch, static_cast<std::size_t>(idx.at(i, j))));
}

TEST_CASE("gather rejects bad indices and extents") {
    Tensor cols = Tensor::matrix({{1, 2}, {3, 4}});
    MatchIndex idx;
    idx.rows = 2;
    idx.k = 1;
    idx.idx = {1, 5};
    CHECK_THROWS_AS(gather(cols, idx), ContractError);
    idx.idx = {1, -1};
    CHECK_THROWS_AS(gather(cols, idx), ContractError);
    MatchIndex wrong;
    wrong.rows = 3;
    wrong.k = 1;
    wrong.idx = {0, 1, 0};
    CHECK_THROWS_AS(gather(cols, wrong), DimensionError);
}

TEST_CASE("init draws bounded weights and zero biases") {
    RngStream rng(107, 3);
    const PointUpdateParams p = PointUpdateParams::init(9, rng);
    const double s = 1.0 / 3.0;
    for (double v : p.w1.values()) CHECK(std::abs(v) <= s);
    for (double v : p.w2.values()) CHECK(std::abs(v) <= s);
    for (double v : p.b1.values()) CHECK(v == 0.0);
    for (double v : p.b2.values()) CHECK(v == 0.0);
}

TEST_CASE("update_points with one slot is the plain point network") {
    RngStream rng(109, 4);
    const int c = 3, n = 4;
    const PointUpdateParams p = random_params(c, rng);
    Tensor neigh({c, n, 1});
    for (double& v : neigh.values()) v = rng.uniform(-1.0, 1.0);

    const FeatureMap out = update_points(neigh, p, 4, 1, nullptr);
    for (int i = 0; i < n; ++i) {
        std::vector<double> hidden(c);
        for (int r = 0; r < c; ++r) {
            double acc = p.b1[r];
            for (int t = 0; t < c; ++t) acc += p.w1.at(r, t) * neigh.at(t, i, 0);
            hidden[r] = std::max(acc, 0.0);
        }
        for (int r = 0; r < c; ++r) {
            double acc = p.b2[r];
            for (int t = 0; t < c; ++t) acc += p.w2.at(r, t) * hidden[t];
            CHECK(out.x.at(r, i) == doctest::Approx(acc).epsilon(1e-12));
        }
    }
}

TEST_CASE("identity network reduces to an elementwise neighborhood max") {
    RngStream rng(113, 5);
    const int c = 3, n = 6, K = 4;
    Tensor neigh({c, n, K});
    for (double& v : neigh.values()) v = rng.uniform(0.0, 2.0);  // nonnegative passes the rectifier

    const FeatureMap out = update_points(neigh, identity_params(c), 3, 2, nullptr);
    for (int ch = 0; ch < c; ++ch) {
        for (int i = 0; i < n; ++i) {
            double best = neigh.at(ch, i, 0);
            for (int j = 1; j < K; ++j) best = std::max(best, neigh.at(ch, i, j));
            CHECK(out.x.at(ch, i) == doctest::Approx(best).epsilon(1e-12));
        }
    }
}

TEST_CASE("update_points matches a straight-line oracle") {
    RngStream rng(127, 6);
    const int c = 4, n = 6, K = 3;
    const PointUpdateParams p = random_params(c, rng);
    Tensor neigh({c, n, K});
    for (double& v : neigh.values()) v = rng.uniform(-1.5, 1.5);

    UpdateCache cache;
    const FeatureMap out = update_points(neigh, p, 3, 2, &cache);
    CHECK(cache.valid);
    for (int i = 0; i < n; ++i) {
        for (int ch = 0; ch < c; ++ch) {
            double best = kNegInf;
            for (int j = 0; j < K; ++j) {
                std::vector<double> hidden(c);
                for (int r = 0; r < c; ++r) {
                    double acc = p.b1[r];
                    for (int t = 0; t < c; ++t) acc += p.w1.at(r, t) * neigh.at(t, i, j);
                    hidden[r] = std::max(acc, 0.0);
                }
                double acc = p.b2[ch];
                for (int t = 0; t < c; ++t) acc += p.w2.at(ch, t) * hidden[t];
                best = std::max(best, acc);
            }
            CHECK(out.x.at(ch, i) == doctest::Approx(best).epsilon(1e-12));
        }
    }
}

TEST_CASE("max ties resolve to the lowest slot") {
    const int c = 1, n = 1, K = 3;
    Tensor neigh({c, n, K});
    neigh.at(0, 0, 0) = 0.7;
    neigh.at(0, 0, 1) = 0.7;
    neigh.at(0, 0, 2) = 0.2;
    UpdateCache cache;
    update_points(neigh, identity_params(c), 1, 1, &cache);
    CHECK(cache.winner[0] == 0);
}

TEST_CASE("update_points validates extents") {
    RngStream rng(131, 7);
    const PointUpdateParams p = random_params(3, rng);
    Tensor bad_rank({3, 4});
    CHECK_THROWS_AS(update_points(bad_rank, p, 2, 2, nullptr), DimensionError);
    Tensor neigh({3, 4, 2});
    CHECK_THROWS_AS(update_points(neigh, p, 3, 2, nullptr), DimensionError);  // w*h != n
    const PointUpdateParams p2 = random_params(2, rng);
    CHECK_THROWS_AS(update_points(neigh, p2, 2, 2, nullptr), DimensionError);
}

TEST_CASE("backward_update hand chain rule in one dimension") {
    Tensor neigh({1, 1, 1});
    neigh.at(0, 0, 0) = 2.0;
    PointUpdateParams p;
    p.w1 = Tensor::matrix({{0.5}});
    p.b1 = Tensor::vector({0.25});
    p.w2 = Tensor::matrix({{-1.5}});
    p.b2 = Tensor::vector({0.1});

    UpdateCache cache;
    const FeatureMap out = update_points(neigh, p, 1, 1, &cache);
    CHECK(out.x.at(0, 0) == doctest::Approx(-1.775));  // -1.5*(0.5*2+0.25)+0.1

    Tensor d_out({1, 1});
    d_out.at(0, 0) = 1.0;
    const UpdateGrads g = backward_update(d_out, cache, p);
    CHECK(g.d_params.b2[0] == doctest::Approx(1.0));
    CHECK(g.d_params.w2.at(0, 0) == doctest::Approx(1.25));
    CHECK(g.d_params.b1[0] == doctest::Approx(-1.5));
    CHECK(g.d_params.w1.at(0, 0) == doctest::Approx(-3.0));
    CHECK(g.d_neigh.at(0, 0, 0) == doctest::Approx(-0.75));
}

TEST_CASE("backward_update zero gradient stays zero") {
    RngStream rng(137, 8);
    const int c = 3, n = 4, K = 2;
    const PointUpdateParams p = random_params(c, rng);
    Tensor neigh({c, n, K});
    for (double& v : neigh.values()) v = rng.uniform(-1.0, 1.0);
    UpdateCache cache;
    update_points(neigh, p, 2, 2, &cache);
    const UpdateGrads g = backward_update(Tensor({c, n}), cache, p);
    for (double v : g.d_neigh.values()) CHECK(v == 0.0);
    for (double v : g.d_params.w1.values()) CHECK(v == 0.0);
    for (double v : g.d_params.b2.values()) CHECK(v == 0.0);
}

TEST_CASE("backward_update matches finite differences") {
    RngStream rng(139, 9);
    const int c = 3, n = 4, K = 2;
    PointUpdateParams p = random_params(c, rng);
    Tensor neigh({c, n, K});
    for (double& v : neigh.values()) v = rng.uniform(-1.2, 1.2);
    Tensor wout({c, n});
    for (double& v : wout.values()) v = rng.uniform(-1.0, 1.0);

    auto loss = [&](const Tensor& nb, const PointUpdateParams& pp) {
        const FeatureMap out = update_points(nb, pp, n, 1, nullptr);
        double acc = 0.0;
        for (std::size_t i = 0; i < out.x.size(); ++i) acc += wout[i] * out.x[i];
        return acc;
    };

    UpdateCache cache;
    update_points(neigh, p, n, 1, &cache);
    const UpdateGrads g = backward_update(wout, cache, p);

    const double eps = 1e-5;
    auto check_close = [](double analytic, double fd) {
        const double rel = std::abs(analytic - fd) / std::max({std::abs(analytic), std::abs(fd), 1e-6});
        CHECK(rel < 1e-3);
    };

    for (std::size_t i = 0; i < neigh.size(); ++i) {
        Tensor lo = neigh, hi = neigh;
        lo[i] -= eps;
        hi[i] += eps;
        check_close(g.d_neigh[i], (loss(hi, p) - loss(lo, p)) / (2 * eps));
    }
    auto sweep_param = [&](Tensor PointUpdateParams::*field, const Tensor& analytic) {
        for (std::size_t i = 0; i < (p.*field).size(); ++i) {
            PointUpdateParams lo = p, hi = p;
            (lo.*field)[i] -= eps;
            (hi.*field)[i] += eps;
            check_close(analytic[i], (loss(neigh, hi) - loss(neigh, lo)) / (2 * eps));
        }
    };
    sweep_param(&PointUpdateParams::w1, g.d_params.w1);
    sweep_param(&PointUpdateParams::b1, g.d_params.b1);
    sweep_param(&PointUpdateParams::w2, g.d_params.w2);
    sweep_param(&PointUpdateParams::b2, g.d_params.b2);
}

TEST_CASE("backward_update demands a valid cache and matching extents") {
    RngStream rng(149, 10);
    const PointUpdateParams p = random_params(2, rng);
    UpdateCache cache;  // never filled
    CHECK_THROWS_AS(backward_update(Tensor({2, 3}), cache, p), ContractError);

    Tensor neigh({2, 3, 2});
    for (double& v : neigh.values()) v = rng.uniform(-1.0, 1.0);
    update_points(neigh, p, 3, 1, &cache);
    CHECK_THROWS_AS(backward_update(Tensor({2, 4}), cache, p), DimensionError);
}

TEST_CASE("gather_backward scatter-adds slot gradients") {
    MatchIndex idx;
    idx.rows = 3;
    idx.k = 2;
    idx.idx = {1, 2, 0, 2, 0, 1};
    Tensor d_neigh({1, 3, 2});
    d_neigh.at(0, 0, 0) = 1.0;  // -> col 1
    d_neigh.at(0, 0, 1) = 2.0;  // -> col 2
    d_neigh.at(0, 1, 0) = 4.0;  // -> col 0
    d_neigh.at(0, 1, 1) = 8.0;  // -> col 2
    d_neigh.at(0, 2, 0) = 16.0;  // -> col 0
    d_neigh.at(0, 2, 1) = 32.0;  // -> col 1
    const Tensor out = gather_backward(d_neigh, idx, 3);
    CHECK(out.at(0, 0) == doctest::Approx(20.0));
    CHECK(out.at(0, 1) == doctest::Approx(33.0));
    CHECK(out.at(0, 2) == doctest::Approx(10.0));
}

TEST_CASE("gather_backward is the adjoint of gather") {
    RngStream rng(151, 11);
    const int c = 4, n = 5, k = 3;
    Tensor cols({static_cast<std::size_t>(c), static_cast<std::size_t>(n)});
    for (double& v : cols.values()) v = rng.uniform(-1.0, 1.0);
    FeatureMap f;
    f.w = n;
    f.h = 1;
    f.c = c;
    f.x = cols;
    const MatchIndex idx = top_k_match(similarity(f), k);
    Tensor grads({static_cast<std::size_t>(c), static_cast<std::size_t>(n),
                  static_cast<std::size_t>(k)});
    for (double& v : grads.values()) v = rng.uniform(-1.0, 1.0);

    const Tensor fwd = gather(cols, idx);
    const Tensor bwd = gather_backward(grads, idx, n);
    double lhs = 0.0, rhs = 0.0;
    for (std::size_t i = 0; i < fwd.size(); ++i) lhs += fwd[i] * grads[i];
    for (std::size_t i = 0; i < bwd.size(); ++i) rhs += bwd[i] * cols[i];
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-10));
}

TEST_CASE("gather_backward validates indices") {
    MatchIndex idx;
    idx.rows = 2;
    idx.k = 1;
    idx.idx = {0, 3};
    Tensor d({1, 2, 1});
    CHECK_THROWS_AS(gather_backward(d, idx, 2), ContractError);
    MatchIndex wrong;
    wrong.rows = 2;
    wrong.k = 2;
    wrong.idx = {0, 1, 1, 0};
    CHECK_THROWS_AS(gather_backward(d, wrong, 2), DimensionError);
}

TEST_CASE("slot order never changes the refined points") {
    RngStream rng(157, 12);
    for (int trial = 0; trial < 25; ++trial) {
        const int c = 3, n = 4, K = 3;
        const PointUpdateParams p = random_params(c, rng);
        Tensor neigh({c, n, K});
        for (double& v : neigh.values()) v = rng.uniform(-1.0, 1.0);
        Tensor shuffled({c, n, K});
        const int perm[K] = {2, 0, 1};
        for (int ch = 0; ch < c; ++ch)
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < K; ++j) shuffled.at(ch, i, j) = neigh.at(ch, i, perm[j]);
        const FeatureMap a = update_points(neigh, p, 2, 2, nullptr);
        const FeatureMap b = update_points(shuffled, p, 2, 2, nullptr);
        for (std::size_t i = 0; i < a.x.size(); ++i) CHECK(a.x[i] == b.x[i]);
    }
}

TEST_CASE("point order commutes with the update") {
    RngStream rng(163, 13);
    for (int trial = 0; trial < 25; ++trial) {
        const int c = 3, n = 4, K = 2;
        const PointUpdateParams p = random_params(c, rng);
        Tensor neigh({c, n, K});
        for (double& v : neigh.values()) v = rng.uniform(-1.0, 1.0);
        const int perm[4] = {3, 1, 0, 2};
        Tensor permuted({c, n, K});
        for (int ch = 0; ch < c; ++ch)
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < K; ++j) permuted.at(ch, i, j) = neigh.at(ch, perm[i], j);
        const FeatureMap a = update_points(neigh, p, 4, 1, nullptr);
        const FeatureMap b = update_points(permuted, p, 4, 1, nullptr);
        for (int ch = 0; ch < c; ++ch)
            for (int i = 0; i < n; ++i) CHECK(b.x.at(ch, i) == a.x.at(ch, perm[i]));
    }
}
