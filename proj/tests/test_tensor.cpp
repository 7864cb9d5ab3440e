#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "comatch/tensor.hpp"

using namespace comatch;

TEST_CASE("matmul identity and hand cases") {
    const Tensor a = Tensor::matrix({{1, 2}, {3, 4}});
    const Tensor eye = Tensor::matrix({{1, 0}, {0, 1}});
    const Tensor swap = Tensor::matrix({{0, 1}, {1, 0}});

    Tensor r = matmul(eye, a);
    CHECK(r.at(0, 0) == 1.0);
    CHECK(r.at(1, 1) == 4.0);

    r = matmul(a, swap);
    CHECK(r.at(0, 0) == 2.0);
    CHECK(r.at(0, 1) == 1.0);
    CHECK(r.at(1, 0) == 4.0);
    CHECK(r.at(1, 1) == 3.0);

    const Tensor zero = Tensor::matrix({{0, 0}, {0, 0}});
    r = matmul(zero, a);
    for (double v : r.values()) CHECK(v == 0.0);
}

TEST_CASE("matmul rejects shape mismatch") {
    const Tensor a = Tensor::matrix({{1, 2, 3}});
    const Tensor b = Tensor::matrix({{1, 2}});
    CHECK_THROWS_AS(matmul(a, b), DimensionError);
}

TEST_CASE("matvec agrees with matmul") {
    const Tensor a = Tensor::matrix({{1, 2}, {3, 4}, {5, 6}});
    const Tensor v = Tensor::vector({10, 20});
    const Tensor r = matvec(a, v);
    CHECK(r[0] == 50.0);
    CHECK(r[1] == 110.0);
    CHECK(r[2] == 170.0);
}

TEST_CASE("l2_normalize_cols produces unit columns") {
    RngStream rng(3, 1);
    Tensor x({4, 6});
    for (double& v : x.values()) v = rng.uniform(-2.0, 2.0);
    const Tensor u = l2_normalize_cols(x);
    for (std::size_t j = 0; j < 6; ++j) {
        double n2 = 0.0;
        for (std::size_t i = 0; i < 4; ++i) n2 += u.at(i, j) * u.at(i, j);
        CHECK(std::abs(std::sqrt(n2) - 1.0) < 1e-12);
    }
    const std::vector<double> norms = column_norms(x);
    for (std::size_t j = 0; j < 6; ++j) {
        CHECK(std::abs(u.at(0, j) * norms[j] - x.at(0, j)) < 1e-12);
    }
}

TEST_CASE("l2_normalize_cols maps a zero column to the first basis vector") {
    Tensor x = Tensor::matrix({{0, 1}, {0, 2}, {0, 2}});
    const Tensor u = l2_normalize_cols(x);
    CHECK(u.at(0, 0) == 1.0);
    CHECK(u.at(1, 0) == 0.0);
    CHECK(u.at(2, 0) == 0.0);
    CHECK(std::abs(u.at(0, 1) - 1.0 / 3.0) < 1e-12);
}

TEST_CASE("top_k_rows picks the largest entries") {
    const Tensor g = Tensor::matrix({{kNegInf, 5, 9, 1}, {3, kNegInf, 2, 8}});
    const MatchIndex idx = top_k_rows(g, 2);
    CHECK(idx.at(0, 0) == 2);
    CHECK(idx.at(0, 1) == 1);
    CHECK(idx.at(1, 0) == 3);
    CHECK(idx.at(1, 1) == 0);
}

TEST_CASE("top_k_rows breaks ties toward the smaller index") {
    const Tensor g = Tensor::matrix({{7, 7, 7, 2}});
    const MatchIndex idx = top_k_rows(g, 3);
    CHECK(idx.at(0, 0) == 0);
    CHECK(idx.at(0, 1) == 1);
    CHECK(idx.at(0, 2) == 2);
}

TEST_CASE("top_k_rows matches a full-sort oracle") {
    RngStream rng(11, 2);
    Tensor g({8, 8});
    for (double& v : g.values()) v = rng.uniform(-1.0, 1.0);
    const int k = 5;
    const MatchIndex idx = top_k_rows(g, k);
    for (std::size_t r = 0; r < 8; ++r) {
        std::vector<int> order(8);
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(),
                         [&](int a, int b) { return g.at(r, a) > g.at(r, b); });
        for (int j = 0; j < k; ++j) CHECK(idx.at(r, j) == order[static_cast<std::size_t>(j)]);
    }
}

TEST_CASE("top_k_rows rejects k >= columns") {
    const Tensor g = Tensor::matrix({{1, 2}, {3, 4}});
    CHECK_THROWS_AS(top_k_rows(g, 2), ParameterError);
    CHECK_THROWS_AS(top_k_rows(g, 0), ParameterError);
}

TEST_CASE("relu transpose reshape gap basics") {
    const Tensor x = Tensor::matrix({{-1, 2}, {3, -4}});
    const Tensor r = relu(x);
    CHECK(r.at(0, 0) == 0.0);
    CHECK(r.at(0, 1) == 2.0);
    CHECK(r.at(1, 0) == 3.0);
    CHECK(r.at(1, 1) == 0.0);

    const Tensor t = transpose(x);
    CHECK(t.at(0, 1) == 3.0);
    CHECK(t.at(1, 0) == 2.0);

    const Tensor rs = reshape(x, {4});
    CHECK(rs.rank() == 1);
    CHECK(rs[2] == 3.0);
    CHECK_THROWS_AS(reshape(x, {3}), DimensionError);

    const Tensor cols = Tensor::matrix({{1, 3}, {2, 6}});
    const Tensor m = gap(cols);
    CHECK(m[0] == 2.0);
    CHECK(m[1] == 4.0);
}

TEST_CASE("rng streams reproduce bit-identically") {
    RngStream a(42, 7);
    CHECK(a.next_u64() == 9730045334795395583ull);
    CHECK(a.next_u64() == 14193069231597899910ull);
    CHECK(a.next_u64() == 8950403217648204436ull);
    CHECK(a.next_double() == doctest::Approx(0.5248083839367779).epsilon(1e-15));

    RngStream b(42, 7);
    RngStream c(42, 7);
    for (int i = 0; i < 100; ++i) CHECK(b.next_u64() == c.next_u64());
}

TEST_CASE("distinct stream ids decorrelate") {
    RngStream a(1, 1);
    RngStream b(1, 2);
    CHECK(a.next_u64() == 17846892882390067922ull);
    CHECK(b.next_u64() == 9200284336419583403ull);
}

TEST_CASE("rng ranges stay in bounds") {
    RngStream r(9, 3);
    for (int i = 0; i < 1000; ++i) {
        const double d = r.next_double();
        CHECK(d >= 0.0);
        CHECK(d < 1.0);
        const double u = r.uniform(-3.0, 5.0);
        CHECK(u >= -3.0);
        CHECK(u < 5.0);
        const std::uint64_t n = r.next_below(17);
        CHECK(n < 17);
    }
    CHECK_THROWS_AS(r.next_below(0), ParameterError);
}

TEST_CASE("next_below covers every bucket") {
    RngStream r(5, 4);
    std::vector<int> hits(8, 0);
    for (int i = 0; i < 4000; ++i) hits[r.next_below(8)]++;
    for (int h : hits) CHECK(h > 350);  // 500 expected per bucket
}

TEST_CASE("normal draws are finite with sane spread") {
    RngStream r(2, 6);
    double sum = 0.0, sq = 0.0;
    const int n = 5000;
    for (int i = 0; i < n; ++i) {
        const double v = r.normal();
        CHECK(std::isfinite(v));
        sum += v;
        sq += v * v;
    }
    CHECK(std::abs(sum / n) < 0.05);
    CHECK(std::abs(sq / n - 1.0) < 0.08);
}

TEST_CASE("tensor shape validation") {
    CHECK_THROWS_AS(Tensor({0, 3}), DimensionError);
    CHECK_THROWS_AS(Tensor({1, 2, 3, 4, 5}), DimensionError);
    CHECK_THROWS_AS(Tensor({2, 2}, {1.0}), DimensionError);
}
