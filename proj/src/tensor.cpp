#include "comatch/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace comatch {

namespace {

std::size_t checked_count(const std::vector<std::size_t>& shape) {
    if (shape.empty() || shape.size() > 4) {
        throw DimensionError("tensor rank must be 1..4, got " + std::to_string(shape.size()));
    }
    std::size_t n = 1;
    for (std::size_t e : shape) {
        if (e == 0) throw DimensionError("tensor extents must be positive");
        n *= e;
    }
    return n;
}

}  // namespace

Tensor::Tensor(std::vector<std::size_t> shape) : shape_(std::move(shape)) {
    data_.assign(checked_count(shape_), 0.0);
}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
    if (checked_count(shape_) != data_.size()) {
        throw DimensionError("tensor data length does not match shape");
    }
}

Tensor Tensor::matrix(const std::vector<std::vector<double>>& rows) {
    if (rows.empty()) throw DimensionError("matrix needs at least one row");
    const std::size_t cols = rows[0].size();
    std::vector<double> data;
    data.reserve(rows.size() * cols);
    for (const auto& r : rows) {
        if (r.size() != cols) throw DimensionError("ragged matrix rows");
        data.insert(data.end(), r.begin(), r.end());
    }
    return Tensor({rows.size(), cols}, std::move(data));
}

Tensor Tensor::vector(std::vector<double> values) {
    const std::size_t n = values.size();
    return Tensor({n}, std::move(values));
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2) throw DimensionError("matmul needs rank-2 operands");
    const std::size_t m = a.extent(0), k = a.extent(1);
    if (b.extent(0) != k) {
        throw DimensionError("matmul inner extents differ: " + std::to_string(k) + " vs " +
                             std::to_string(b.extent(0)));
    }
    const std::size_t n = b.extent(1);
    Tensor out({m, n});
    const double* pa = a.data();
    const double* pb = b.data();
    double* pc = out.data();
    // ikj order: each output cell accumulates over ascending inner index.
    for (std::size_t i = 0; i < m; ++i) {
        double* crow = pc + i * n;
        for (std::size_t t = 0; t < k; ++t) {
            const double av = pa[i * k + t];
            const double* brow = pb + t * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
    return out;
}

Tensor matvec(const Tensor& a, const Tensor& v) {
    if (a.rank() != 2 || v.rank() != 1) throw DimensionError("matvec needs {m,k} and {k}");
    const std::size_t m = a.extent(0), k = a.extent(1);
    if (v.extent(0) != k) throw DimensionError("matvec inner extents differ");
    Tensor out({m});
    for (std::size_t i = 0; i < m; ++i) {
        double acc = 0.0;
        const double* row = a.data() + i * k;
        for (std::size_t t = 0; t < k; ++t) acc += row[t] * v[t];
        out[i] = acc;
    }
    return out;
}

std::vector<double> column_norms(const Tensor& x) {
    if (x.rank() != 2) throw DimensionError("column_norms needs a rank-2 tensor");
    const std::size_t c = x.extent(0), n = x.extent(1);
    std::vector<double> norms(n, 0.0);
    for (std::size_t i = 0; i < c; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            const double v = x.at(i, j);
            norms[j] += v * v;
        }
    }
    for (double& s : norms) s = std::sqrt(s);
    return norms;
}

Tensor l2_normalize_cols(const Tensor& x) {
    if (x.rank() != 2) throw DimensionError("l2_normalize_cols needs a rank-2 tensor");
    const std::size_t c = x.extent(0), n = x.extent(1);
    const std::vector<double> norms = column_norms(x);
    Tensor out({c, n});
    for (std::size_t j = 0; j < n; ++j) {
        if (norms[j] == 0.0) {
            out.at(0, j) = 1.0;  // degenerate column -> first basis vector
            continue;
        }
        const double inv = 1.0 / norms[j];
        for (std::size_t i = 0; i < c; ++i) out.at(i, j) = x.at(i, j) * inv;
    }
    return out;
}

MatchIndex top_k_rows(const Tensor& g, int k) {
    if (g.rank() != 2) throw DimensionError("top_k_rows needs a rank-2 tensor");
    const std::size_t rows = g.extent(0), n = g.extent(1);
    if (k <= 0 || static_cast<std::size_t>(k) >= n) {
        throw ParameterError("top_k_rows requires 0 < k < " + std::to_string(n));
    }
    MatchIndex out;
    out.rows = rows;
    out.k = k;
    out.idx.resize(rows * static_cast<std::size_t>(k));
    std::vector<std::int64_t> order(n);
    for (std::size_t r = 0; r < rows; ++r) {
        std::iota(order.begin(), order.end(), std::int64_t{0});
        const double* row = g.data() + r * n;
        std::sort(order.begin(), order.end(), [row](std::int64_t a, std::int64_t b) {
            if (row[a] != row[b]) return row[a] > row[b];
            return a < b;
        });
        for (int j = 0; j < k; ++j) out.idx[r * static_cast<std::size_t>(k) + j] = order[j];
    }
    return out;
}

Tensor relu(const Tensor& x) {
    Tensor out = x;
    for (double& v : out.values()) v = v > 0.0 ? v : 0.0;
    return out;
}

Tensor transpose(const Tensor& x) {
    if (x.rank() != 2) throw DimensionError("transpose needs a rank-2 tensor");
    const std::size_t r = x.extent(0), c = x.extent(1);
    Tensor out({c, r});
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out.at(j, i) = x.at(i, j);
    return out;
}

Tensor reshape(const Tensor& x, std::vector<std::size_t> shape) {
    std::size_t n = 1;
    for (std::size_t e : shape) n *= e;
    if (n != x.size()) throw DimensionError("reshape must preserve element count");
    return Tensor(std::move(shape), x.values());
}

Tensor gap(const Tensor& cols) {
    if (cols.rank() != 2) throw DimensionError("gap needs a {c,n} tensor");
    const std::size_t c = cols.extent(0), n = cols.extent(1);
    Tensor out({c});
    for (std::size_t i = 0; i < c; ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < n; ++j) acc += cols.at(i, j);
        out[i] = acc / static_cast<double>(n);
    }
    return out;
}

namespace {

// SplitMix64 finalizer (Stafford mix13).
std::uint64_t mix64(std::uint64_t z) {
    z += 0x9E3779B97F4A7C15ull;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

}  // namespace

RngStream::RngStream(std::uint64_t seed, std::uint64_t stream_id) : stream_id_(stream_id) {
    state_ = mix64(seed ^ mix64(stream_id));
    increment_ = mix64(state_ ^ 0xDA3E39CB94B95BDBull) | 1ull;  // odd
}

std::uint64_t RngStream::next_u64() {
    state_ += increment_;
    return mix64(state_);
}

double RngStream::next_double() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double RngStream::uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

std::uint64_t RngStream::next_below(std::uint64_t n) {
    if (n == 0) throw ParameterError("next_below requires n > 0");
    return next_u64() % n;
}

double RngStream::normal() {
    const double u1 = 1.0 - next_double();  // (0,1], keeps log finite
    const double u2 = next_double();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
}

}  // namespace comatch
