#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <vector>

#include "comatch/errors.hpp"

namespace comatch {

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

/// Dense row-major tensor of 64-bit floats, rank 1 to 4.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<std::size_t> shape);  // zero-filled
    Tensor(std::vector<std::size_t> shape, std::vector<double> data);

    static Tensor zeros(std::vector<std::size_t> shape) { return Tensor(std::move(shape)); }
    /// 2-D convenience for literals in tests and small fixtures.
    static Tensor matrix(const std::vector<std::vector<double>>& rows);
    static Tensor vector(std::vector<double> values);

    std::size_t rank() const { return shape_.size(); }
    const std::vector<std::size_t>& shape() const { return shape_; }
    std::size_t extent(std::size_t d) const { return shape_[d]; }
    std::size_t size() const { return data_.size(); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::vector<double>& values() { return data_; }
    const std::vector<double>& values() const { return data_; }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    double& at(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
    double at(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }
    double& at(std::size_t i, std::size_t j, std::size_t k) {
        return data_[(i * shape_[1] + j) * shape_[2] + k];
    }
    double at(std::size_t i, std::size_t j, std::size_t k) const {
        return data_[(i * shape_[1] + j) * shape_[2] + k];
    }
    double& at(std::size_t i, std::size_t j, std::size_t k, std::size_t l) {
        return data_[((i * shape_[1] + j) * shape_[2] + k) * shape_[3] + l];
    }
    double at(std::size_t i, std::size_t j, std::size_t k, std::size_t l) const {
        return data_[((i * shape_[1] + j) * shape_[2] + k) * shape_[3] + l];
    }

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

private:
    std::vector<std::size_t> shape_;
    std::vector<double> data_;
};

/// Per-row top-k index table (rows x k).
struct MatchIndex {
    std::size_t rows = 0;
    int k = 0;
    std::vector<std::int64_t> idx;  // rows*k, row-major

    std::int64_t at(std::size_t r, int j) const { return idx[r * static_cast<std::size_t>(k) + j]; }
};

// Matrix product with a fixed accumulation order (ascending inner index per
// output cell) so reruns are bit-identical.
Tensor matmul(const Tensor& a, const Tensor& b);
/// a: {m,k} times v: {k} -> {m}.
Tensor matvec(const Tensor& a, const Tensor& v);

/// Scales every column of a 2-D tensor to unit Euclidean norm.
/// Exactly-zero columns become the first basis vector.
Tensor l2_normalize_cols(const Tensor& x);
std::vector<double> column_norms(const Tensor& x);

/// Indices of the k largest entries per row, descending by value, ties toward
/// the smaller index. Requires k < number of columns.
MatchIndex top_k_rows(const Tensor& g, int k);

Tensor relu(const Tensor& x);
Tensor transpose(const Tensor& x);
Tensor reshape(const Tensor& x, std::vector<std::size_t> shape);
/// Mean over columns of a {c,n} matrix -> {c}.
Tensor gap(const Tensor& cols);

/// Counter-based pseudo-random stream. A given (seed, stream_id, draw
/// sequence) reproduces bit-identically on every platform; distinct stream
/// ids from the same seed give unrelated sequences.
class RngStream {
public:
    RngStream(std::uint64_t seed, std::uint64_t stream_id);

    std::uint64_t next_u64();
    /// Uniform in [0,1) with 53 random bits.
    double next_double();
    double uniform(double lo, double hi);
    /// Uniform integer in [0,n), n > 0.
    std::uint64_t next_below(std::uint64_t n);
    /// Standard normal via Box-Muller (two draws per call).
    double normal();

    std::uint64_t stream_id() const { return stream_id_; }

private:
    std::uint64_t state_;
    std::uint64_t increment_;
    std::uint64_t stream_id_;
};

}  // namespace comatch
