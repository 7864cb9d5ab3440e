#pragma once

#include <cstdint>
#include <vector>

#include "comatch/tensor.hpp"

namespace comatch {

/// Spatial activation grid kept in column form: x has shape {c, w*h} and
/// column p holds the channel vector of pixel (row, col) with p = row*w + col.
struct FeatureMap {
    int w = 0;  // columns
    int h = 0;  // rows
    int c = 0;  // channels
    Tensor x;   // {c, w*h}

    int n() const { return w * h; }
};

/// Multi-hot class labels, one byte per class.
using LabelVector = std::vector<std::uint8_t>;

inline bool labels_intersect(const LabelVector& a, const LabelVector& b) {
    const std::size_t n = a.size() < b.size() ? a.size() : b.size();
    for (std::size_t i = 0; i < n; ++i)
        if (a[i] && b[i]) return true;
    return false;
}

// Stream ids keep rng consumers independent of each other; the flags of a run
// must never change which stream a consumer draws from.
inline constexpr std::uint64_t kStreamInit = 1;
inline constexpr std::uint64_t kStreamSample = 2;
inline constexpr std::uint64_t kStreamData = 3;
inline constexpr std::uint64_t kStreamEvalData = 4;

}  // namespace comatch
