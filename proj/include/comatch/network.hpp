#pragma once

#include <string>
#include <vector>

#include "comatch/common.hpp"
#include "comatch/inter_match.hpp"
#include "comatch/intra_match.hpp"
#include "comatch/tensor.hpp"

namespace comatch::net {

inline constexpr int kEncoderMid = 16;  // channels between the two conv layers

/// Trainable state: a two-layer stride-2 encoder (3 -> 16 -> c), the
/// point-update MLP, and a linear classifier head.
struct ModelParams {
    Tensor conv1_w;  // {16, 3, 3, 3} as (out, in, ky, kx)
    Tensor conv1_b;  // {16}
    Tensor conv2_w;  // {c, 16, 3, 3}
    Tensor conv2_b;  // {c}
    intra::PointUpdateParams point_mlp;
    Tensor head_w;   // {C, c}
    Tensor head_b;   // {C}

    int channels() const { return static_cast<int>(conv2_w.extent(0)); }
    int classes() const { return static_cast<int>(head_w.extent(0)); }

    ModelParams zeros_like() const;
    void accumulate(const ModelParams& g);
    void add_scaled(const ModelParams& g, double scale);
    bool all_finite() const;
};

/// Seeded uniform(-1/sqrt(fan_in), +) for encoder and MLP weights; the head
/// starts at zero so initial response maps carry no class bias.
ModelParams init_params(int channels, int n_classes, RngStream& rng);

struct EncodeCache {
    Tensor image;      // {H, W, 3}
    Tensor conv1_pre;  // pre-rectifier activations
    Tensor conv2_pre;
};

/// Two stride-2 convolutions with rectifiers; H and W must be divisible by 4.
FeatureMap encode(const Tensor& image, const ModelParams& p, EncodeCache* cache = nullptr);

/// Multi-label classification loss: sum over classes of the soft
/// cross-entropy of each logit against its binary label, in softplus form so
/// large logits cannot overflow.
double loss(const Tensor& logits, const LabelVector& y);
Tensor loss_grad(const Tensor& logits, const LabelVector& y);

/// Per-class response map: head row dotted with each feature column,
/// rectified, then min-max normalized to [0,1]. All-zero maps stay zero.
struct Cam {
    int w = 0, h = 0;
    Tensor map;  // {h, w}
};
Cam compute_cam(const FeatureMap& f, const Tensor& head_w, int class_id);

struct PipelineConfig {
    bool use_inter = false;
    bool use_intra = false;
    int k = 8;
    inter::InterMatchConfig inter;
};

struct ImageCache {
    EncodeCache enc;
    FeatureMap encoded;        // post-encoder columns
    inter::CoMask mask;        // valid when inter ran
    FeatureMap after_inter;    // re-weighted (or alias of encoded)
    MatchIndex match;          // valid when intra ran
    intra::UpdateCache intra_cache;
    FeatureMap final_features;
    Tensor pooled;  // {c}
    Tensor logits;  // {C}
    LabelVector labels;
};

struct PairCache {
    ImageCache a, b;
    PipelineConfig cfg;
    bool valid = false;
};

struct PairForward {
    Tensor logits_a, logits_b;
    double loss_value = 0.0;
    PairCache cache;
};

/// Full pipeline on a co-labelled pair: encode, optional inter-matching
/// re-weighting, optional intra-matching update, pooling, head, loss summed
/// over both images. The solved mask is a constant for training purposes.
PairForward forward_pair(const Tensor& img_a, const LabelVector& ya, const Tensor& img_b,
                         const LabelVector& yb, const ModelParams& p, const PipelineConfig& cfg);

/// Exact reverse-mode gradients for every parameter tensor. Gradients pass
/// through the re-weighting scale and the max/gather routing; mask values and
/// match indices are constants.
ModelParams backward(const PairCache& cache, const ModelParams& p);

/// Single-image pipeline for evaluation: encode, then the intra update when
/// enabled. Inter-matching needs a partner and is applied by the caller.
FeatureMap forward_single(const Tensor& image, const ModelParams& p, const PipelineConfig& cfg);

// Versioned binary checkpoint: magic "COMN", u32 version, then per tensor a
// u32 name length, the name bytes, u32 rank, u64 extents and raw
// little-endian 64-bit floats. meta rides along as a tensor named "meta.cfg".
void save_checkpoint(const std::string& path, const ModelParams& p,
                     const std::vector<double>& meta);
ModelParams load_checkpoint(const std::string& path, std::vector<double>* meta = nullptr);

}  // namespace comatch::net
