#include "comatch/network.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>

namespace comatch::net {

static_assert(std::endian::native == std::endian::little,
              "checkpoint writer assumes a little-endian host");

namespace {

void for_each_tensor(ModelParams& p, const auto& fn) {
    fn(p.conv1_w);
    fn(p.conv1_b);
    fn(p.conv2_w);
    fn(p.conv2_b);
    fn(p.point_mlp.w1);
    fn(p.point_mlp.b1);
    fn(p.point_mlp.w2);
    fn(p.point_mlp.b2);
    fn(p.head_w);
    fn(p.head_b);
}

void for_each_tensor_pair(ModelParams& p, const ModelParams& q, const auto& fn) {
    fn(p.conv1_w, q.conv1_w);
    fn(p.conv1_b, q.conv1_b);
    fn(p.conv2_w, q.conv2_w);
    fn(p.conv2_b, q.conv2_b);
    fn(p.point_mlp.w1, q.point_mlp.w1);
    fn(p.point_mlp.b1, q.point_mlp.b1);
    fn(p.point_mlp.w2, q.point_mlp.w2);
    fn(p.point_mlp.b2, q.point_mlp.b2);
    fn(p.head_w, q.head_w);
    fn(p.head_b, q.head_b);
}

double softplus(double t) {
    return t > 0.0 ? t + std::log1p(std::exp(-t)) : std::log1p(std::exp(t));
}

double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

// 3x3 convolution, stride 2, zero padding 1: {H,W,Cin} -> {H/2,W/2,Cout}.
Tensor conv2d_s2(const Tensor& in, const Tensor& k, const Tensor& b) {
    const std::size_t H = in.extent(0), W = in.extent(1), Cin = in.extent(2);
    const std::size_t Cout = k.extent(0);
    const std::size_t Ho = H / 2, Wo = W / 2;
    Tensor out({Ho, Wo, Cout});
    for (std::size_t r = 0; r < Ho; ++r) {
        for (std::size_t col = 0; col < Wo; ++col) {
            for (std::size_t o = 0; o < Cout; ++o) {
                double acc = b[o];
                for (std::size_t ky = 0; ky < 3; ++ky) {
                    const std::ptrdiff_t ir = 2 * static_cast<std::ptrdiff_t>(r) + ky - 1;
                    if (ir < 0 || ir >= static_cast<std::ptrdiff_t>(H)) continue;
                    for (std::size_t kx = 0; kx < 3; ++kx) {
                        const std::ptrdiff_t ic = 2 * static_cast<std::ptrdiff_t>(col) + kx - 1;
                        if (ic < 0 || ic >= static_cast<std::ptrdiff_t>(W)) continue;
                        const double* in_px = in.data() + (ir * W + ic) * Cin;
                        for (std::size_t ci = 0; ci < Cin; ++ci) {
                            acc += in_px[ci] * k.at(o, ci, ky, kx);
                        }
                    }
                }
                out.at(r, col, o) = acc;
            }
        }
    }
    return out;
}

void conv2d_s2_backward(const Tensor& in, const Tensor& k, const Tensor& d_out, Tensor* d_in,
                        Tensor& d_k, Tensor& d_b) {
    const std::size_t H = in.extent(0), W = in.extent(1), Cin = in.extent(2);
    const std::size_t Cout = k.extent(0);
    const std::size_t Ho = d_out.extent(0), Wo = d_out.extent(1);
    for (std::size_t r = 0; r < Ho; ++r) {
        for (std::size_t col = 0; col < Wo; ++col) {
            for (std::size_t o = 0; o < Cout; ++o) {
                const double g = d_out.at(r, col, o);
                if (g == 0.0) continue;
                d_b[o] += g;
                for (std::size_t ky = 0; ky < 3; ++ky) {
                    const std::ptrdiff_t ir = 2 * static_cast<std::ptrdiff_t>(r) + ky - 1;
                    if (ir < 0 || ir >= static_cast<std::ptrdiff_t>(H)) continue;
                    for (std::size_t kx = 0; kx < 3; ++kx) {
                        const std::ptrdiff_t ic = 2 * static_cast<std::ptrdiff_t>(col) + kx - 1;
                        if (ic < 0 || ic >= static_cast<std::ptrdiff_t>(W)) continue;
                        const double* in_px = in.data() + (ir * W + ic) * Cin;
                        double* d_in_px = d_in ? d_in->data() + (ir * W + ic) * Cin : nullptr;
                        for (std::size_t ci = 0; ci < Cin; ++ci) {
                            d_k.at(o, ci, ky, kx) += g * in_px[ci];
                            if (d_in_px) d_in_px[ci] += g * k.at(o, ci, ky, kx);
                        }
                    }
                }
            }
        }
    }
}

Tensor relu_mask_mul(const Tensor& grad, const Tensor& pre) {
    Tensor out = grad;
    for (std::size_t i = 0; i < out.size(); ++i) {
        if (!(pre[i] > 0.0)) out[i] = 0.0;
    }
    return out;
}

FeatureMap grid_to_map(const Tensor& grid) {
    const std::size_t h = grid.extent(0), w = grid.extent(1), c = grid.extent(2);
    FeatureMap f;
    f.w = static_cast<int>(w);
    f.h = static_cast<int>(h);
    f.c = static_cast<int>(c);
    f.x = Tensor({c, h * w});
    for (std::size_t r = 0; r < h; ++r)
        for (std::size_t col = 0; col < w; ++col)
            for (std::size_t ch = 0; ch < c; ++ch) f.x.at(ch, r * w + col) = grid.at(r, col, ch);
    return f;
}

Tensor map_to_grid(const Tensor& cols, std::size_t h, std::size_t w) {
    const std::size_t c = cols.extent(0);
    Tensor grid({h, w, c});
    for (std::size_t r = 0; r < h; ++r)
        for (std::size_t col = 0; col < w; ++col)
            for (std::size_t ch = 0; ch < c; ++ch) grid.at(r, col, ch) = cols.at(ch, r * w + col);
    return grid;
}

}  // namespace

ModelParams ModelParams::zeros_like() const {
    ModelParams z = *this;
    for_each_tensor(z, [](Tensor& t) {
        for (double& v : t.values()) v = 0.0;
    });
    return z;
}

void ModelParams::accumulate(const ModelParams& g) {
    for_each_tensor_pair(*this, g, [](Tensor& a, const Tensor& b) {
        for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
    });
}

void ModelParams::add_scaled(const ModelParams& g, double scale) {
    for_each_tensor_pair(*this, g, [scale](Tensor& a, const Tensor& b) {
        for (std::size_t i = 0; i < a.size(); ++i) a[i] += scale * b[i];
    });
}

bool ModelParams::all_finite() const {
    bool ok = true;
    for_each_tensor(const_cast<ModelParams&>(*this), [&ok](Tensor& t) {
        for (double v : t.values()) {
            if (!std::isfinite(v)) {
                ok = false;
                return;
            }
        }
    });
    return ok;
}

ModelParams init_params(int channels, int n_classes, RngStream& rng) {
    if (channels < 1 || n_classes < 1) throw ParameterError("init_params: bad extents");
    const std::size_t c = static_cast<std::size_t>(channels);
    const std::size_t C = static_cast<std::size_t>(n_classes);
    const std::size_t mid = kEncoderMid;
    ModelParams p;
    p.conv1_w = Tensor({mid, 3, 3, 3});
    p.conv1_b = Tensor({mid});
    p.conv2_w = Tensor({c, mid, 3, 3});
    p.conv2_b = Tensor({c});
    const double s1 = 1.0 / std::sqrt(3.0 * 9.0);
    const double s2 = 1.0 / std::sqrt(static_cast<double>(mid) * 9.0);
    for (double& v : p.conv1_w.values()) v = rng.uniform(-s1, s1);
    for (double& v : p.conv2_w.values()) v = rng.uniform(-s2, s2);
    p.point_mlp = intra::PointUpdateParams::init(channels, rng);
    p.head_w = Tensor({C, c});  // zero head: unbiased initial response maps
    p.head_b = Tensor({C});
    return p;
}

FeatureMap encode(const Tensor& image, const ModelParams& p, EncodeCache* cache) {
    if (image.rank() != 3 || image.extent(2) != 3) {
        throw DimensionError("encode expects an {H,W,3} image");
    }
    const std::size_t H = image.extent(0), W = image.extent(1);
    if (H % 4 != 0 || W % 4 != 0) throw DimensionError("encode: H and W must be divisible by 4");

    Tensor pre1 = conv2d_s2(image, p.conv1_w, p.conv1_b);
    Tensor a1 = relu(pre1);
    Tensor pre2 = conv2d_s2(a1, p.conv2_w, p.conv2_b);
    Tensor a2 = relu(pre2);
    FeatureMap f = grid_to_map(a2);
    if (cache) {
        cache->image = image;
        cache->conv1_pre = std::move(pre1);
        cache->conv2_pre = std::move(pre2);
    }
    return f;
}

double loss(const Tensor& logits, const LabelVector& y) {
    if (logits.size() != y.size()) throw DimensionError("loss: label length mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        const double x = logits[i];
        acc += y[i] ? softplus(-x) : softplus(x);
    }
    return acc;
}

Tensor loss_grad(const Tensor& logits, const LabelVector& y) {
    if (logits.size() != y.size()) throw DimensionError("loss_grad: label length mismatch");
    Tensor g({logits.size()});
    for (std::size_t i = 0; i < logits.size(); ++i) {
        g[i] = sigmoid(logits[i]) - (y[i] ? 1.0 : 0.0);
    }
    return g;
}

Cam compute_cam(const FeatureMap& f, const Tensor& head_w, int class_id) {
    if (class_id < 0 || static_cast<std::size_t>(class_id) >= head_w.extent(0)) {
        throw ParameterError("compute_cam: class id out of range");
    }
    if (head_w.extent(1) != static_cast<std::size_t>(f.c)) {
        throw DimensionError("compute_cam: head width must match channels");
    }
    const std::size_t n = static_cast<std::size_t>(f.n());
    Cam cam;
    cam.w = f.w;
    cam.h = f.h;
    cam.map = Tensor({static_cast<std::size_t>(f.h), static_cast<std::size_t>(f.w)});
    double lo = 0.0, hi = 0.0;
    for (std::size_t px = 0; px < n; ++px) {
        double acc = 0.0;
        for (std::size_t ch = 0; ch < static_cast<std::size_t>(f.c); ++ch) {
            acc += head_w.at(class_id, ch) * f.x.at(ch, px);
        }
        acc = acc > 0.0 ? acc : 0.0;
        cam.map[px] = acc;
        if (px == 0) {
            lo = hi = acc;
        } else {
            lo = acc < lo ? acc : lo;
            hi = acc > hi ? acc : hi;
        }
    }
    if (hi <= 0.0) {
        for (double& v : cam.map.values()) v = 0.0;
        return cam;
    }
    if (hi == lo) {
        for (double& v : cam.map.values()) v = 1.0;
        return cam;
    }
    const double inv = 1.0 / (hi - lo);
    for (double& v : cam.map.values()) v = (v - lo) * inv;
    return cam;
}

namespace {

void run_image_tail(ImageCache& img, const ModelParams& p, const PipelineConfig& cfg) {
    FeatureMap cur = img.after_inter;
    if (cfg.use_intra) {
        intra::SimilarityMatrix sim = intra::similarity(cur);
        img.match = intra::top_k_match(sim, cfg.k);
        Tensor neigh = intra::gather(cur.x, img.match);
        img.final_features =
            intra::update_points(neigh, p.point_mlp, cur.w, cur.h, &img.intra_cache);
    } else {
        img.final_features = cur;
    }
    img.pooled = gap(img.final_features.x);
    img.logits = matvec(p.head_w, img.pooled);
    for (std::size_t i = 0; i < img.logits.size(); ++i) img.logits[i] += p.head_b[i];
}

}  // namespace

PairForward forward_pair(const Tensor& img_a, const LabelVector& ya, const Tensor& img_b,
                         const LabelVector& yb, const ModelParams& p, const PipelineConfig& cfg) {
    if (!labels_intersect(ya, yb)) {
        throw ContractError("forward_pair: images share no positive class");
    }
    PairForward out;
    PairCache& cache = out.cache;
    cache.cfg = cfg;
    cache.a.labels = ya;
    cache.b.labels = yb;

    cache.a.encoded = encode(img_a, p, &cache.a.enc);
    cache.b.encoded = encode(img_b, p, &cache.b.enc);

    if (cfg.use_inter) {
        inter::FeaturePack pack = inter::pack_features({cache.a.encoded, cache.b.encoded});
        inter::AffinityMatrix aff = inter::build_affinity(pack);
        inter::SolveResult sol = inter::solve_indicator(aff, cfg.inter);
        inter::ClusterIndicator oriented = inter::orient(sol.indicator, pack.raw_norms);
        std::vector<inter::CoMask> masks =
            inter::split_masks(oriented, pack.w, pack.h, pack.group_n);
        cache.a.mask = masks[0];
        cache.b.mask = masks[1];
        cache.a.after_inter = inter::reweight(cache.a.encoded, cache.a.mask, cfg.inter.alpha);
        cache.b.after_inter = inter::reweight(cache.b.encoded, cache.b.mask, cfg.inter.alpha);
    } else {
        cache.a.after_inter = cache.a.encoded;
        cache.b.after_inter = cache.b.encoded;
    }

    run_image_tail(cache.a, p, cfg);
    run_image_tail(cache.b, p, cfg);

    out.logits_a = cache.a.logits;
    out.logits_b = cache.b.logits;
    out.loss_value = loss(cache.a.logits, ya) + loss(cache.b.logits, yb);
    cache.valid = true;
    return out;
}

FeatureMap forward_single(const Tensor& image, const ModelParams& p, const PipelineConfig& cfg) {
    FeatureMap f = encode(image, p);
    if (!cfg.use_intra) return f;
    intra::SimilarityMatrix sim = intra::similarity(f);
    MatchIndex idx = intra::top_k_match(sim, cfg.k);
    Tensor neigh = intra::gather(f.x, idx);
    return intra::update_points(neigh, p.point_mlp, f.w, f.h);
}

namespace {

void backward_image(const ImageCache& img, const PipelineConfig& cfg, const ModelParams& p,
                    ModelParams& g) {
    const std::size_t c = static_cast<std::size_t>(img.final_features.c);
    const std::size_t n = static_cast<std::size_t>(img.final_features.n());

    Tensor dlogits = loss_grad(img.logits, img.labels);
    for (std::size_t i = 0; i < dlogits.size(); ++i) {
        g.head_b[i] += dlogits[i];
        for (std::size_t ch = 0; ch < c; ++ch) {
            g.head_w.at(i, ch) += dlogits[i] * img.pooled[ch];
        }
    }
    Tensor dpooled({c});
    for (std::size_t ch = 0; ch < c; ++ch) {
        double acc = 0.0;
        for (std::size_t i = 0; i < dlogits.size(); ++i) acc += p.head_w.at(i, ch) * dlogits[i];
        dpooled[ch] = acc;
    }

    // gap spreads each channel gradient evenly over the columns
    Tensor d_final({c, n});
    const double inv_n = 1.0 / static_cast<double>(n);
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t px = 0; px < n; ++px) d_final.at(ch, px) = dpooled[ch] * inv_n;

    Tensor d_after;
    if (cfg.use_intra) {
        intra::UpdateGrads ug = intra::backward_update(d_final, img.intra_cache, p.point_mlp);
        for (std::size_t i = 0; i < ug.d_params.w1.size(); ++i)
            g.point_mlp.w1[i] += ug.d_params.w1[i];
        for (std::size_t i = 0; i < ug.d_params.b1.size(); ++i)
            g.point_mlp.b1[i] += ug.d_params.b1[i];
        for (std::size_t i = 0; i < ug.d_params.w2.size(); ++i)
            g.point_mlp.w2[i] += ug.d_params.w2[i];
        for (std::size_t i = 0; i < ug.d_params.b2.size(); ++i)
            g.point_mlp.b2[i] += ug.d_params.b2[i];
        d_after = intra::gather_backward(ug.d_neigh, img.match, n);
    } else {
        d_after = d_final;
    }

    if (cfg.use_inter) {
        // mask held constant; positive cells were scaled by alpha
        for (std::size_t px = 0; px < n; ++px) {
            if (img.mask.values[px] > 0.0) {
                for (std::size_t ch = 0; ch < c; ++ch) d_after.at(ch, px) *= cfg.inter.alpha;
            }
        }
    }

    const std::size_t h = static_cast<std::size_t>(img.final_features.h);
    const std::size_t w = static_cast<std::size_t>(img.final_features.w);
    Tensor d_a2 = map_to_grid(d_after, h, w);
    Tensor d_pre2 = relu_mask_mul(d_a2, img.enc.conv2_pre);
    Tensor a1 = relu(img.enc.conv1_pre);
    Tensor d_a1({a1.extent(0), a1.extent(1), a1.extent(2)});
    conv2d_s2_backward(a1, p.conv2_w, d_pre2, &d_a1, g.conv2_w, g.conv2_b);
    Tensor d_pre1 = relu_mask_mul(d_a1, img.enc.conv1_pre);
    conv2d_s2_backward(img.enc.image, p.conv1_w, d_pre1, nullptr, g.conv1_w, g.conv1_b);
}

}  // namespace

ModelParams backward(const PairCache& cache, const ModelParams& p) {
    if (!cache.valid) throw ContractError("backward: missing forward cache");
    if (cache.a.final_features.c != p.channels() ||
        cache.a.logits.size() != static_cast<std::size_t>(p.classes())) {
        throw ContractError("backward: cache is stale for these parameters");
    }
    ModelParams g = p.zeros_like();
    backward_image(cache.a, cache.cfg, p, g);
    backward_image(cache.b, cache.cfg, p, g);
    return g;
}

namespace {

struct NamedTensor {
    const char* name;
    const Tensor* tensor;
};

void write_u32(std::ofstream& os, std::uint32_t v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

void write_u64(std::ofstream& os, std::uint64_t v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

bool read_exact(std::ifstream& is, void* dst, std::size_t bytes) {
    is.read(reinterpret_cast<char*>(dst), static_cast<std::streamsize>(bytes));
    return static_cast<std::size_t>(is.gcount()) == bytes;
}

}  // namespace

void save_checkpoint(const std::string& path, const ModelParams& p,
                     const std::vector<double>& meta) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw DataError("cannot open checkpoint for writing: " + path);
    os.write("COMN", 4);
    write_u32(os, 1u);  // format version

    Tensor meta_t = meta.empty() ? Tensor({1}) : Tensor({meta.size()}, meta);
    const NamedTensor items[] = {
        {"conv1.w", &p.conv1_w},       {"conv1.b", &p.conv1_b},
        {"conv2.w", &p.conv2_w},       {"conv2.b", &p.conv2_b},
        {"intra.w1", &p.point_mlp.w1}, {"intra.b1", &p.point_mlp.b1},
        {"intra.w2", &p.point_mlp.w2}, {"intra.b2", &p.point_mlp.b2},
        {"head.w", &p.head_w},         {"head.b", &p.head_b},
        {"meta.cfg", &meta_t},
    };
    for (const auto& it : items) {
        const std::string name(it.name);
        write_u32(os, static_cast<std::uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        write_u32(os, static_cast<std::uint32_t>(it.tensor->rank()));
        for (std::size_t d = 0; d < it.tensor->rank(); ++d) {
            write_u64(os, it.tensor->extent(d));
        }
        os.write(reinterpret_cast<const char*>(it.tensor->data()),
                 static_cast<std::streamsize>(it.tensor->size() * sizeof(double)));
    }
    if (!os) throw DataError("checkpoint write failed: " + path);
}

ModelParams load_checkpoint(const std::string& path, std::vector<double>* meta) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open checkpoint: " + path);
    char magic[4];
    if (!read_exact(is, magic, 4) || std::memcmp(magic, "COMN", 4) != 0) {
        throw ParseError("bad checkpoint magic in " + path);
    }
    std::uint32_t version = 0;
    if (!read_exact(is, &version, 4) || version != 1u) {
        throw ParseError("unsupported checkpoint version in " + path);
    }

    std::map<std::string, Tensor> tensors;
    while (true) {
        std::uint32_t name_len = 0;
        is.read(reinterpret_cast<char*>(&name_len), 4);
        if (is.gcount() == 0 && is.eof()) break;
        if (static_cast<std::size_t>(is.gcount()) != 4 || name_len == 0 || name_len > 256) {
            throw ParseError("truncated tensor record in " + path);
        }
        std::string name(name_len, '\0');
        if (!read_exact(is, name.data(), name_len)) throw ParseError("truncated name in " + path);
        std::uint32_t rank = 0;
        if (!read_exact(is, &rank, 4) || rank == 0 || rank > 4) {
            throw ParseError("bad tensor rank in " + path);
        }
        std::vector<std::size_t> shape(rank);
        std::size_t count = 1;
        for (std::uint32_t d = 0; d < rank; ++d) {
            std::uint64_t e = 0;
            if (!read_exact(is, &e, 8) || e == 0 || e > (1ull << 32)) {
                throw ParseError("bad tensor extent in " + path);
            }
            shape[d] = static_cast<std::size_t>(e);
            count *= shape[d];
        }
        std::vector<double> data(count);
        if (!read_exact(is, data.data(), count * sizeof(double))) {
            throw ParseError("truncated tensor data in " + path);
        }
        tensors.emplace(std::move(name), Tensor(std::move(shape), std::move(data)));
    }

    const auto take = [&](const char* name) -> Tensor {
        auto it = tensors.find(name);
        if (it == tensors.end()) {
            throw ParseError(std::string("checkpoint missing tensor '") + name + "' in " + path);
        }
        return std::move(it->second);
    };
    ModelParams p;
    p.conv1_w = take("conv1.w");
    p.conv1_b = take("conv1.b");
    p.conv2_w = take("conv2.w");
    p.conv2_b = take("conv2.b");
    p.point_mlp.w1 = take("intra.w1");
    p.point_mlp.b1 = take("intra.b1");
    p.point_mlp.w2 = take("intra.w2");
    p.point_mlp.b2 = take("intra.b2");
    p.head_w = take("head.w");
    p.head_b = take("head.b");
    if (meta) {
        auto it = tensors.find("meta.cfg");
        if (it != tensors.end()) {
            *meta = it->second.values();
        } else {
            meta->clear();
        }
    }
    return p;
}

}  // namespace comatch::net
