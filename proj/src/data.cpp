#include "comatch/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "comatch/errors.hpp"
#include "comatch/netpbm.hpp"

namespace fs = std::filesystem;

namespace comatch::data {

namespace {

struct Rgb {
    double r, g, b;
};

// Scenes are isoluminant: every pixel sits on the plane R+G+B = 3*0.45, and
// only the chroma direction varies. Classes are seven equally spaced hues at
// chroma radius 0.42; the background drifts through hues at radius 0.22.
// Constant luminance keeps local energy — and hence encoder column norms —
// nearly uniform, so inner-product feature matching ranks by direction instead
// of locking onto the brightest blob.
constexpr double kGray = 0.45;
constexpr double kBgChroma = 0.22;
constexpr Rgb kChromaU = {0.70710678, -0.70710678, 0.0};         // isoluminant axis 1
constexpr Rgb kChromaV = {0.40824829, 0.40824829, -0.81649658};  // axis 2
constexpr Rgb kPalette[] = {
    {0.7470, 0.1530, 0.4500},  // hue 0 deg
    {0.7692, 0.3989, 0.1819},  // hue 51 deg
    {0.5511, 0.6833, 0.1157},  // hue 103 deg
    {0.2568, 0.7920, 0.3012},  // hue 154 deg
    {0.1080, 0.6432, 0.5988},  // hue 206 deg
    {0.2167, 0.3489, 0.7843},  // hue 257 deg
    {0.5011, 0.1308, 0.7181},  // hue 309 deg
};
constexpr int kMaxClasses = static_cast<int>(sizeof(kPalette) / sizeof(kPalette[0]));

double clamp01(double v) { return v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v); }

bool inside_shape(const std::string& shape, int y, int x, int cy, int cx, int r) {
    const double dy = y - cy, dx = x - cx;
    if (shape == "disc") return dy * dy + dx * dx <= static_cast<double>(r) * r;
    if (shape == "square") {
        const double half = 0.82 * r;
        return std::abs(dy) <= half && std::abs(dx) <= half;
    }
    if (shape == "triangle") {
        const double down = y - (cy - r);  // apex at top
        return down >= 0.0 && down <= 2.0 * r && std::abs(dx) <= 0.5 * down + 0.5;
    }
    if (shape == "ring") {
        const double d2 = dy * dy + dx * dx;
        const double rin = 0.55 * r;
        return d2 >= rin * rin && d2 <= static_cast<double>(r) * r;
    }
    throw ParameterError("unknown shape kind: " + shape);
}

// The strongly colored heart of a shape. Pixels inside the shape but outside
// the core carry the same hue at lower intensity, so a classifier can succeed
// while its response map under-covers the object — the effect the matching
// modules are meant to repair.
bool inside_core(const std::string& shape, int y, int x, int cy, int cx, int r) {
    if (shape == "ring") {
        const double dy = y - cy, dx = x - cx;
        const double d2 = dy * dy + dx * dx;
        const double rin = 0.70 * r, rout = 0.85 * r;
        return d2 >= rin * rin && d2 <= rout * rout;
    }
    const int rc = std::max(2, static_cast<int>(std::lround(0.45 * r)));
    return inside_shape(shape, y, x, cy, cx, rc);
}

struct Box {
    int y0, y1, x0, x1;
};

bool boxes_overlap(const Box& a, const Box& b) {
    return a.y0 <= b.y1 && b.y0 <= a.y1 && a.x0 <= b.x1 && b.x0 <= a.x1;
}

Scene gen_scene(const DataConfig& cfg, RngStream& rng, const std::string& name) {
    const int H = cfg.h, W = cfg.w;
    Scene s;
    s.name = name;
    s.image = Tensor({static_cast<std::size_t>(H), static_cast<std::size_t>(W), 3});
    s.pixel_mask.assign(static_cast<std::size_t>(H) * W, 0);

    // Background: a smooth unit hue field. Two coarse grids are bilinearly
    // interpolated into a 2-vector per pixel, normalized, and mapped onto the
    // isoluminant chroma plane at constant radius. Nearby pixels share a hue,
    // distant ones differ, and every pixel keeps the same brightness.
    const int gs = 5;
    std::vector<double> coarse(static_cast<std::size_t>(gs) * gs * 2);
    for (double& v : coarse) v = rng.uniform(-1.0, 1.0);
    const auto field = [&](int y, int x, int comp) {
        const double fy = static_cast<double>(y) / H * (gs - 1);
        const double fx = static_cast<double>(x) / W * (gs - 1);
        const int y0 = static_cast<int>(fy), x0 = static_cast<int>(fx);
        const int y1 = std::min(y0 + 1, gs - 1), x1 = std::min(x0 + 1, gs - 1);
        const double ty = fy - y0, tx = fx - x0;
        const double* grid = coarse.data() + static_cast<std::size_t>(comp) * gs * gs;
        const double top = grid[y0 * gs + x0] * (1 - tx) + grid[y0 * gs + x1] * tx;
        const double bot = grid[y1 * gs + x0] * (1 - tx) + grid[y1 * gs + x1] * tx;
        return top * (1 - ty) + bot * ty;
    };
    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
            double a = field(y, x, 0), b = field(y, x, 1);
            const double len = std::sqrt(a * a + b * b);
            a = len > 1e-9 ? a / len : 1.0;
            b = len > 1e-9 ? b / len : 0.0;
            const double cu = kBgChroma * a, cv = kBgChroma * b;
            s.image.at(y, x, 0) = clamp01(kGray + cu * kChromaU.r + cv * kChromaV.r +
                                          rng.uniform(-cfg.noise, cfg.noise));
            s.image.at(y, x, 1) = clamp01(kGray + cu * kChromaU.g + cv * kChromaV.g +
                                          rng.uniform(-cfg.noise, cfg.noise));
            s.image.at(y, x, 2) = clamp01(kGray + cu * kChromaU.b + cv * kChromaV.b +
                                          rng.uniform(-cfg.noise, cfg.noise));
        }
    }

    // Every scene carries one large primary object whose rim holds the class
    // hue at a fraction of the core chroma: a classifier alone can succeed
    // while its response map covers only the core, which is the under-coverage
    // the matching modules are meant to repair. The primary must also span
    // clearly more feature cells than the matching fan-out k, or within-object
    // propagation has too few genuine correspondences to select from. Half the
    // scenes attempt a second, small, solid object of another class — the
    // co-occurrence that gives paired matching something to disambiguate.
    const int n_shapes = 1 + static_cast<int>(rng.next_below(std::min(2, cfg.n_classes)));
    std::vector<int> cls(cfg.n_classes);
    for (int i = 0; i < cfg.n_classes; ++i) cls[i] = i;
    for (int i = 0; i < n_shapes; ++i) {
        const int j = i + static_cast<int>(rng.next_below(cfg.n_classes - i));
        std::swap(cls[i], cls[j]);
    }

    const int r_max = std::min(8, (std::min(H, W) - 4) / 2);
    const int r_lo = std::max(4, std::min(7, r_max - 1));
    std::vector<Box> placed;
    for (int i = 0; i < n_shapes; ++i) {
        const int c = cls[i];
        const bool primary = i == 0;
        const double rim_tint = primary ? 0.35 : 1.0;
        for (int attempt = 0; attempt < 40; ++attempt) {
            const int r = primary
                              ? r_lo + static_cast<int>(rng.next_below(r_max - r_lo + 1))
                              : 4 + static_cast<int>(rng.next_below(2));
            const int cy = r + 1 + static_cast<int>(rng.next_below(H - 2 * r - 2));
            const int cx = r + 1 + static_cast<int>(rng.next_below(W - 2 * r - 2));
            const Box box{cy - r - 1, cy + r + 1, cx - r - 1, cx + r + 1};
            bool clear = true;
            for (const Box& p : placed) {
                if (boxes_overlap(box, p)) {
                    clear = false;
                    break;
                }
            }
            if (!clear) continue;
            placed.push_back(box);
            const Rgb color = kPalette[c];
            for (int y = std::max(0, box.y0); y <= std::min(H - 1, box.y1); ++y) {
                for (int x = std::max(0, box.x0); x <= std::min(W - 1, box.x1); ++x) {
                    if (!inside_shape(cfg.shapes[c], y, x, cy, cx, r)) continue;
                    s.pixel_mask[static_cast<std::size_t>(y) * W + x] = c + 1;
                    const double tint =
                        inside_core(cfg.shapes[c], y, x, cy, cx, r) ? 1.0 : rim_tint;
                    s.image.at(y, x, 0) = clamp01(kGray + tint * (color.r - kGray) +
                                                  rng.uniform(-0.04, 0.04));
                    s.image.at(y, x, 1) = clamp01(kGray + tint * (color.g - kGray) +
                                                  rng.uniform(-0.04, 0.04));
                    s.image.at(y, x, 2) = clamp01(kGray + tint * (color.b - kGray) +
                                                  rng.uniform(-0.04, 0.04));
                }
            }
            break;
        }
    }
    s.labels = labels_from_mask(s.pixel_mask, cfg.n_classes);
    return s;
}

}  // namespace

void validate(const DataConfig& cfg) {
    if (cfg.h < 16 || cfg.w < 16 || cfg.h > 256 || cfg.w > 256) {
        throw ParameterError("scene extents must be in [16,256]");
    }
    if (cfg.h % 4 != 0 || cfg.w % 4 != 0) {
        throw ParameterError("scene extents must be divisible by 4");
    }
    if (cfg.n_classes < 2 || cfg.n_classes > kMaxClasses) {
        throw ParameterError("n_classes must be in [2,7]");
    }
    if (static_cast<int>(cfg.shapes.size()) != cfg.n_classes) {
        throw ParameterError("shapes list must have one entry per class");
    }
    for (const std::string& sh : cfg.shapes) {
        if (sh != "disc" && sh != "square" && sh != "triangle" && sh != "ring") {
            throw ParameterError("unknown shape kind: " + sh);
        }
    }
    if (cfg.noise < 0.0 || cfg.noise > 0.5) throw ParameterError("noise must be in [0,0.5]");
    if (cfg.scenes < 2) throw ParameterError("need at least 2 scenes");
    if (cfg.eval_scenes < 0) throw ParameterError("eval_scenes must be >= 0");
}

LabelVector labels_from_mask(const std::vector<int>& mask, int n_classes) {
    LabelVector y(static_cast<std::size_t>(n_classes), 0);
    for (int id : mask) {
        if (id > 0 && id <= n_classes) y[static_cast<std::size_t>(id - 1)] = 1;
    }
    return y;
}

void Corpus::rebuild_index() {
    class_index.assign(static_cast<std::size_t>(n_classes), {});
    for (std::size_t i = 0; i < scenes.size(); ++i) {
        for (int c = 0; c < n_classes; ++c) {
            if (scenes[i].labels[static_cast<std::size_t>(c)]) {
                class_index[static_cast<std::size_t>(c)].push_back(static_cast<int>(i));
            }
        }
    }
}

Corpus gen_corpus(const DataConfig& cfg, RngStream& rng) {
    validate(cfg);
    Corpus corpus;
    corpus.h = cfg.h;
    corpus.w = cfg.w;
    corpus.n_classes = cfg.n_classes;
    for (int attempt = 0; attempt < 100; ++attempt) {
        corpus.scenes.clear();
        std::vector<int> count(static_cast<std::size_t>(cfg.n_classes), 0);
        for (int i = 0; i < cfg.scenes; ++i) {
            char name[32];
            std::snprintf(name, sizeof(name), "scene_%03d", i);
            Scene s = gen_scene(cfg, rng, name);
            for (int c = 0; c < cfg.n_classes; ++c) count[c] += s.labels[c] ? 1 : 0;
            corpus.scenes.push_back(std::move(s));
        }
        const bool covered =
            std::all_of(count.begin(), count.end(), [](int n) { return n >= 2; });
        if (covered) {
            corpus.rebuild_index();
            return corpus;
        }
    }
    throw DataError("could not cover every class twice; raise the scene count");
}

PairSample sample_pair(const Corpus& corpus, RngStream& rng) {
    std::vector<int> eligible;
    for (int c = 0; c < corpus.n_classes; ++c) {
        if (corpus.class_index[static_cast<std::size_t>(c)].size() >= 2) eligible.push_back(c);
    }
    if (eligible.empty()) throw DataError("no class appears in two scenes");
    const int cls = eligible[rng.next_below(eligible.size())];
    const std::vector<int>& ids = corpus.class_index[static_cast<std::size_t>(cls)];
    const std::size_t i = rng.next_below(ids.size());
    std::size_t j = rng.next_below(ids.size() - 1);
    if (j >= i) ++j;
    return {ids[i], ids[j], cls};
}

GroupSample sample_group(const Corpus& corpus, int n, RngStream& rng) {
    if (n < 1) throw ParameterError("group size must be positive");
    std::vector<int> eligible;
    for (int c = 0; c < corpus.n_classes; ++c) {
        if (static_cast<int>(corpus.class_index[static_cast<std::size_t>(c)].size()) >= n) {
            eligible.push_back(c);
        }
    }
    if (eligible.empty()) throw DataError("no class appears in enough scenes for the group");
    GroupSample out;
    out.shared_class = eligible[rng.next_below(eligible.size())];
    std::vector<int> ids = corpus.class_index[static_cast<std::size_t>(out.shared_class)];
    for (int i = 0; i < n; ++i) {
        const std::size_t j = i + rng.next_below(ids.size() - static_cast<std::size_t>(i));
        std::swap(ids[static_cast<std::size_t>(i)], ids[j]);
        out.ids.push_back(ids[static_cast<std::size_t>(i)]);
    }
    return out;
}

Scene flip_h(const Scene& s) {
    const std::size_t H = s.image.extent(0), W = s.image.extent(1);
    Scene out = s;
    for (std::size_t y = 0; y < H; ++y) {
        for (std::size_t x = 0; x < W; ++x) {
            const std::size_t xs = W - 1 - x;
            for (std::size_t ch = 0; ch < 3; ++ch) out.image.at(y, x, ch) = s.image.at(y, xs, ch);
            out.pixel_mask[y * W + x] = s.pixel_mask[y * W + xs];
        }
    }
    return out;
}

Scene crop_padded(const Scene& s, int dy, int dx, int pad) {
    const int H = static_cast<int>(s.image.extent(0)), W = static_cast<int>(s.image.extent(1));
    if (dy < 0 || dy > 2 * pad || dx < 0 || dx > 2 * pad) {
        throw ParameterError("crop offset outside the padded range");
    }
    Scene out = s;
    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
            const int ys = y + dy - pad, xs = x + dx - pad;
            const bool in = ys >= 0 && ys < H && xs >= 0 && xs < W;
            for (int ch = 0; ch < 3; ++ch) {
                out.image.at(y, x, ch) = in ? s.image.at(ys, xs, ch) : 0.0;
            }
            out.pixel_mask[static_cast<std::size_t>(y) * W + x] =
                in ? s.pixel_mask[static_cast<std::size_t>(ys) * W + xs] : 0;
        }
    }
    out.labels = labels_from_mask(out.pixel_mask, static_cast<int>(s.labels.size()));
    return out;
}

Scene color_jitter(const Scene& s, double s0, double s1, double s2) {
    Scene out = s;
    const double scale[3] = {s0, s1, s2};
    const std::size_t H = s.image.extent(0), W = s.image.extent(1);
    for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x)
            for (std::size_t ch = 0; ch < 3; ++ch)
                out.image.at(y, x, ch) = clamp01(s.image.at(y, x, ch) * scale[ch]);
    return out;
}

Scene augment(const Scene& s, RngStream& rng) {
    const bool flip = rng.next_double() < 0.5;
    const int dy = static_cast<int>(rng.next_below(9));
    const int dx = static_cast<int>(rng.next_below(9));
    const double s0 = rng.uniform(0.9, 1.1);
    const double s1 = rng.uniform(0.9, 1.1);
    const double s2 = rng.uniform(0.9, 1.1);
    Scene out = flip ? flip_h(s) : s;
    out = crop_padded(out, dy, dx);
    return color_jitter(out, s0, s1, s2);
}

void save_corpus(const Corpus& corpus, const std::string& dir) {
    fs::create_directories(dir);
    std::ofstream csv(fs::path(dir) / "labels.csv", std::ios::trunc);
    if (!csv) throw DataError("cannot write labels.csv in " + dir);
    csv << "filename";
    for (int c = 0; c < corpus.n_classes; ++c) csv << ",class_" << c;
    csv << "\n";
    for (const Scene& s : corpus.scenes) {
        const std::string base = (fs::path(dir) / s.name).string();
        pbm::write_ppm(base + ".ppm", s.image);
        if (s.has_mask) {
            Tensor mask({s.image.extent(0), s.image.extent(1)});
            for (std::size_t i = 0; i < mask.size(); ++i) {
                mask[i] = static_cast<double>(s.pixel_mask[i]);
            }
            pbm::write_pgm(base + ".mask", mask);
        }
        csv << s.name << ".ppm";
        for (int c = 0; c < corpus.n_classes; ++c) {
            csv << "," << (s.labels[static_cast<std::size_t>(c)] ? 1 : 0);
        }
        csv << "\n";
    }
    if (!csv) throw DataError("labels.csv write failed in " + dir);
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> cells;
    std::string cell;
    std::stringstream ss(line);
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.push_back("");
    return cells;
}

}  // namespace

Corpus load_corpus(const std::string& dir) {
    const fs::path root(dir);
    const fs::path csv_path = root / "labels.csv";
    std::ifstream csv(csv_path);
    if (!csv) throw DataError("missing labels.csv in " + dir);

    std::string line;
    if (!std::getline(csv, line)) throw ParseError("empty labels.csv: " + csv_path.string());
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const std::vector<std::string> header = split_csv_line(line);
    if (header.size() < 3 || header[0] != "filename") {
        throw ParseError("bad labels.csv header: " + csv_path.string());
    }
    const int C = static_cast<int>(header.size()) - 1;

    std::map<std::string, LabelVector> by_file;
    while (std::getline(csv, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const std::vector<std::string> cells = split_csv_line(line);
        if (static_cast<int>(cells.size()) != C + 1) {
            throw ParseError("bad labels.csv row '" + line + "' in " + csv_path.string());
        }
        LabelVector y;
        for (int c = 1; c <= C; ++c) {
            if (cells[static_cast<std::size_t>(c)] != "0" &&
                cells[static_cast<std::size_t>(c)] != "1") {
                throw ParseError("non-binary label in " + csv_path.string());
            }
            y.push_back(cells[static_cast<std::size_t>(c)] == "1" ? 1 : 0);
        }
        by_file[cells[0]] = y;
    }

    std::vector<fs::path> images;
    for (const auto& entry : fs::directory_iterator(root)) {
        if (entry.is_regular_file() && entry.path().extension() == ".ppm") {
            images.push_back(entry.path());
        }
    }
    std::sort(images.begin(), images.end());
    if (images.empty()) throw DataError("no .ppm scenes in " + dir);

    Corpus corpus;
    corpus.n_classes = C;
    for (const fs::path& img_path : images) {
        Scene s;
        s.name = img_path.stem().string();
        s.image = pbm::read_ppm(img_path.string());
        auto it = by_file.find(img_path.filename().string());
        if (it == by_file.end()) {
            throw ParseError("no labels.csv row for " + img_path.filename().string());
        }
        s.labels = it->second;
        const std::size_t H = s.image.extent(0), W = s.image.extent(1);
        const fs::path mask_path = img_path.parent_path() / (s.name + ".mask");
        if (fs::exists(mask_path)) {
            Tensor mask = pbm::read_pgm(mask_path.string());
            if (mask.extent(0) != H || mask.extent(1) != W) {
                throw ParseError("mask extents mismatch: " + mask_path.string());
            }
            s.pixel_mask.resize(H * W);
            for (std::size_t i = 0; i < mask.size(); ++i) {
                const int id = static_cast<int>(mask[i]);
                if (id < 0 || id > C) {
                    throw ParseError("mask id out of range: " + mask_path.string());
                }
                s.pixel_mask[i] = id;
            }
            s.has_mask = true;
        } else {
            s.pixel_mask.assign(H * W, 0);
            s.has_mask = false;
        }
        if (corpus.scenes.empty()) {
            corpus.h = static_cast<int>(H);
            corpus.w = static_cast<int>(W);
        } else if (corpus.h != static_cast<int>(H) || corpus.w != static_cast<int>(W)) {
            throw ParseError("scene extents differ: " + img_path.string());
        }
        corpus.scenes.push_back(std::move(s));
    }
    corpus.rebuild_index();
    return corpus;
}

}  // namespace comatch::data
