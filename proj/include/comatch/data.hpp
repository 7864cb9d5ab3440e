#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "comatch/common.hpp"
#include "comatch/tensor.hpp"

namespace comatch::data {

// pixel_mask ids: 0 = background, class c occupies id c+1
struct Scene {
    Tensor image;  // {H,W,3} in [0,1]
    std::vector<int> pixel_mask;
    LabelVector labels;
    bool has_mask = true;
    std::string name;
};

struct Corpus {
    int h = 0, w = 0, n_classes = 0;
    std::vector<Scene> scenes;
    std::vector<std::vector<int>> class_index;  // scene ids holding each class
    void rebuild_index();
};

struct DataConfig {
    int h = 32, w = 32;
    int n_classes = 4;
    std::vector<std::string> shapes = {"disc", "square", "triangle", "ring"};
    double noise = 0.08;
    int scenes = 200;
    int eval_scenes = 50;
    std::uint64_t seed = 1;
};

void validate(const DataConfig& cfg);

LabelVector labels_from_mask(const std::vector<int>& mask, int n_classes);

Corpus gen_corpus(const DataConfig& cfg, RngStream& rng);

struct PairSample {
    int a = 0, b = 0;
    int shared_class = 0;
};
PairSample sample_pair(const Corpus& corpus, RngStream& rng);

struct GroupSample {
    std::vector<int> ids;
    int shared_class = 0;
};
GroupSample sample_group(const Corpus& corpus, int n, RngStream& rng);

Scene flip_h(const Scene& s);
Scene crop_padded(const Scene& s, int dy, int dx, int pad = 4);
Scene color_jitter(const Scene& s, double s0, double s1, double s2);
Scene augment(const Scene& s, RngStream& rng);

void save_corpus(const Corpus& corpus, const std::string& dir);
Corpus load_corpus(const std::string& dir);

}  // namespace comatch::data
