#include "comatch/harness.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "comatch/errors.hpp"
#include "comatch/inter_match.hpp"
#include "comatch/netpbm.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

namespace comatch::harness {

namespace {

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

void validate(const TrainConfig& cfg) {
    if (!(cfg.lr_init > 0.0)) throw ParameterError("lr_init must be positive");
    if (!(cfg.rho > 0.0) || cfg.rho > 1.0) throw ParameterError("rho must be in (0,1]");
    if (cfg.batch_pairs < 1) throw ParameterError("batch_pairs must be positive");
    if (cfg.max_iters < 0) throw ParameterError("max_iters must be nonnegative");
    if (!(cfg.alpha > 1.0)) throw ParameterError("alpha must exceed 1");
    if (cfg.k < 1) throw ParameterError("k must be positive");
    if (cfg.group_n < 2 || cfg.group_n > 5) throw ParameterError("group_n must be in [2,5]");
    if (cfg.channels < 2 || cfg.channels > 128) throw ParameterError("channels must be in [2,128]");
}

HarnessConfig parse_config_text(const std::string& text) {
    ordered_json j;
    try {
        j = ordered_json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ParameterError(std::string("config is not valid JSON: ") + e.what());
    }
    if (!j.is_object()) throw ParameterError("config must be a JSON object");

    HarnessConfig cfg;
    for (auto it = j.begin(); it != j.end(); ++it) {
        const std::string& key = it.key();
        const ordered_json& v = it.value();
        const auto as_int = [&]() -> int {
            if (!v.is_number_integer()) throw ParameterError("config key '" + key + "' must be an integer");
            return v.get<int>();
        };
        const auto as_num = [&]() -> double {
            if (!v.is_number()) throw ParameterError("config key '" + key + "' must be a number");
            return v.get<double>();
        };
        const auto as_bool = [&]() -> bool {
            if (!v.is_boolean()) throw ParameterError("config key '" + key + "' must be a boolean");
            return v.get<bool>();
        };
        if (key == "height") {
            cfg.data.h = as_int();
        } else if (key == "width") {
            cfg.data.w = as_int();
        } else if (key == "n_classes") {
            cfg.data.n_classes = as_int();
        } else if (key == "shapes") {
            if (!v.is_array()) throw ParameterError("config key 'shapes' must be an array");
            cfg.data.shapes.clear();
            for (const ordered_json& s : v) {
                if (!s.is_string()) throw ParameterError("'shapes' entries must be strings");
                cfg.data.shapes.push_back(s.get<std::string>());
            }
        } else if (key == "noise") {
            cfg.data.noise = as_num();
        } else if (key == "scenes") {
            cfg.data.scenes = as_int();
        } else if (key == "eval_scenes") {
            cfg.data.eval_scenes = as_int();
        } else if (key == "seed") {
            if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() && v.get<std::int64_t>() < 0)) {
                throw ParameterError("config key 'seed' must be a nonnegative integer");
            }
            cfg.data.seed = v.get<std::uint64_t>();
            cfg.train.seed = cfg.data.seed;
        } else if (key == "lr_init") {
            cfg.train.lr_init = as_num();
        } else if (key == "rho") {
            cfg.train.rho = as_num();
        } else if (key == "batch_pairs") {
            cfg.train.batch_pairs = as_int();
        } else if (key == "max_iters") {
            cfg.train.max_iters = as_int();
        } else if (key == "alpha") {
            cfg.train.alpha = as_num();
        } else if (key == "k") {
            cfg.train.k = as_int();
        } else if (key == "group_n") {
            cfg.train.group_n = as_int();
        } else if (key == "use_inter") {
            cfg.train.use_inter = as_bool();
        } else if (key == "use_intra") {
            cfg.train.use_intra = as_bool();
        } else if (key == "channels") {
            cfg.train.channels = as_int();
        } else {
            throw ParameterError("unknown config key '" + key + "'");
        }
    }
    data::validate(cfg.data);
    validate(cfg.train);
    return cfg;
}

HarnessConfig load_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ParameterError("cannot read config file: " + path);
    std::stringstream buf;
    buf << is.rdbuf();
    return parse_config_text(buf.str());
}

std::string config_echo(const HarnessConfig& cfg) {
    ordered_json j;
    j["height"] = cfg.data.h;
    j["width"] = cfg.data.w;
    j["n_classes"] = cfg.data.n_classes;
    j["shapes"] = cfg.data.shapes;
    j["noise"] = cfg.data.noise;
    j["scenes"] = cfg.data.scenes;
    j["eval_scenes"] = cfg.data.eval_scenes;
    j["seed"] = cfg.train.seed;
    j["lr_init"] = cfg.train.lr_init;
    j["rho"] = cfg.train.rho;
    j["batch_pairs"] = cfg.train.batch_pairs;
    j["max_iters"] = cfg.train.max_iters;
    j["alpha"] = cfg.train.alpha;
    j["k"] = cfg.train.k;
    j["group_n"] = cfg.train.group_n;
    j["use_inter"] = cfg.train.use_inter;
    j["use_intra"] = cfg.train.use_intra;
    j["channels"] = cfg.train.channels;
    return j.dump();
}

net::PipelineConfig pipeline_from(const TrainConfig& cfg) {
    net::PipelineConfig p;
    p.use_inter = cfg.use_inter;
    p.use_intra = cfg.use_intra;
    p.k = cfg.k;
    p.inter.alpha = cfg.alpha;
    p.inter.group_n = 2;  // training always pairs; larger groups only in bench
    return p;
}

std::vector<double> pipeline_meta(const TrainConfig& cfg) {
    return {cfg.use_inter ? 1.0 : 0.0, cfg.use_intra ? 1.0 : 0.0, cfg.alpha,
            static_cast<double>(cfg.k), static_cast<double>(cfg.group_n)};
}

net::PipelineConfig pipeline_from_meta(const std::vector<double>& meta) {
    if (meta.size() < 5) throw ParseError("checkpoint lacks pipeline metadata");
    net::PipelineConfig p;
    p.use_inter = meta[0] != 0.0;
    p.use_intra = meta[1] != 0.0;
    p.inter.alpha = meta[2];
    p.k = static_cast<int>(meta[3]);
    p.inter.group_n = static_cast<int>(meta[4]);
    return p;
}

double lr_schedule(int itr, const TrainConfig& cfg) {
    if (itr < 0 || itr >= cfg.max_iters) throw ParameterError("iteration outside schedule range");
    const double frac = static_cast<double>(itr) / static_cast<double>(cfg.max_iters);
    return cfg.lr_init * std::pow(1.0 - frac, cfg.rho);
}

namespace {

// Augment both scenes; if the crops lose the shared class, retry, then fall
// back to the originals. Draw count is independent of the ablation flags so
// every arm sees the same sample sequence.
void augment_pair(const data::Scene& a, const data::Scene& b, RngStream& rng, data::Scene& out_a,
                  data::Scene& out_b) {
    for (int attempt = 0; attempt < 3; ++attempt) {
        data::Scene ca = data::augment(a, rng);
        data::Scene cb = data::augment(b, rng);
        if (labels_intersect(ca.labels, cb.labels)) {
            out_a = std::move(ca);
            out_b = std::move(cb);
            return;
        }
    }
    out_a = a;
    out_b = b;
}

int eligible_eval_scenes(const data::Corpus& corpus) {
    int n = 0;
    for (const data::Scene& s : corpus.scenes) n += s.has_mask ? 1 : 0;
    return n;
}

}  // namespace

TrainResult train(const data::Corpus& corpus, const data::Corpus* eval_corpus,
                  const HarnessConfig& hcfg) {
    const TrainConfig& cfg = hcfg.train;
    validate(cfg);
    if (corpus.scenes.size() < 2) throw DataError("corpus cannot form pairs");
    const int n_points = (corpus.h / 4) * (corpus.w / 4);
    if (cfg.use_intra && cfg.k >= n_points) {
        throw ParameterError("k must be below the feature point count");
    }

    RngStream rng_init(cfg.seed, kStreamInit);
    net::ModelParams params = net::init_params(cfg.channels, corpus.n_classes, rng_init);
    const net::PipelineConfig pipe = pipeline_from(cfg);
    RngStream rng_sample(cfg.seed, kStreamSample);

    TrainResult result;
    RunReport& report = result.report;
    report.config_json = config_echo(hcfg);
    report.run_id = run_id(report.config_json);

    const auto t0 = std::chrono::steady_clock::now();
    for (int itr = 0; itr < cfg.max_iters; ++itr) {
        const double lr = lr_schedule(itr, cfg);
        net::ModelParams grads = params.zeros_like();
        double batch_loss = 0.0;
        for (int b = 0; b < cfg.batch_pairs; ++b) {
            const data::PairSample ps = data::sample_pair(corpus, rng_sample);
            data::Scene sa, sb;
            augment_pair(corpus.scenes[static_cast<std::size_t>(ps.a)],
                         corpus.scenes[static_cast<std::size_t>(ps.b)], rng_sample, sa, sb);
            net::PairForward fwd =
                net::forward_pair(sa.image, sa.labels, sb.image, sb.labels, params, pipe);
            batch_loss += fwd.loss_value;
            grads.accumulate(net::backward(fwd.cache, params));
        }
        report.losses.push_back(batch_loss / cfg.batch_pairs);
        if (!std::isfinite(batch_loss)) {
            report.aborted = true;
            report.abort_reason = "non-finite loss at iteration " + std::to_string(itr);
            break;
        }
        params.add_scaled(grads, -lr / cfg.batch_pairs);
        if (!params.all_finite()) {
            report.aborted = true;
            report.abort_reason = "non-finite parameters after iteration " + std::to_string(itr);
            break;
        }
    }
    report.train_seconds = seconds_since(t0);

    if (!report.aborted && eval_corpus && eligible_eval_scenes(*eval_corpus) > 0) {
        const auto t1 = std::chrono::steady_clock::now();
        const EvalResult ev = eval_seed_miou(params, pipe, *eval_corpus, default_thresholds());
        report.thresholds = ev.thresholds;
        report.miou = ev.miou;
        report.best_theta = ev.best_theta;
        report.best_miou = ev.best_miou;
        report.eval_seconds = seconds_since(t1);
    }
    result.params = std::move(params);
    return result;
}

std::vector<double> default_thresholds() {
    std::vector<double> t;
    for (int i = 1; i <= 12; ++i) t.push_back(i / 20.0);
    return t;
}

double miou_from_confusion(const Confusion& conf) {
    double sum = 0.0;
    int n = 0;
    for (int id = 0; id < conf.n_ids; ++id) {
        std::int64_t truth_total = 0, fp = 0;
        for (int j = 0; j < conf.n_ids; ++j) {
            truth_total += conf.at(id, j);
            fp += conf.at(j, id);
        }
        if (truth_total == 0) continue;  // absent from the eval set
        const std::int64_t tp = conf.at(id, id);
        fp -= tp;
        const std::int64_t fn = truth_total - tp;
        sum += static_cast<double>(tp) / static_cast<double>(tp + fp + fn);
        ++n;
    }
    if (n == 0) throw DataError("confusion holds no pixels");
    return sum / n;
}

Tensor upsample_nearest(const Tensor& map, int H, int W) {
    const int h = static_cast<int>(map.extent(0)), w = static_cast<int>(map.extent(1));
    if (h < 1 || H % h != 0 || w < 1 || W % w != 0) {
        throw DimensionError("upsample factor must be integral");
    }
    const int fy = H / h, fx = W / w;
    Tensor out({static_cast<std::size_t>(H), static_cast<std::size_t>(W)});
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) out.at(y, x) = map.at(y / fy, x / fx);
    return out;
}

std::vector<int> predict_seed_mask(const std::vector<Tensor>& cams_up, const LabelVector& labels,
                                   double theta, int H, int W) {
    std::vector<int> pred(static_cast<std::size_t>(H) * W, 0);
    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
            int best = -1;
            double best_v = 0.0;
            for (std::size_t c = 0; c < labels.size(); ++c) {
                if (!labels[c]) continue;
                const double v = cams_up[c].at(y, x);
                if (v >= theta && (best < 0 || v > best_v)) {
                    best = static_cast<int>(c);
                    best_v = v;
                }
            }
            pred[static_cast<std::size_t>(y) * W + x] = best + 1;
        }
    }
    return pred;
}

namespace {

// Features for one scene under the trained pipeline. With inter-matching on,
// the scene is paired with the next scene (cyclically) sharing a class.
// Response maps are extracted per image, as at inference time: inter-matching
// exists only during training (it needs a partner image), while the intra
// update is part of the network and stays active when enabled.
FeatureMap scene_features(const data::Scene& s, const net::ModelParams& params,
                          const net::PipelineConfig& cfg) {
    return net::forward_single(s.image, params, cfg);
}

std::vector<Tensor> scene_cams(const FeatureMap& f, const net::ModelParams& params,
                               const LabelVector& labels, int H, int W, bool all_classes) {
    std::vector<Tensor> cams(labels.size());
    for (std::size_t c = 0; c < labels.size(); ++c) {
        if (!all_classes && !labels[c]) continue;
        const net::Cam cam = net::compute_cam(f, params.head_w, static_cast<int>(c));
        cams[c] = upsample_nearest(cam.map, H, W);
    }
    return cams;
}

}  // namespace

EvalResult eval_seed_miou(const net::ModelParams& params, const net::PipelineConfig& cfg,
                          const data::Corpus& corpus, const std::vector<double>& thresholds) {
    if (thresholds.empty()) throw ParameterError("threshold grid is empty");
    std::vector<int> order;
    for (std::size_t i = 0; i < corpus.scenes.size(); ++i) {
        if (corpus.scenes[i].has_mask) order.push_back(static_cast<int>(i));
    }
    if (order.empty()) throw DataError("empty eval set: no scene carries a mask");

    const int H = corpus.h, W = corpus.w;
    std::vector<std::vector<Tensor>> cams(order.size());
    for (std::size_t pos = 0; pos < order.size(); ++pos) {
        const data::Scene& s = corpus.scenes[static_cast<std::size_t>(order[pos])];
        const FeatureMap f = scene_features(s, params, cfg);
        cams[pos] = scene_cams(f, params, s.labels, H, W, false);
    }

    EvalResult res;
    res.thresholds = thresholds;
    res.scenes_evaluated = static_cast<int>(order.size());
    for (const double theta : thresholds) {
        Confusion conf(corpus.n_classes + 1);
        for (std::size_t pos = 0; pos < order.size(); ++pos) {
            const data::Scene& s = corpus.scenes[static_cast<std::size_t>(order[pos])];
            const std::vector<int> pred = predict_seed_mask(cams[pos], s.labels, theta, H, W);
            for (std::size_t px = 0; px < pred.size(); ++px) {
                conf.at(s.pixel_mask[px], pred[px]) += 1;
            }
        }
        res.miou.push_back(miou_from_confusion(conf));
    }
    res.best_theta = thresholds[0];
    res.best_miou = res.miou[0];
    for (std::size_t i = 1; i < thresholds.size(); ++i) {
        if (res.miou[i] > res.best_miou) {
            res.best_miou = res.miou[i];
            res.best_theta = thresholds[i];
        }
    }
    return res;
}

std::vector<AblateRow> ablate(const data::Corpus& corpus, const data::Corpus& eval_corpus,
                              const HarnessConfig& base) {
    const struct {
        const char* name;
        bool inter, intra;
    } arms[] = {
        {"baseline", false, false},
        {"inter", true, false},
        {"intra", false, true},
        {"both", true, true},
    };
    std::vector<AblateRow> rows;
    for (const auto& arm : arms) {
        HarnessConfig cfg = base;
        cfg.train.use_inter = arm.inter;
        cfg.train.use_intra = arm.intra;
        const TrainResult r = train(corpus, &eval_corpus, cfg);
        if (r.report.aborted) throw NumericError("ablation arm '" + std::string(arm.name) +
                                                 "' aborted: " + r.report.abort_reason);
        rows.push_back({arm.name, arm.inter, arm.intra, r.report.best_theta, r.report.best_miou});
    }
    return rows;
}

std::string ablate_csv(const std::vector<AblateRow>& rows) {
    std::string out = "config,use_inter,use_intra,best_theta,best_miou\n";
    for (const AblateRow& r : rows) {
        char line[128];
        std::snprintf(line, sizeof(line), "%s,%d,%d,%.2f,%.4f\n", r.name.c_str(),
                      r.use_inter ? 1 : 0, r.use_intra ? 1 : 0, r.best_theta, r.best_miou);
        out += line;
    }
    return out;
}

std::vector<SweepRow> sweep(const data::Corpus& corpus, const data::Corpus& eval_corpus,
                            const HarnessConfig& base, const std::string& param,
                            const std::vector<double>& values) {
    if (values.empty()) throw ParameterError("sweep needs at least one value");
    if (param != "alpha" && param != "k" && param != "group_n") {
        throw ParameterError("sweep param must be alpha, k or group_n");
    }
    std::vector<SweepRow> rows;
    for (const double v : values) {
        HarnessConfig cfg = base;
        if (param == "alpha") {
            cfg.train.alpha = v;
        } else {
            if (v != std::floor(v)) throw ParameterError("sweep values for " + param + " must be integers");
            if (param == "k") {
                cfg.train.k = static_cast<int>(v);
            } else {
                cfg.train.group_n = static_cast<int>(v);
            }
        }
        const TrainResult r = train(corpus, &eval_corpus, cfg);
        if (r.report.aborted) {
            throw NumericError("sweep run aborted: " + r.report.abort_reason);
        }
        SweepRow row;
        row.value = v;
        row.best_theta = r.report.best_theta;
        row.best_miou = r.report.best_miou;
        if (param == "group_n") {
            row.match_seconds = inter::time_group_match(corpus.w / 4, corpus.h / 4,
                                                        cfg.train.channels, cfg.train.group_n, 3);
            row.timed = true;
        }
        rows.push_back(row);
    }
    return rows;
}

std::string sweep_csv(const std::string& param, const std::vector<SweepRow>& rows) {
    const bool timed = !rows.empty() && rows.front().timed;
    std::string out = "param,value,best_theta,best_miou";
    if (timed) out += ",match_seconds";
    out += "\n";
    for (const SweepRow& r : rows) {
        char line[160];
        if (timed) {
            std::snprintf(line, sizeof(line), "%s,%g,%.2f,%.4f,%.6f\n", param.c_str(), r.value,
                          r.best_theta, r.best_miou, r.match_seconds);
        } else {
            std::snprintf(line, sizeof(line), "%s,%g,%.2f,%.4f\n", param.c_str(), r.value,
                          r.best_theta, r.best_miou);
        }
        out += line;
    }
    return out;
}

void emit_masks(const net::ModelParams& params, const net::PipelineConfig& cfg,
                const data::Corpus& corpus, const std::string& out_dir) {
    fs::create_directories(out_dir);
    const double theta = 0.25;
    const int H = corpus.h, W = corpus.w;
    for (const data::Scene& s : corpus.scenes) {
        const FeatureMap f = scene_features(s, params, cfg);
        const std::vector<Tensor> cams = scene_cams(f, params, s.labels, H, W, true);
        const std::vector<int> pred = predict_seed_mask(cams, s.labels, theta, H, W);

        Tensor seed({static_cast<std::size_t>(H), static_cast<std::size_t>(W)});
        for (std::size_t px = 0; px < seed.size(); ++px) seed[px] = 32.0 * pred[px];
        const std::string base = (fs::path(out_dir) / s.name).string();
        pbm::write_pgm(base + ".seed.pgm", seed);
        for (std::size_t c = 0; c < cams.size(); ++c) {
            Tensor heat({static_cast<std::size_t>(H), static_cast<std::size_t>(W)});
            for (std::size_t px = 0; px < heat.size(); ++px) heat[px] = 255.0 * cams[c][px];
            pbm::write_pgm(base + ".cam" + std::to_string(c) + ".pgm", heat);
        }
    }
}

std::string report_json(const RunReport& report) {
    ordered_json j;
    j["run_id"] = report.run_id;
    j["config"] = ordered_json::parse(report.config_json);
    j["losses"] = report.losses;
    j["thresholds"] = report.thresholds;
    j["miou"] = report.miou;
    j["best_theta"] = report.best_theta;
    j["best_miou"] = report.best_miou;
    j["aborted"] = report.aborted;
    j["abort_reason"] = report.abort_reason;
    return j.dump(2) + "\n";
}

void write_report(const RunReport& report, const std::string& path) {
    {
        std::ofstream os(path, std::ios::trunc);
        if (!os) throw DataError("cannot write report: " + path);
        os << report_json(report);
        if (!os) throw DataError("report write failed: " + path);
    }
    std::ofstream ts(path + ".timing", std::ios::trunc);
    if (!ts) throw DataError("cannot write timing file: " + path + ".timing");
    char buf[96];
    std::snprintf(buf, sizeof(buf), "train_seconds=%.3f\neval_seconds=%.3f\n",
                  report.train_seconds, report.eval_seconds);
    ts << buf;
}

std::string run_id(const std::string& text) {
    std::uint64_t h = 1469598103934665603ull;
    for (const unsigned char ch : text) {
        h ^= ch;
        h *= 1099511628211ull;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

}  // namespace comatch::harness
