#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "comatch/errors.hpp"
#include "comatch/harness.hpp"
#include "comatch/inter_match.hpp"

namespace fs = std::filesystem;
using namespace comatch;

namespace {

struct GenPaths {
    data::Corpus train;
    data::Corpus eval;
    bool has_eval = false;
};

GenPaths generate_corpora(const harness::HarnessConfig& cfg) {
    GenPaths out;
    RngStream rng(cfg.data.seed, kStreamData);
    out.train = data::gen_corpus(cfg.data, rng);
    if (cfg.data.eval_scenes > 0) {
        data::DataConfig ec = cfg.data;
        ec.scenes = cfg.data.eval_scenes;
        RngStream rng_eval(cfg.data.seed, kStreamEvalData);
        out.eval = data::gen_corpus(ec, rng_eval);
        out.has_eval = true;
    }
    return out;
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw DataError("cannot write " + path);
    os << text;
    if (!os) throw DataError("write failed: " + path);
}

std::vector<double> parse_values(const std::string& csv) {
    std::vector<double> values;
    std::size_t start = 0;
    while (start <= csv.size()) {
        const std::size_t comma = csv.find(',', start);
        const std::string item =
            csv.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
        if (item.empty()) throw ParameterError("empty entry in --values");
        try {
            std::size_t used = 0;
            values.push_back(std::stod(item, &used));
            if (used != item.size()) throw std::invalid_argument(item);
        } catch (const std::exception&) {
            throw ParameterError("bad numeric value '" + item + "' in --values");
        }
        if (comma == std::string::npos) break;
        start = comma + 1;
    }
    return values;
}

void parse_range(const std::string& text, int& lo, int& hi) {
    const std::size_t dots = text.find("..");
    try {
        if (dots == std::string::npos) {
            lo = hi = std::stoi(text);
        } else {
            lo = std::stoi(text.substr(0, dots));
            hi = std::stoi(text.substr(dots + 2));
        }
    } catch (const std::exception&) {
        throw ParameterError("bad --n range '" + text + "' (expected e.g. 2..5)");
    }
    if (lo < 2 || hi > 5 || lo > hi) throw ParameterError("--n range must lie within 2..5");
}

int run(int argc, char** argv) {
    CLI::App app{"co-occurrent matching trainer and evaluation harness"};
    app.require_subcommand(1);

    std::string config_path, data_dir, out_path, ckpt_path, report_path;
    std::string param, values_text, n_range = "2..5";

    CLI::App* gen = app.add_subcommand("gen", "generate a synthetic corpus");
    gen->add_option("--config", config_path, "config JSON")->required();
    gen->add_option("--out", out_path, "output directory")->required();

    CLI::App* tr = app.add_subcommand("train", "train a model on a corpus");
    tr->add_option("--config", config_path, "config JSON")->required();
    tr->add_option("--data", data_dir, "corpus directory")->required();
    tr->add_option("--out", ckpt_path, "checkpoint path")->required();

    CLI::App* ev = app.add_subcommand("eval", "evaluate seed mIoU of a checkpoint");
    ev->add_option("--ckpt", ckpt_path, "checkpoint path")->required();
    ev->add_option("--data", data_dir, "corpus directory")->required();
    ev->add_option("--report", report_path, "output CSV")->required();

    CLI::App* ab = app.add_subcommand("ablate", "run the four-arm module ablation");
    ab->add_option("--config", config_path, "config JSON")->required();
    ab->add_option("--out", out_path, "output directory")->required();

    CLI::App* sw = app.add_subcommand("sweep", "sweep one hyperparameter");
    sw->add_option("--param", param, "alpha | k | group_n")->required();
    sw->add_option("--values", values_text, "comma-separated values")->required();
    sw->add_option("--out", out_path, "output directory")->required();
    sw->add_option("--config", config_path, "optional config JSON");

    CLI::App* bg = app.add_subcommand("bench-group", "time inter-matching per group size");
    bg->add_option("--n", n_range, "group size range, e.g. 2..5");
    bg->add_option("--out", report_path, "output CSV")->required();

    CLI::App* em = app.add_subcommand("emit", "write seed masks and response maps");
    em->add_option("--ckpt", ckpt_path, "checkpoint path")->required();
    em->add_option("--data", data_dir, "corpus directory")->required();
    em->add_option("--out", out_path, "output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    if (app.got_subcommand(gen)) {
        const harness::HarnessConfig cfg = harness::load_config(config_path);
        const GenPaths corpora = generate_corpora(cfg);
        data::save_corpus(corpora.train, out_path);
        std::printf("wrote %zu scenes to %s\n", corpora.train.scenes.size(), out_path.c_str());
        if (corpora.has_eval) {
            const std::string eval_dir = (fs::path(out_path) / "eval").string();
            data::save_corpus(corpora.eval, eval_dir);
            std::printf("wrote %zu scenes to %s\n", corpora.eval.scenes.size(), eval_dir.c_str());
        }
        return 0;
    }

    if (app.got_subcommand(tr)) {
        const harness::HarnessConfig cfg = harness::load_config(config_path);
        const data::Corpus corpus = data::load_corpus(data_dir);
        data::Corpus eval_corpus;
        const bool has_eval = fs::exists(fs::path(data_dir) / "eval" / "labels.csv");
        if (has_eval) eval_corpus = data::load_corpus((fs::path(data_dir) / "eval").string());
        const harness::TrainResult r =
            harness::train(corpus, has_eval ? &eval_corpus : nullptr, cfg);
        const fs::path parent = fs::path(ckpt_path).parent_path();
        if (!parent.empty()) fs::create_directories(parent);
        net::save_checkpoint(ckpt_path, r.params, harness::pipeline_meta(cfg.train));
        harness::write_report(r.report, ckpt_path + ".report.json");
        if (r.report.aborted) {
            std::fprintf(stderr, "training aborted: %s\n", r.report.abort_reason.c_str());
            return 3;
        }
        std::printf("run %s: %d iterations", r.report.run_id.c_str(),
                    static_cast<int>(r.report.losses.size()));
        if (!r.report.losses.empty()) std::printf(", final loss %.4f", r.report.losses.back());
        if (!r.report.miou.empty()) {
            std::printf(", best mIoU %.4f at theta %.2f", r.report.best_miou,
                        r.report.best_theta);
        }
        std::printf("\n");
        return 0;
    }

    if (app.got_subcommand(ev)) {
        std::vector<double> meta;
        const net::ModelParams params = net::load_checkpoint(ckpt_path, &meta);
        const net::PipelineConfig pipe = harness::pipeline_from_meta(meta);
        const data::Corpus corpus = data::load_corpus(data_dir);
        const harness::EvalResult res =
            harness::eval_seed_miou(params, pipe, corpus, harness::default_thresholds());
        std::string csv = "theta,miou,is_best\n";
        for (std::size_t i = 0; i < res.thresholds.size(); ++i) {
            char line[64];
            std::snprintf(line, sizeof(line), "%.2f,%.6f,%d\n", res.thresholds[i], res.miou[i],
                          res.thresholds[i] == res.best_theta ? 1 : 0);
            csv += line;
        }
        write_text(report_path, csv);
        std::printf("evaluated %d scenes: best mIoU %.4f at theta %.2f\n", res.scenes_evaluated,
                    res.best_miou, res.best_theta);
        return 0;
    }

    if (app.got_subcommand(ab)) {
        const harness::HarnessConfig cfg = harness::load_config(config_path);
        const GenPaths corpora = generate_corpora(cfg);
        if (!corpora.has_eval) throw ParameterError("ablate needs eval_scenes > 0");
        const std::vector<harness::AblateRow> rows =
            harness::ablate(corpora.train, corpora.eval, cfg);
        fs::create_directories(out_path);
        const std::string csv = harness::ablate_csv(rows);
        write_text((fs::path(out_path) / "ablation.csv").string(), csv);
        std::fputs(csv.c_str(), stdout);
        return 0;
    }

    if (app.got_subcommand(sw)) {
        harness::HarnessConfig cfg;
        if (!config_path.empty()) cfg = harness::load_config(config_path);
        const std::vector<double> values = parse_values(values_text);
        const GenPaths corpora = generate_corpora(cfg);
        if (!corpora.has_eval) throw ParameterError("sweep needs eval_scenes > 0");
        const std::vector<harness::SweepRow> rows =
            harness::sweep(corpora.train, corpora.eval, cfg, param, values);
        fs::create_directories(out_path);
        const std::string csv = harness::sweep_csv(param, rows);
        write_text((fs::path(out_path) / ("sweep_" + param + ".csv")).string(), csv);
        std::fputs(csv.c_str(), stdout);
        return 0;
    }

    if (app.got_subcommand(bg)) {
        int lo = 2, hi = 5;
        parse_range(n_range, lo, hi);
        std::string csv = "group_n,median_seconds\n";
        for (int n = lo; n <= hi; ++n) {
            const double t = inter::time_group_match(8, 8, 24, n, 5);
            char line[64];
            std::snprintf(line, sizeof(line), "%d,%.6f\n", n, t);
            csv += line;
        }
        write_text(report_path, csv);
        std::fputs(csv.c_str(), stdout);
        return 0;
    }

    if (app.got_subcommand(em)) {
        std::vector<double> meta;
        const net::ModelParams params = net::load_checkpoint(ckpt_path, &meta);
        const net::PipelineConfig pipe = harness::pipeline_from_meta(meta);
        const data::Corpus corpus = data::load_corpus(data_dir);
        harness::emit_masks(params, pipe, corpus, out_path);
        std::printf("wrote masks for %zu scenes to %s\n", corpus.scenes.size(), out_path.c_str());
        return 0;
    }

    return 1;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const NumericError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 3;
    } catch (const comatch::ParseError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const DataError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
}
