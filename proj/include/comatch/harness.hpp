#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "comatch/data.hpp"
#include "comatch/network.hpp"

namespace comatch::harness {

struct TrainConfig {
    double lr_init = 0.1;
    double rho = 0.9;
    int batch_pairs = 8;
    int max_iters = 2000;
    std::uint64_t seed = 1;
    double alpha = 1.5;
    int k = 8;
    int group_n = 2;
    bool use_inter = true;
    bool use_intra = true;
    int channels = 32;
};

struct HarnessConfig {
    data::DataConfig data;
    TrainConfig train;
};

void validate(const TrainConfig& cfg);

HarnessConfig parse_config_text(const std::string& text);
HarnessConfig load_config(const std::string& path);
std::string config_echo(const HarnessConfig& cfg);

net::PipelineConfig pipeline_from(const TrainConfig& cfg);
std::vector<double> pipeline_meta(const TrainConfig& cfg);
net::PipelineConfig pipeline_from_meta(const std::vector<double>& meta);

double lr_schedule(int itr, const TrainConfig& cfg);

struct RunReport {
    std::string run_id;
    std::string config_json;  // canonical echo
    std::vector<double> losses;
    std::vector<double> thresholds;
    std::vector<double> miou;
    double best_theta = 0.0;
    double best_miou = 0.0;
    bool aborted = false;
    std::string abort_reason;
    double train_seconds = 0.0;  // wall clock, sidecar only
    double eval_seconds = 0.0;
};

struct TrainResult {
    net::ModelParams params;
    RunReport report;
};

TrainResult train(const data::Corpus& corpus, const data::Corpus* eval_corpus,
                  const HarnessConfig& cfg);

std::vector<double> default_thresholds();

// (C+1)^2 pixel confusion over truth/prediction ids
struct Confusion {
    int n_ids = 0;
    std::vector<std::int64_t> counts;
    explicit Confusion(int n) : n_ids(n), counts(static_cast<std::size_t>(n) * n, 0) {}
    std::int64_t& at(int truth, int pred) {
        return counts[static_cast<std::size_t>(truth) * n_ids + pred];
    }
    std::int64_t at(int truth, int pred) const {
        return counts[static_cast<std::size_t>(truth) * n_ids + pred];
    }
};

double miou_from_confusion(const Confusion& conf);

std::vector<int> predict_seed_mask(const std::vector<Tensor>& cams_up, const LabelVector& labels,
                                   double theta, int H, int W);

Tensor upsample_nearest(const Tensor& map, int H, int W);

struct EvalResult {
    std::vector<double> thresholds;
    std::vector<double> miou;
    double best_theta = 0.0;
    double best_miou = 0.0;
    int scenes_evaluated = 0;
};

EvalResult eval_seed_miou(const net::ModelParams& params, const net::PipelineConfig& cfg,
                          const data::Corpus& corpus, const std::vector<double>& thresholds);

struct AblateRow {
    std::string name;
    bool use_inter = false, use_intra = false;
    double best_theta = 0.0;
    double best_miou = 0.0;
};

std::vector<AblateRow> ablate(const data::Corpus& corpus, const data::Corpus& eval_corpus,
                              const HarnessConfig& base);
std::string ablate_csv(const std::vector<AblateRow>& rows);

struct SweepRow {
    double value = 0.0;
    double best_theta = 0.0;
    double best_miou = 0.0;
    double match_seconds = 0.0;  // group_n sweeps only
    bool timed = false;
};

std::vector<SweepRow> sweep(const data::Corpus& corpus, const data::Corpus& eval_corpus,
                            const HarnessConfig& base, const std::string& param,
                            const std::vector<double>& values);
std::string sweep_csv(const std::string& param, const std::vector<SweepRow>& rows);

void emit_masks(const net::ModelParams& params, const net::PipelineConfig& cfg,
                const data::Corpus& corpus, const std::string& out_dir);

std::string report_json(const RunReport& report);
void write_report(const RunReport& report, const std::string& path);
std::string run_id(const std::string& text);

}  // namespace comatch::harness
