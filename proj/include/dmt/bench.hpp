// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dmt/metrics.hpp"
#include "dmt/training.hpp"

namespace dmt {

// ---- benchmark (valid-token scaling) -----------------------------------------

struct BenchConfig {
    ModelConfig model;           // d/heads/L/ffn/K/warp taken from here
    std::int64_t frames = 8;     // T
    std::int64_t frame_h = 64;   // pixel resolution; grid is /4
    std::int64_t frame_w = 64;
    std::vector<double> ratios{0.0, 0.1, 0.3, 0.6, 0.9};
    std::int64_t repetitions = 20;
    std::int64_t warmup = 3;
    std::uint64_t seed = 7;
};

struct BenchRow {
    double mask_ratio = 0.0;
    std::int64_t total_tokens = 0;   // N
    std::int64_t valid_tokens = 0;   // N' entering layer 1
    std::uint64_t formula_macs = 0;  // sum over layers of attention_macs(N'_l)
    std::uint64_t counted_macs = 0;  // instrumented
    double wall_ms_mean = 0.0;
    double wall_ms_std = 0.0;
    std::vector<std::int64_t> layer_tokens;
    std::vector<std::uint64_t> layer_macs;
};

struct BenchReport {
    BenchConfig config;
    std::vector<BenchRow> rows; // sorted by mask_ratio
};

/// Runs the DMT stack forward (no tape) per ratio with MAC instrumentation
/// and wall-clock timing; warmup runs excluded. Enforces the report
/// invariant counted == formula per row.
BenchReport bench_run(const BenchConfig& cfg);

void write_bench_csv(const BenchReport& report, const std::string& path);
void write_bench_json(const BenchReport& report, const std::string& path);

// ---- metric evaluation over files --------------------------------------------

struct MetricReport {
    std::vector<std::string> names;
    std::vector<double> psnr_per_frame;
    std::vector<double> ssim_per_frame;
    double psnr_mean = 0.0;
    double ssim_mean = 0.0;
    bool psnr_infinite = false;
};

/// Pairs reference/test images by sorted filename and computes PSNR/SSIM.
MetricReport evaluate_dirs(const std::string& ref_dir, const std::string& test_dir);
void write_metric_csv(const MetricReport& report, const std::string& path);
void write_metric_json(const MetricReport& report, const std::string& path);

// ---- ablation harness ----------------------------------------------------------

struct AblateConfig {
    TrainConfig train;
    SyntheticDatasetSpec data;
    std::int64_t steps_image = 150;
    std::int64_t steps_video = 150;
    std::int64_t eval_clips = 4;
    std::uint64_t eval_seed = 4242;
};

struct AblateRow {
    std::string variant;
    double psnr = 0.0;
    double ssim = 0.0;
};

/// Trains and evaluates the full model plus the four ablation variants on a
/// held-out synthetic set. Directional results only.
std::vector<AblateRow> ablate_run(const AblateConfig& cfg);
void write_ablate_csv(const std::vector<AblateRow>& rows, const std::string& path);

// ---- flat key=value config files -----------------------------------------------

struct FileConfig {
    ModelConfig model;
    AdamConfig adam;
    LossWeights weights;
    std::int64_t batch = 2;
    bool lr_set = false; // whether the file pinned lr explicitly
};

/// Parses `key=value` lines ('#' comments, blank lines ignored). Unknown
/// keys are hard errors. Keys: L, d, heads, ffn_hidden, K, warp_k, warp_s,
/// warp_p, C, lr, lambda_rec, lambda_mig, batch.
FileConfig parse_config_file(const std::string& path, const FileConfig& defaults = {});

std::vector<std::string> list_images_sorted(const std::string& dir);

} // namespace dmt
