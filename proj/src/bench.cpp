// SPDX-License-Identifier: Apache-2.0
#include "dmt/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "dmt/image_io.hpp"

namespace dmt {

namespace fs = std::filesystem;
using nlohmann::json;

BenchReport bench_run(const BenchConfig& cfg) {
    cfg.model.validate();
    if (cfg.frame_h % kDownscaleFactor != 0 || cfg.frame_w % kDownscaleFactor != 0) {
        throw ConfigError("bench_run: frame dims must be divisible by 4");
    }
    for (double r : cfg.ratios) {
        if (r < 0.0 || r > 0.95) throw ConfigError("bench_run: ratios must lie in [0, 0.95]");
    }
    if (cfg.repetitions < 1) throw ConfigError("bench_run: repetitions must be >= 1");

    const GridDims grid{cfg.frames, cfg.frame_h / kDownscaleFactor,
                        cfg.frame_w / kDownscaleFactor};
    const DmtConfig dmt_cfg = cfg.model.dmt_for(grid);
    const std::int64_t N = grid.cells();

    Rng init_rng(Rng::splitmix(cfg.seed ^ 0x51ed270b0f4dULL));
    std::vector<DmtLayerParams> layers;
    for (std::int64_t l = 0; l < dmt_cfg.layers; ++l) {
        layers.push_back(init_dmt_layer_params(dmt_cfg, init_rng, false));
    }

    std::vector<double> ratios = cfg.ratios;
    std::sort(ratios.begin(), ratios.end());

    BenchReport report;
    report.config = cfg;
    NoGradGuard no_grad;
    for (double ratio : ratios) {
        // seeded per-frame free-form masks at frame resolution, then
        // any-valid downscaling to the token grid
        MaskSequence grid_masks;
        for (std::int64_t t = 0; t < cfg.frames; ++t) {
            MaskMap pixel_mask = gen_freeform_mask(
                cfg.frame_h, cfg.frame_w, ratio,
                Rng::splitmix(cfg.seed ^ (0xabcd0000ULL + static_cast<std::uint64_t>(t) +
                                          static_cast<std::uint64_t>(ratio * 1e6))));
            grid_masks.push_back(downscale_mask(pixel_mask, kDownscaleFactor));
        }

        Rng feat_rng(Rng::splitmix(cfg.seed ^ 0xfeedULL));
        TensorPtr features = tensor::rand_uniform({N, dmt_cfg.width}, feat_rng, -1.0, 1.0);
        TensorPtr entry = rows_to_grid(features, grid.frames, grid.h, grid.w);
        entry = mul_mask_channels(entry, masks_to_tensor(grid_masks));
        const LayerState state{entry, grid_masks, 0};

        BenchRow row;
        row.mask_ratio = ratio;
        row.total_tokens = N;

        std::vector<double> wall_ms;
        for (std::int64_t rep = 0; rep < cfg.warmup + cfg.repetitions; ++rep) {
            const auto t0 = std::chrono::steady_clock::now();
            StackResult result = dmt_stack(state, layers, dmt_cfg, false, true);
            const auto t1 = std::chrono::steady_clock::now();
            if (rep < cfg.warmup) continue;
            wall_ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
            if (wall_ms.size() == 1) {
                row.valid_tokens = result.stats.front().n_tokens;
                row.counted_macs = 0;
                row.formula_macs = 0;
                for (const LayerStats& s : result.stats) {
                    row.layer_tokens.push_back(s.n_tokens);
                    row.layer_macs.push_back(s.attention_macs);
                    row.counted_macs += s.attention_macs;
                    row.formula_macs += attention_macs(s.n_tokens, dmt_cfg.width);
                }
            }
        }
        double mean = 0.0;
        for (double v : wall_ms) mean += v;
        mean /= static_cast<double>(wall_ms.size());
        double var = 0.0;
        for (double v : wall_ms) var += (v - mean) * (v - mean);
        var /= static_cast<double>(wall_ms.size());
        row.wall_ms_mean = mean;
        row.wall_ms_std = std::sqrt(var);

        if (row.counted_macs != row.formula_macs) {
            throw Error("bench_run: instrumented MACs " + std::to_string(row.counted_macs) +
                        " disagree with the cost formula " + std::to_string(row.formula_macs));
        }
        report.rows.push_back(std::move(row));
    }
    return report;
}

void write_bench_csv(const BenchReport& report, const std::string& path) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw IoError("write_bench_csv: cannot open " + path);
    f << "mask_ratio,N,N_valid,formula_macs,counted_macs,wall_ms_mean,wall_ms_std\n";
    for (const auto& r : report.rows) {
        f << r.mask_ratio << "," << r.total_tokens << "," << r.valid_tokens << ","
          << r.formula_macs << "," << r.counted_macs << "," << r.wall_ms_mean << ","
          << r.wall_ms_std << "\n";
    }
}

void write_bench_json(const BenchReport& report, const std::string& path) {
    json j;
    j["config"] = {{"frames", report.config.frames},
                   {"frame_h", report.config.frame_h},
                   {"frame_w", report.config.frame_w},
                   {"d", report.config.model.width},
                   {"heads", report.config.model.heads},
                   {"layers", report.config.model.layers},
                   {"repetitions", report.config.repetitions},
                   {"warmup", report.config.warmup},
                   {"seed", report.config.seed}};
    j["rows"] = json::array();
    for (const auto& r : report.rows) {
        j["rows"].push_back({{"mask_ratio", r.mask_ratio},
                             {"N", r.total_tokens},
                             {"N_valid", r.valid_tokens},
                             {"formula_macs", r.formula_macs},
                             {"counted_macs", r.counted_macs},
                             {"wall_ms_mean", r.wall_ms_mean},
                             {"wall_ms_std", r.wall_ms_std},
                             {"layer_tokens", r.layer_tokens},
                             {"layer_macs", r.layer_macs}});
    }
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw IoError("write_bench_json: cannot open " + path);
    f << j.dump(2) << "\n";
}

// ---- metric evaluation ------------------------------------------------------------

std::vector<std::string> list_images_sorted(const std::string& dir) {
    if (!fs::is_directory(dir)) throw IoError("not a directory: " + dir);
    std::vector<std::string> names;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (!entry.is_regular_file()) continue;
        const std::string name = entry.path().filename().string();
        const auto dot = name.find_last_of('.');
        if (dot == std::string::npos) continue;
        std::string ext = name.substr(dot + 1);
        std::transform(ext.begin(), ext.end(), ext.begin(),
                       [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
        if (ext == "ppm" || ext == "pgm" || ext == "png") names.push_back(name);
    }
    std::sort(names.begin(), names.end());
    return names;
}

MetricReport evaluate_dirs(const std::string& ref_dir, const std::string& test_dir) {
    const std::vector<std::string> ref_names = list_images_sorted(ref_dir);
    const std::vector<std::string> test_names = list_images_sorted(test_dir);
    if (ref_names.empty()) throw IoError("no images found in " + ref_dir);
    if (ref_names.size() != test_names.size()) {
        throw IoError("image counts differ: " + std::to_string(ref_names.size()) + " in " +
                      ref_dir + " vs " + std::to_string(test_names.size()) + " in " + test_dir);
    }

    MetricReport report;
    double psnr_acc = 0.0, ssim_acc = 0.0;
    for (std::size_t i = 0; i < ref_names.size(); ++i) {
        TensorPtr fa = image_to_frame(read_image(ref_dir + "/" + ref_names[i]));
        TensorPtr fb = image_to_frame(read_image(test_dir + "/" + test_names[i]));
        if (fa->shape != fb->shape) {
            throw IoError("image dimensions differ for pair " + ref_names[i] + " / " +
                          test_names[i]);
        }
        Shape s4{1, 3, fa->dim(1), fa->dim(2)};
        FrameSequence a(tensor::from_data(s4, fa->data));
        FrameSequence b(tensor::from_data(s4, fb->data));
        const PsnrResult p = psnr(a, b);
        const SsimResult s = ssim(a, b);
        report.names.push_back(ref_names[i]);
        report.psnr_per_frame.push_back(p.per_frame[0]);
        report.ssim_per_frame.push_back(s.per_frame[0]);
        if (p.has_infinite) report.psnr_infinite = true;
        psnr_acc += p.per_frame[0];
        ssim_acc += s.per_frame[0];
    }
    const double n = static_cast<double>(ref_names.size());
    report.psnr_mean = report.psnr_infinite ? std::numeric_limits<double>::infinity()
                                            : psnr_acc / n;
    report.ssim_mean = ssim_acc / n;
    return report;
}

void write_metric_csv(const MetricReport& report, const std::string& path) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw IoError("write_metric_csv: cannot open " + path);
    f << "frame,psnr_db,ssim\n";
    for (std::size_t i = 0; i < report.names.size(); ++i) {
        f << report.names[i] << "," << report.psnr_per_frame[i] << ","
          << report.ssim_per_frame[i] << "\n";
    }
    f << "mean," << report.psnr_mean << "," << report.ssim_mean << "\n";
}

void write_metric_json(const MetricReport& report, const std::string& path) {
    json j;
    j["frames"] = json::array();
    for (std::size_t i = 0; i < report.names.size(); ++i) {
        j["frames"].push_back({{"name", report.names[i]},
                               {"psnr_db", report.psnr_per_frame[i]},
                               {"ssim", report.ssim_per_frame[i]}});
    }
    j["psnr_mean_db"] = report.psnr_infinite ? json("inf") : json(report.psnr_mean);
    j["ssim_mean"] = report.ssim_mean;
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw IoError("write_metric_json: cannot open " + path);
    f << j.dump(2) << "\n";
}

// ---- ablation harness ------------------------------------------------------------

namespace {

struct Variant {
    std::string name;
    bool token_selection, mask_activation, use_rfc;
    double lambda_mig;
};

} // namespace

std::vector<AblateRow> ablate_run(const AblateConfig& cfg) {
    const std::vector<Variant> variants{
        {"full", true, true, true, cfg.train.weights.lambda_mig},
        {"no_token_selection", false, true, true, cfg.train.weights.lambda_mig},
        {"no_mask_activation", true, false, true, cfg.train.weights.lambda_mig},
        {"no_rfc", true, true, false, cfg.train.weights.lambda_mig},
        {"no_migration", true, true, true, 0.0},
    };

    SyntheticDatasetSpec eval_data = cfg.data;
    eval_data.seed = cfg.eval_seed;

    std::vector<AblateRow> rows;
    for (const Variant& v : variants) {
        TrainConfig tc = cfg.train;
        tc.model.token_selection = v.token_selection;
        tc.model.mask_activation = v.mask_activation;
        tc.model.use_rfc = v.use_rfc;
        tc.weights.lambda_mig = v.lambda_mig;

        ModelParams prior = pretrain_image(tc, cfg.data, cfg.steps_image);
        ModelParams video = train_video(tc, cfg.data, prior, tc.model, cfg.steps_video);

        double psnr_acc = 0.0, ssim_acc = 0.0;
        {
            NoGradGuard no_grad;
            for (std::int64_t c = 0; c < cfg.eval_clips; ++c) {
                FrameSequence frames = synth_clip(eval_data, c);
                MaskSequence masks = synth_masks(eval_data, c);
                ForwardResult out = forward(frames, masks, video, tc.model, false);
                psnr_acc += psnr(out.composed, frames).mean;
                ssim_acc += ssim(out.composed, frames).mean;
            }
        }
        rows.push_back({v.name, psnr_acc / static_cast<double>(cfg.eval_clips),
                        ssim_acc / static_cast<double>(cfg.eval_clips)});
    }
    return rows;
}

void write_ablate_csv(const std::vector<AblateRow>& rows, const std::string& path) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw IoError("write_ablate_csv: cannot open " + path);
    f << "variant,psnr_db,ssim\n";
    for (const auto& r : rows) f << r.variant << "," << r.psnr << "," << r.ssim << "\n";
}

// ---- config files -----------------------------------------------------------------

FileConfig parse_config_file(const std::string& path, const FileConfig& defaults) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open config file " + path);
    FileConfig cfg = defaults;
    std::string line;
    std::int64_t lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        // trim
        const auto b = line.find_first_not_of(" \t\r");
        if (b == std::string::npos) continue;
        const auto e = line.find_last_not_of(" \t\r");
        line = line.substr(b, e - b + 1);
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError(path + ":" + std::to_string(lineno) + ": expected key=value");
        }
        auto trim = [](std::string s) {
            const auto b2 = s.find_first_not_of(" \t");
            if (b2 == std::string::npos) return std::string();
            const auto e2 = s.find_last_not_of(" \t");
            return s.substr(b2, e2 - b2 + 1);
        };
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty() || value.empty()) {
            throw ConfigError(path + ":" + std::to_string(lineno) + ": empty key or value");
        }
        try {
            if (key == "L") cfg.model.layers = std::stoll(value);
            else if (key == "d") cfg.model.width = std::stoll(value);
            else if (key == "heads") cfg.model.heads = std::stoll(value);
            else if (key == "ffn_hidden") cfg.model.ffn_hidden = std::stoll(value);
            else if (key == "K") cfg.model.rfc_kernel = std::stoll(value);
            else if (key == "warp_k") cfg.model.warp.kernel = std::stoll(value);
            else if (key == "warp_s") cfg.model.warp.stride = std::stoll(value);
            else if (key == "warp_p") cfg.model.warp.padding = std::stoll(value);
            else if (key == "C") cfg.model.channels = std::stoll(value);
            else if (key == "lr") {
                cfg.adam.lr = std::stod(value);
                cfg.lr_set = true;
            }
            else if (key == "lambda_rec") cfg.weights.lambda_rec = std::stod(value);
            else if (key == "lambda_mig") cfg.weights.lambda_mig = std::stod(value);
            else if (key == "batch") cfg.batch = std::stoll(value);
            else {
                throw ConfigError(path + ":" + std::to_string(lineno) + ": unknown key '" + key +
                                  "'");
            }
        } catch (const std::invalid_argument&) {
            throw ConfigError(path + ":" + std::to_string(lineno) + ": bad value for '" + key +
                              "'");
        } catch (const std::out_of_range&) {
            throw ConfigError(path + ":" + std::to_string(lineno) + ": value out of range for '" +
                              key + "'");
        }
    }
    return cfg;
}

} // namespace dmt
