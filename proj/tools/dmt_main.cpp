// SPDX-License-Identifier: Apache-2.0
//
// Command-line surface: bench, train, inpaint, eval, genmask, ablate.
// Exit codes: 0 success, 1 usage error, 2 data error.
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dmt/bench.hpp"
#include "dmt/image_io.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;

struct SizeArg {
    std::int64_t h = 64, w = 64;
};

SizeArg parse_size(const std::string& s) {
    const auto x = s.find('x');
    if (x == std::string::npos) throw CLI::ValidationError("size", "expected HxW, e.g. 64x64");
    SizeArg out;
    try {
        out.h = std::stoll(s.substr(0, x));
        out.w = std::stoll(s.substr(x + 1));
    } catch (const std::exception&) {
        throw CLI::ValidationError("size", "expected HxW, e.g. 64x64");
    }
    if (out.h < 4 || out.w < 4) throw CLI::ValidationError("size", "sizes must be >= 4");
    return out;
}

dmt::FileConfig load_file_config(const std::string& path) {
    dmt::FileConfig defaults;
    if (path.empty()) return defaults;
    return dmt::parse_config_file(path, defaults);
}

// ---- bench ----------------------------------------------------------------

int run_bench(const std::string& config_path, const std::string& out_prefix,
              const std::vector<double>& ratios, std::int64_t reps, std::int64_t frames,
              const std::string& size, std::uint64_t seed) {
    dmt::BenchConfig cfg;
    cfg.model = load_file_config(config_path).model;
    const SizeArg sz = parse_size(size);
    cfg.frame_h = sz.h;
    cfg.frame_w = sz.w;
    cfg.frames = frames;
    if (!ratios.empty()) cfg.ratios = ratios;
    cfg.repetitions = reps;
    cfg.seed = seed;

    dmt::BenchReport report = dmt::bench_run(cfg);
    dmt::write_bench_csv(report, out_prefix + ".csv");
    dmt::write_bench_json(report, out_prefix + ".json");

    std::printf("%-12s %-8s %-8s %-16s %-16s %s\n", "mask_ratio", "N", "N_valid", "formula_macs",
                "counted_macs", "wall_ms (mean +- std)");
    for (const auto& r : report.rows) {
        std::printf("%-12.3f %-8lld %-8lld %-16llu %-16llu %.3f +- %.3f\n", r.mask_ratio,
                    static_cast<long long>(r.total_tokens),
                    static_cast<long long>(r.valid_tokens),
                    static_cast<unsigned long long>(r.formula_macs),
                    static_cast<unsigned long long>(r.counted_macs), r.wall_ms_mean,
                    r.wall_ms_std);
    }
    std::printf("wrote %s.csv and %s.json\n", out_prefix.c_str(), out_prefix.c_str());
    return kExitOk;
}

// ---- train ---------------------------------------------------------------

int run_train(const std::string& mode, const std::string& config_path, std::int64_t steps,
              std::uint64_t seed, const std::string& out_path, const std::string& log_path,
              const std::string& prior_path, const SizeArg& data_size, std::int64_t data_frames,
              std::int64_t data_clips, double mask_ratio, const std::string& mask_kind) {
    const dmt::FileConfig file_cfg = load_file_config(config_path);
    dmt::TrainConfig cfg;
    cfg.model = file_cfg.model;
    cfg.adam = file_cfg.adam;
    cfg.weights = file_cfg.weights;
    cfg.batch = file_cfg.batch;
    cfg.seed = seed;

    dmt::SyntheticDatasetSpec data;
    data.height = data_size.h;
    data.width = data_size.w;
    data.frames = data_frames;
    data.clips = data_clips;
    data.mask_ratio = mask_ratio;
    data.seed = seed ^ 0xd5c4eb1fULL;
    data.mask_kind = mask_kind == "stationary" ? dmt::SyntheticDatasetSpec::MaskKind::Stationary
                                               : dmt::SyntheticDatasetSpec::MaskKind::Freeform;

    dmt::TrainLog log;
    dmt::ModelParams trained = [&] {
        if (mode == "image") {
            // image stage defaults to the higher pretrain learning rate
            if (!file_cfg.lr_set) cfg.adam.lr = 1e-3;
            return dmt::pretrain_image(cfg, data, steps, &log);
        }
        auto [prior, prior_cfg] = dmt::load_checkpoint(prior_path);
        return dmt::train_video(cfg, data, prior, prior_cfg, steps, &log);
    }();

    dmt::save_checkpoint(trained, cfg.model, out_path);
    if (!log_path.empty()) dmt::write_train_log_csv(log, log_path);
    if (!log.empty()) {
        std::printf("step %lld: loss_total=%.6f loss_rec=%.6f loss_mig=%.6f\n",
                    static_cast<long long>(log.back().step), log.back().total, log.back().rec,
                    log.back().mig);
    }
    std::printf("wrote checkpoint %s\n", out_path.c_str());
    return kExitOk;
}

// ---- inpaint ---------------------------------------------------------------

int run_inpaint(const std::string& frames_dir, const std::string& masks_dir,
                const std::string& ckpt_path, const std::string& out_dir) {
    const std::vector<std::string> frame_names = dmt::list_images_sorted(frames_dir);
    const std::vector<std::string> mask_names = dmt::list_images_sorted(masks_dir);
    if (frame_names.empty()) throw dmt::IoError("no frames found in " + frames_dir);
    if (frame_names.size() != mask_names.size()) {
        throw dmt::IoError("frame/mask count mismatch: " + std::to_string(frame_names.size()) +
                           " frames vs " + std::to_string(mask_names.size()) + " masks");
    }

    const std::int64_t T = static_cast<std::int64_t>(frame_names.size());
    std::vector<dmt::TensorPtr> frame_planes;
    dmt::MaskSequence masks;
    std::int64_t H = 0, W = 0;
    for (std::int64_t t = 0; t < T; ++t) {
        dmt::Image8 img = dmt::read_image(frames_dir + "/" + frame_names[t]);
        dmt::Image8 mimg = dmt::read_image(masks_dir + "/" + mask_names[t]);
        if (t == 0) {
            H = img.h;
            W = img.w;
            if (H % 4 != 0 || W % 4 != 0) {
                throw dmt::IoError("frame dimensions must be divisible by 4, got " +
                                   std::to_string(H) + "x" + std::to_string(W));
            }
        }
        if (img.h != H || img.w != W || mimg.h != H || mimg.w != W) {
            throw dmt::IoError("dimension mismatch at " + frame_names[t]);
        }
        frame_planes.push_back(dmt::image_to_frame(img));
        masks.push_back(dmt::image_to_mask(mimg));
    }

    std::vector<double> data;
    data.reserve(static_cast<std::size_t>(T * 3 * H * W));
    for (const auto& p : frame_planes) data.insert(data.end(), p->data.begin(), p->data.end());
    dmt::FrameSequence clip(dmt::tensor::from_data({T, 3, H, W}, std::move(data)));

    auto [params, cfg] = dmt::load_checkpoint(ckpt_path);
    dmt::NoGradGuard no_grad;
    dmt::ForwardResult out = dmt::forward(clip, masks, params, cfg);

    fs::create_directories(out_dir);
    const std::int64_t plane = 3 * H * W;
    for (std::int64_t t = 0; t < T; ++t) {
        std::vector<double> fd(out.composed.data->data.begin() + t * plane,
                               out.composed.data->data.begin() + (t + 1) * plane);
        dmt::Image8 img = dmt::frame_to_image(dmt::tensor::from_data({3, H, W}, std::move(fd)));
        dmt::write_image(out_dir + "/" + frame_names[t], img);
    }
    std::printf("wrote %lld frames to %s\n", static_cast<long long>(T), out_dir.c_str());
    return kExitOk;
}

// ---- eval ------------------------------------------------------------------

int run_eval(const std::string& ref_dir, const std::string& test_dir,
             const std::string& out_prefix) {
    dmt::MetricReport report = dmt::evaluate_dirs(ref_dir, test_dir);
    for (std::size_t i = 0; i < report.names.size(); ++i) {
        std::printf("%s: psnr=%.4f dB ssim=%.6f\n", report.names[i].c_str(),
                    report.psnr_per_frame[i], report.ssim_per_frame[i]);
    }
    std::printf("mean: psnr=%.4f dB ssim=%.6f\n", report.psnr_mean, report.ssim_mean);
    if (!out_prefix.empty()) {
        dmt::write_metric_csv(report, out_prefix + ".csv");
        dmt::write_metric_json(report, out_prefix + ".json");
        std::printf("wrote %s.csv and %s.json\n", out_prefix.c_str(), out_prefix.c_str());
    }
    return kExitOk;
}

// ---- genmask ----------------------------------------------------------------

int run_genmask(const std::string& type, std::int64_t height, std::int64_t width, double ratio,
                std::int64_t count, std::uint64_t seed, const std::string& out_dir,
                const std::string& format) {
    fs::create_directories(out_dir);
    for (std::int64_t i = 0; i < count; ++i) {
        dmt::MaskMap m =
            type == "stationary"
                ? dmt::gen_stationary_mask(height, width, ratio, seed + i)
                : dmt::gen_freeform_mask(height, width, ratio,
                                         dmt::Rng::splitmix(seed) +
                                             static_cast<std::uint64_t>(i));
        char name[64];
        std::snprintf(name, sizeof(name), "mask_%04lld.%s", static_cast<long long>(i),
                      format.c_str());
        dmt::write_image(out_dir + "/" + name, dmt::mask_to_image(m));
    }
    std::printf("wrote %lld masks to %s\n", static_cast<long long>(count), out_dir.c_str());
    return kExitOk;
}

// ---- ablate -----------------------------------------------------------------

int run_ablate(const std::string& config_path, std::int64_t steps_image, std::int64_t steps_video,
               std::uint64_t seed, const SizeArg& size, std::int64_t frames,
               const std::string& out_path) {
    const dmt::FileConfig file_cfg = load_file_config(config_path);
    dmt::AblateConfig cfg;
    cfg.train.model = file_cfg.model;
    cfg.train.adam = file_cfg.adam;
    cfg.train.weights = file_cfg.weights;
    cfg.train.batch = file_cfg.batch;
    cfg.train.seed = seed;
    cfg.data.height = size.h;
    cfg.data.width = size.w;
    cfg.data.frames = frames;
    cfg.data.seed = seed ^ 0x5eedULL;
    cfg.steps_image = steps_image;
    cfg.steps_video = steps_video;

    const std::vector<dmt::AblateRow> rows = dmt::ablate_run(cfg);
    std::printf("%-22s %-12s %s\n", "variant", "psnr_db", "ssim");
    for (const auto& r : rows) std::printf("%-22s %-12.4f %.6f\n", r.variant.c_str(), r.psnr,
                                           r.ssim);
    dmt::write_ablate_csv(rows, out_path);
    std::printf("wrote %s\n", out_path.c_str());
    return kExitOk;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{
        "Deficiency-aware masked transformer for video inpainting: desk-scale library, "
        "benchmark, and tools.\n"
        "Masks on disk are grayscale images where pixel >= 128 marks a HOLE; internally 1 marks "
        "a valid pixel.\n"
        "Config files are flat key=value lines; keys: L, d, heads, ffn_hidden, K, warp_k, "
        "warp_s, warp_p, C, lr, lambda_rec, lambda_mig, batch.\n"
        "Exit codes: 0 success, 1 usage error, 2 data error."};
    app.require_subcommand(1);

    // bench
    auto* bench = app.add_subcommand(
        "bench",
        "Forward-pass scaling benchmark over mask ratios. CSV columns: mask_ratio, N, N_valid, "
        "formula_macs, counted_macs, wall_ms_mean, wall_ms_std; the JSON adds per-layer token "
        "and MAC arrays. Timing: 3 warmup runs excluded, monotonic clock.");
    std::string bench_config, bench_out = "bench_report", bench_size = "64x64";
    std::vector<double> bench_ratios;
    std::int64_t bench_reps = 20, bench_frames = 8;
    std::uint64_t bench_seed = 7;
    bench->add_option("--config", bench_config, "key=value config file");
    bench->add_option("--out", bench_out, "output path prefix (.csv/.json appended)");
    bench->add_option("--ratios", bench_ratios, "invalid-pixel ratios in [0,0.95]")
        ->delimiter(',');
    bench->add_option("--reps", bench_reps, "timed repetitions per ratio")
        ->check(CLI::PositiveNumber);
    bench->add_option("--frames", bench_frames, "clip length T")->check(CLI::PositiveNumber);
    bench->add_option("--size", bench_size, "frame size HxW (divisible by 4)");
    bench->add_option("--seed", bench_seed, "mask/feature seed");

    // train
    auto* train = app.add_subcommand(
        "train",
        "Two-stage training on deterministic synthetic clips. Image mode pretrains the prior; "
        "video mode trains from scratch with migration regularization against --prior. Log CSV "
        "columns: step, loss_total, loss_rec, loss_mig.");
    std::string train_mode, train_config, train_out = "model.ckpt", train_log, train_prior;
    std::string train_data_size = "16x16", train_mask_kind = "freeform";
    std::int64_t train_steps = 500, train_data_frames = 4, train_data_clips = 32;
    std::uint64_t train_seed = 1;
    double train_mask_ratio = 0.35;
    train->add_option("--mode", train_mode, "image | video")
        ->required()
        ->check(CLI::IsMember({"image", "video"}));
    train->add_option("--config", train_config, "key=value config file");
    train->add_option("--steps", train_steps, "optimizer steps")->check(CLI::NonNegativeNumber);
    train->add_option("--seed", train_seed, "seed for init, data and masks");
    train->add_option("--out", train_out, "checkpoint output path");
    train->add_option("--log", train_log, "training log CSV path");
    train->add_option("--prior", train_prior, "image-prior checkpoint (video mode)");
    train->add_option("--data-size", train_data_size, "synthetic frame size HxW");
    train->add_option("--data-frames", train_data_frames, "frames per synthetic clip (video)")
        ->check(CLI::PositiveNumber);
    train->add_option("--data-clips", train_data_clips, "synthetic clip count")
        ->check(CLI::PositiveNumber);
    train->add_option("--mask-ratio", train_mask_ratio, "synthetic mask invalid ratio");
    train->add_option("--mask-kind", train_mask_kind, "freeform | stationary")
        ->check(CLI::IsMember({"freeform", "stationary"}));

    // inpaint
    auto* inpaint = app.add_subcommand(
        "inpaint",
        "Inpaint a frame folder with a trained checkpoint. Frames: PPM (P6) or PNG; masks: "
        "grayscale PGM/PNG, >=128 = hole. Outputs keep the input format and filenames.");
    std::string in_frames, in_masks, in_ckpt, in_out = "inpainted";
    inpaint->add_option("--frames", in_frames, "input frame directory")->required();
    inpaint->add_option("--masks", in_masks, "mask directory")->required();
    inpaint->add_option("--checkpoint", in_ckpt, "model checkpoint")->required();
    inpaint->add_option("--out", in_out, "output directory");

    // eval
    auto* eval_cmd = app.add_subcommand(
        "eval", "PSNR/SSIM between two image folders paired by sorted filename. CSV columns: "
                "frame, psnr_db, ssim (last row: mean).");
    std::string eval_ref, eval_test, eval_out;
    eval_cmd->add_option("--ref", eval_ref, "reference directory")->required();
    eval_cmd->add_option("--test", eval_test, "directory under test")->required();
    eval_cmd->add_option("--out", eval_out, "optional report path prefix");

    // genmask
    auto* genmask = app.add_subcommand(
        "genmask", "Write mask images (hole = 255). freeform targets the requested invalid "
                   "ratio within +-3%; stationary is a centered rectangle.");
    std::string gm_type = "freeform", gm_out = "masks", gm_format = "pgm";
    std::int64_t gm_h = 64, gm_w = 64, gm_count = 1;
    std::uint64_t gm_seed = 1;
    double gm_ratio = 0.4;
    genmask->add_option("--type", gm_type, "freeform | stationary")
        ->check(CLI::IsMember({"freeform", "stationary"}));
    genmask->add_option("--height", gm_h, "mask height")->check(CLI::PositiveNumber);
    genmask->add_option("--width", gm_w, "mask width")->check(CLI::PositiveNumber);
    genmask->add_option("--ratio", gm_ratio, "invalid-area ratio");
    genmask->add_option("--count", gm_count, "number of masks")->check(CLI::PositiveNumber);
    genmask->add_option("--seed", gm_seed, "generation seed");
    genmask->add_option("--out", gm_out, "output directory");
    genmask->add_option("--format", gm_format, "pgm | png")
        ->check(CLI::IsMember({"pgm", "png"}));

    // ablate
    auto* ablate = app.add_subcommand(
        "ablate", "Train and evaluate the full model plus four ablations (dense tokens, frozen "
                  "masks, no contextualizer, no migration loss) on held-out synthetic clips. "
                  "CSV columns: variant, psnr_db, ssim. Directional results only.");
    std::string ab_config, ab_out = "ablation.csv", ab_size = "16x16";
    std::int64_t ab_steps_image = 150, ab_steps_video = 150, ab_frames = 2;
    std::uint64_t ab_seed = 1;
    ablate->add_option("--config", ab_config, "key=value config file");
    ablate->add_option("--steps-image", ab_steps_image, "image pretrain steps per variant")
        ->check(CLI::NonNegativeNumber);
    ablate->add_option("--steps-video", ab_steps_video, "video training steps per variant")
        ->check(CLI::NonNegativeNumber);
    ablate->add_option("--seed", ab_seed, "seed");
    ablate->add_option("--size", ab_size, "synthetic frame size HxW");
    ablate->add_option("--frames", ab_frames, "frames per clip")->check(CLI::PositiveNumber);
    ablate->add_option("--out", ab_out, "output CSV path");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }

    try {
        if (app.got_subcommand(bench)) {
            return run_bench(bench_config, bench_out, bench_ratios, bench_reps, bench_frames,
                             bench_size, bench_seed);
        }
        if (app.got_subcommand(train)) {
            if (train_mode == "video" && train_prior.empty()) {
                std::fprintf(stderr, "train: --mode video requires --prior <checkpoint>\n");
                return kExitUsage;
            }
            return run_train(train_mode, train_config, train_steps, train_seed, train_out,
                             train_log, train_prior, parse_size(train_data_size),
                             train_data_frames, train_data_clips, train_mask_ratio,
                             train_mask_kind);
        }
        if (app.got_subcommand(inpaint)) return run_inpaint(in_frames, in_masks, in_ckpt, in_out);
        if (app.got_subcommand(eval_cmd)) return run_eval(eval_ref, eval_test, eval_out);
        if (app.got_subcommand(genmask)) {
            return run_genmask(gm_type, gm_h, gm_w, gm_ratio, gm_count, gm_seed, gm_out,
                               gm_format);
        }
        if (app.got_subcommand(ablate)) {
            return run_ablate(ab_config, ab_steps_image, ab_steps_video, ab_seed,
                              parse_size(ab_size), ab_frames, ab_out);
        }
    } catch (const CLI::ValidationError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitUsage;
    } catch (const dmt::ConfigError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitUsage;
    } catch (const dmt::Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitData;
    }
    return kExitUsage;
}
