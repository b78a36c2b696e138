// SPDX-License-Identifier: Apache-2.0
#include "dmt/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace dmt {

TensorPtr l1_loss(const TensorPtr& pred, const TensorPtr& target) {
    if (pred->shape != target->shape) {
        throw ShapeError("l1_loss: shape mismatch " + shape_str(pred->shape) + " vs " +
                         shape_str(target->shape));
    }
    return mean(abs_val(sub(pred, target)));
}

TensorPtr migration_loss(const LayerTrace& video_trace, const LayerTrace& prior_trace) {
    if (video_trace.size() != prior_trace.size()) {
        throw ShapeError("migration_loss: trace depth mismatch");
    }
    if (video_trace.empty()) throw ShapeError("migration_loss: empty traces");

    TensorPtr total = tensor::scalar(0.0);
    for (std::size_t l = 0; l < video_trace.size(); ++l) {
        const TensorPtr& h = video_trace[l].features;
        const TensorPtr& h_prior = prior_trace[l].features;
        if (h->shape != h_prior->shape) {
            throw ShapeError("migration_loss: layer " + std::to_string(l) +
                             " feature shapes disagree: " + shape_str(h->shape) + " vs " +
                             shape_str(h_prior->shape));
        }
        // the prior is frozen: detach its features from any tape
        TensorPtr frozen = tensor::from_data(h_prior->shape, h_prior->data);
        TensorPtr diff = sub(h, relu(frozen));
        TensorPtr masked = mul_mask_channels(diff, masks_to_tensor(video_trace[l].mask));
        total = add(total, sum(mul(masked, masked)));
    }
    return total;
}

void Adam::step(ParamSet& params) {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (auto& [name, p] : params) {
        if (p->grad.empty()) {
            throw ValueError("adam_step: parameter " + name + " has no gradient");
        }
        Moments& mo = state_[name];
        if (mo.m.empty()) {
            mo.m.assign(p->data.size(), 0.0);
            mo.v.assign(p->data.size(), 0.0);
        }
        if (mo.m.size() != p->data.size()) {
            throw ShapeError("adam_step: moment buffers do not match parameter " + name);
        }
        for (std::size_t i = 0; i < p->data.size(); ++i) {
            const double g = p->grad[i];
            mo.m[i] = cfg_.beta1 * mo.m[i] + (1.0 - cfg_.beta1) * g;
            mo.v[i] = cfg_.beta2 * mo.v[i] + (1.0 - cfg_.beta2) * g * g;
            const double mhat = mo.m[i] / bc1;
            const double vhat = mo.v[i] / bc2;
            p->data[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
        }
    }
}

namespace {

struct Rect {
    double y, x, h, w, vy, vx;
    double color[3];
};

// Background: per-channel drifting linear ramp; foreground: translating
// rectangles clipped at the borders.
void render_frame(std::vector<double>& out, std::int64_t base, std::int64_t H, std::int64_t W,
                  double t, const std::vector<Rect>& rects, const double* ramp) {
    for (std::int64_t c = 0; c < 3; ++c) {
        const double a = ramp[c * 4 + 0], by = ramp[c * 4 + 1], bx = ramp[c * 4 + 2],
                     drift = ramp[c * 4 + 3];
        for (std::int64_t y = 0; y < H; ++y) {
            for (std::int64_t x = 0; x < W; ++x) {
                double v = a + by * (static_cast<double>(y) / static_cast<double>(H)) +
                           bx * (static_cast<double>(x) / static_cast<double>(W)) + drift * t;
                out[base + (c * H + y) * W + x] = std::clamp(v, 0.0, 1.0);
            }
        }
    }
    for (const Rect& r : rects) {
        const double cy = r.y + r.vy * t, cx = r.x + r.vx * t;
        const std::int64_t y0 = std::max<std::int64_t>(0, static_cast<std::int64_t>(cy));
        const std::int64_t y1 = std::min(H, static_cast<std::int64_t>(cy + r.h));
        const std::int64_t x0 = std::max<std::int64_t>(0, static_cast<std::int64_t>(cx));
        const std::int64_t x1 = std::min(W, static_cast<std::int64_t>(cx + r.w));
        for (std::int64_t c = 0; c < 3; ++c) {
            for (std::int64_t y = y0; y < y1; ++y) {
                for (std::int64_t x = x0; x < x1; ++x) {
                    out[base + (c * H + y) * W + x] = r.color[c];
                }
            }
        }
    }
}

} // namespace

FrameSequence synth_clip(const SyntheticDatasetSpec& spec, std::int64_t clip_index) {
    Rng rng(Rng::splitmix(spec.seed ^ (0x9e3779b97f4a7c15ULL *
                                       (static_cast<std::uint64_t>(clip_index) + 1))));
    const std::int64_t T = spec.frames, H = spec.height, W = spec.width;

    double ramp[12];
    for (int c = 0; c < 3; ++c) {
        ramp[c * 4 + 0] = rng.uniform(0.1, 0.9);
        ramp[c * 4 + 1] = rng.uniform(-0.6, 0.6);
        ramp[c * 4 + 2] = rng.uniform(-0.6, 0.6);
        ramp[c * 4 + 3] = rng.uniform(-0.05, 0.05);
    }
    std::vector<Rect> rects;
    const std::int64_t n_rects = 1 + rng.uniform_int(0, 2);
    for (std::int64_t i = 0; i < n_rects; ++i) {
        Rect r;
        r.h = rng.uniform(static_cast<double>(H) / 4.0, static_cast<double>(H) / 2.0);
        r.w = rng.uniform(static_cast<double>(W) / 4.0, static_cast<double>(W) / 2.0);
        r.y = rng.uniform(0.0, static_cast<double>(H) - r.h);
        r.x = rng.uniform(0.0, static_cast<double>(W) - r.w);
        r.vy = rng.uniform(-2.0, 2.0);
        r.vx = rng.uniform(-2.0, 2.0);
        for (int c = 0; c < 3; ++c) r.color[c] = rng.uniform(0.0, 1.0);
        rects.push_back(r);
    }

    std::vector<double> data(static_cast<std::size_t>(T * 3 * H * W));
    for (std::int64_t t = 0; t < T; ++t) {
        render_frame(data, t * 3 * H * W, H, W, static_cast<double>(t), rects, ramp);
    }
    return FrameSequence(tensor::from_data({T, 3, H, W}, std::move(data)));
}

MaskSequence synth_masks(const SyntheticDatasetSpec& spec, std::int64_t clip_index) {
    MaskSequence masks;
    masks.reserve(static_cast<std::size_t>(spec.frames));
    for (std::int64_t t = 0; t < spec.frames; ++t) {
        const std::uint64_t seed =
            Rng::splitmix(spec.seed ^ 0xc2b2ae3d27d4eb4fULL ^
                          (0x9e3779b97f4a7c15ULL * (static_cast<std::uint64_t>(clip_index) * 97 +
                                                    static_cast<std::uint64_t>(t) + 1)));
        if (spec.mask_kind == SyntheticDatasetSpec::MaskKind::Stationary) {
            masks.push_back(gen_stationary_mask(spec.height, spec.width, spec.mask_ratio, seed));
        } else {
            masks.push_back(gen_freeform_mask(spec.height, spec.width, spec.mask_ratio, seed));
        }
    }
    return masks;
}

namespace {

double run_backward_and_value(const TensorPtr& loss, std::int64_t step) {
    const double value = loss->item();
    if (!std::isfinite(value)) {
        throw DivergenceError("training diverged: non-finite loss at step " +
                              std::to_string(step));
    }
    backward(loss);
    return value;
}

} // namespace

ModelParams pretrain_image(const TrainConfig& cfg, const SyntheticDatasetSpec& dataset,
                           std::int64_t steps, TrainLog* log) {
    cfg.weights.validate();
    SyntheticDatasetSpec image_data = dataset;
    image_data.frames = 1; // image mode

    ModelParams params = init_model_params(cfg.model, cfg.seed);
    ParamSet pset = params.param_set();
    Adam opt(cfg.adam);
    Rng rng(Rng::splitmix(cfg.seed ^ 0x1234abcdULL));

    for (std::int64_t step = 1; step <= steps; ++step) {
        zero_grads(pset);
        double rec_value = 0.0;
        try {
            TensorPtr batch_loss = tensor::scalar(0.0);
            for (std::int64_t b = 0; b < cfg.batch; ++b) {
                const std::int64_t clip = rng.uniform_int(0, image_data.clips - 1);
                FrameSequence frames = synth_clip(image_data, clip);
                MaskSequence masks = synth_masks(image_data, clip);
                ForwardResult out = forward(frames, masks, params, cfg.model, false);
                batch_loss = add(batch_loss, l1_loss(out.raw, frames.data));
            }
            batch_loss = scale(batch_loss, 1.0 / static_cast<double>(cfg.batch));
            rec_value = run_backward_and_value(batch_loss, step);
        } catch (const ValueError& e) {
            throw DivergenceError("training aborted at step " + std::to_string(step) + ": " +
                                  e.what());
        }
        opt.step(pset);
        if (log) log->push_back({step, rec_value, rec_value, 0.0});
    }
    return params;
}

ModelParams train_video(const TrainConfig& cfg, const SyntheticDatasetSpec& dataset,
                        ModelParams& prior, const ModelConfig& prior_cfg, std::int64_t steps,
                        TrainLog* log) {
    cfg.weights.validate();
    if (!cfg.model.same_architecture(prior_cfg)) {
        throw ConfigError("train_video: prior checkpoint architecture is incompatible");
    }
    prior.set_requires_grad(false);

    // trained from scratch, not from the prior weights
    ModelParams params = init_model_params(cfg.model, cfg.seed ^ 0xbeefULL);
    ParamSet pset = params.param_set();
    Adam opt(cfg.adam);
    Rng rng(Rng::splitmix(cfg.seed ^ 0x77777777ULL));

    for (std::int64_t step = 1; step <= steps; ++step) {
        zero_grads(pset);
        double rec_value = 0.0, mig_value = 0.0, total_value = 0.0;
        try {
            TensorPtr batch_rec = tensor::scalar(0.0);
            TensorPtr batch_mig = tensor::scalar(0.0);
            for (std::int64_t b = 0; b < cfg.batch; ++b) {
                const std::int64_t clip = rng.uniform_int(0, dataset.clips - 1);
                FrameSequence frames = synth_clip(dataset, clip);
                MaskSequence masks = synth_masks(dataset, clip);

                ForwardResult video_out = forward(frames, masks, params, cfg.model, true);

                // frozen prior, frame by frame in image mode
                LayerTrace prior_trace;
                {
                    NoGradGuard no_grad;
                    const std::int64_t T = frames.frames();
                    std::vector<LayerTrace> per_frame;
                    for (std::int64_t t = 0; t < T; ++t) {
                        const std::int64_t plane = 3 * frames.height() * frames.width();
                        std::vector<double> fd(
                            frames.data->data.begin() + t * plane,
                            frames.data->data.begin() + (t + 1) * plane);
                        FrameSequence one(tensor::from_data(
                            {1, 3, frames.height(), frames.width()}, std::move(fd)));
                        MaskSequence one_mask{masks[static_cast<std::size_t>(t)]};
                        ForwardResult prior_out =
                            forward(one, one_mask, prior, prior_cfg, true);
                        per_frame.push_back(std::move(prior_out.trace));
                    }
                    // stack the per-frame traces along the frame axis
                    for (std::size_t l = 0; l < per_frame[0].size(); ++l) {
                        const Shape& s1 = per_frame[0][l].features->shape;
                        Shape shape{T, s1[1], s1[2], s1[3]};
                        std::vector<double> data;
                        data.reserve(static_cast<std::size_t>(numel(shape)));
                        MaskSequence mask_l;
                        for (std::int64_t t = 0; t < T; ++t) {
                            const auto& src = per_frame[static_cast<std::size_t>(t)][l];
                            data.insert(data.end(), src.features->data.begin(),
                                        src.features->data.end());
                            mask_l.push_back(src.mask[0]);
                        }
                        prior_trace.push_back(
                            {tensor::from_data(shape, std::move(data)), std::move(mask_l)});
                    }
                }

                batch_rec = add(batch_rec, l1_loss(video_out.raw, frames.data));
                batch_mig = add(batch_mig, migration_loss(video_out.trace, prior_trace));
            }
            batch_rec = scale(batch_rec, 1.0 / static_cast<double>(cfg.batch));
            batch_mig = scale(batch_mig, 1.0 / static_cast<double>(cfg.batch));
            TensorPtr total = add(scale(batch_rec, cfg.weights.lambda_rec),
                                  scale(batch_mig, cfg.weights.lambda_mig));
            rec_value = batch_rec->item();
            mig_value = batch_mig->item();
            total_value = run_backward_and_value(total, step);
        } catch (const ValueError& e) {
            throw DivergenceError("training aborted at step " + std::to_string(step) + ": " +
                                  e.what());
        }
        opt.step(pset);
        if (log) log->push_back({step, total_value, rec_value, mig_value});
    }
    return params;
}

void write_train_log_csv(const TrainLog& log, const std::string& path) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw IoError("write_train_log_csv: cannot open " + path);
    f << "step,loss_total,loss_rec,loss_mig\n";
    for (const auto& row : log) {
        f << row.step << "," << row.total << "," << row.rec << "," << row.mig << "\n";
    }
}

} // namespace dmt
