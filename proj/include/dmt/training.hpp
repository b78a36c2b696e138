// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "dmt/pipeline.hpp"

namespace dmt {

struct LossWeights {
    double lambda_rec = 1.0;
    double lambda_mig = 0.1;

    void validate() const {
        if (!(lambda_rec >= 0.0) || !(lambda_mig >= 0.0)) {
            throw ConfigError("LossWeights: weights must be finite and non-negative");
        }
    }
};

/// Mean absolute error over all elements.
TensorPtr l1_loss(const TensorPtr& pred, const TensorPtr& target);

/// sum_l || m^(l) (.) (h^(l) - ReLU(hhat^(l))) ||_2^2 with masks taken from
/// the video trace and broadcast over the channel axis. Gradients flow only
/// into the video features; the prior trace is frozen.
TensorPtr migration_loss(const LayerTrace& video_trace, const LayerTrace& prior_trace);

struct AdamConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Standard Adam with bias correction; first/second moment buffers keyed by
// parameter name.
class Adam {
public:
    explicit Adam(AdamConfig cfg) : cfg_(cfg) {}

    /// One update from the accumulated grads; every parameter must have a
    /// populated grad buffer.
    void step(ParamSet& params);

    std::int64_t steps_taken() const { return t_; }
    const AdamConfig& config() const { return cfg_; }

private:
    struct Moments {
        std::vector<double> m, v;
    };
    AdamConfig cfg_;
    std::map<std::string, Moments> state_;
    std::int64_t t_ = 0;
};

// Deterministic synthetic clips: smooth drifting gradient background plus
// translating colored rectangles.
struct SyntheticDatasetSpec {
    std::int64_t clips = 32;
    std::int64_t frames = 4; // T
    std::int64_t height = 16;
    std::int64_t width = 16;
    enum class MaskKind { Freeform, Stationary };
    MaskKind mask_kind = MaskKind::Freeform;
    double mask_ratio = 0.35;
    std::uint64_t seed = 1;
};

FrameSequence synth_clip(const SyntheticDatasetSpec& spec, std::int64_t clip_index);
MaskSequence synth_masks(const SyntheticDatasetSpec& spec, std::int64_t clip_index);

struct TrainLogRow {
    std::int64_t step = 0;
    double total = 0.0, rec = 0.0, mig = 0.0;
};

using TrainLog = std::vector<TrainLogRow>;

struct TrainConfig {
    ModelConfig model;
    AdamConfig adam;
    LossWeights weights;
    std::int64_t batch = 2;
    std::uint64_t seed = 1;
};

/// Stage one: image-mode pretraining with L1 reconstruction (dataset frames
/// forced to T=1). Aborts with DivergenceError on non-finite loss.
ModelParams pretrain_image(const TrainConfig& cfg, const SyntheticDatasetSpec& dataset,
                           std::int64_t steps, TrainLog* log = nullptr);

/// Stage two: video model trained from scratch; the frozen prior runs per
/// frame in image mode to provide hhat traces for migration regularization.
ModelParams train_video(const TrainConfig& cfg, const SyntheticDatasetSpec& dataset,
                        ModelParams& prior, const ModelConfig& prior_cfg, std::int64_t steps,
                        TrainLog* log = nullptr);

void write_train_log_csv(const TrainLog& log, const std::string& path);

} // namespace dmt
