// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "dmt/model.hpp"

namespace dmt {

// Video clip as [T,3,H,W] in [0,1]; T=1 is image mode.
struct FrameSequence {
    TensorPtr data;

    FrameSequence() = default;
    /// Clamps values into [0,1].
    explicit FrameSequence(const TensorPtr& frames);

    std::int64_t frames() const { return data->dim(0); }
    std::int64_t height() const { return data->dim(2); }
    std::int64_t width() const { return data->dim(3); }
};

// Architecture hyperparameters persisted in checkpoints. Grid dims are
// derived from the input at forward time.
struct ModelConfig {
    std::int64_t channels = 32; // encoder feature width C
    std::int64_t width = 64;    // token width d
    std::int64_t layers = 4;
    std::int64_t heads = 4;
    std::int64_t ffn_hidden = 256;
    std::int64_t rfc_kernel = 13;
    SlidingWindowSpec warp{3, 1, 1};
    bool token_selection = true;
    bool mask_activation = true;
    bool use_rfc = true;

    void validate() const;
    DmtConfig dmt_for(const GridDims& grid) const;
    bool same_architecture(const ModelConfig& o) const;
};

constexpr std::int64_t kDownscaleFactor = 4;

struct ModelParams {
    // encoder: two stride-2 stages, 3 masked channels + 1 validity channel in
    TensorPtr enc1_w, enc1_b, enc2_w, enc2_b;
    TensorPtr tok_w, tok_b;   // C -> d
    std::vector<DmtLayerParams> layers;
    TensorPtr itok_w, itok_b; // d -> C
    // decoder: two nearest-neighbor x2 upsample + conv stages, sigmoid out
    TensorPtr dec1_w, dec1_b, dec2_w, dec2_b;

    template <class Fn> void visit(Fn&& fn) {
        fn("enc.conv1.w", enc1_w);
        fn("enc.conv1.b", enc1_b);
        fn("enc.conv2.w", enc2_w);
        fn("enc.conv2.b", enc2_b);
        fn("tok.w", tok_w);
        fn("tok.b", tok_b);
        for (std::size_t i = 0; i < layers.size(); ++i) {
            layers[i].visit("dmt." + std::to_string(i), fn);
        }
        fn("itok.w", itok_w);
        fn("itok.b", itok_b);
        fn("dec.conv1.w", dec1_w);
        fn("dec.conv1.b", dec1_b);
        fn("dec.conv2.w", dec2_w);
        fn("dec.conv2.b", dec2_b);
    }

    ParamSet param_set();
    void set_requires_grad(bool on);
};

ModelParams init_model_params(const ModelConfig& cfg, std::uint64_t seed,
                              bool requires_grad = true);

/// Per-frame CNN over zeroed hole pixels plus the validity channel;
/// two stride-2 GELU stages, output [T,C,H/4,W/4].
TensorPtr encode(const FrameSequence& frames, const MaskSequence& masks, const ModelParams& params,
                 const ModelConfig& cfg);

/// Per-cell linear C -> d over the merged frames: [T,C,Hg,Wg] -> [N,d].
TensorPtr tokenize(const TensorPtr& grid, const TensorPtr& weight, const TensorPtr& bias);
/// Per-cell linear d -> C back to a grid: [N,d] -> [T,C,Hg,Wg].
TensorPtr inverse_tokenize(const TensorPtr& tokens, const TensorPtr& weight, const TensorPtr& bias,
                           const GridDims& grid);

/// Two nearest-neighbor x2 upsample + conv stages; sigmoid into [0,1].
TensorPtr decode(const TensorPtr& grid, const ModelParams& params, const ModelConfig& cfg);

/// Valid pixels copied bit-exactly from the input, holes from the raw output.
FrameSequence compose_output(const FrameSequence& raw, const FrameSequence& input,
                             const MaskSequence& masks);

struct ForwardResult {
    TensorPtr raw;            // [T,3,H,W] before composition (gradient-tracked)
    FrameSequence composed;   // valid pixels from input, holes from raw
    LayerTrace trace;         // populated when record_trace
    std::vector<MaskSequence> layer_masks; // activated masks per layer
    std::vector<LayerStats> stats;         // populated when record_stats
};

ForwardResult forward(const FrameSequence& frames, const MaskSequence& masks,
                      ModelParams& params, const ModelConfig& cfg, bool record_trace = false,
                      bool record_stats = false);

// ---- checkpoint I/O ------------------------------------------------------

/// Distinct failure modes required of checkpoint loading.
enum class CheckpointFault { BadMagic, BadVersion, Truncated, ShapeMismatch, Malformed };

class CheckpointError : public Error {
public:
    CheckpointError(CheckpointFault fault, const std::string& msg)
        : Error(msg), fault_(fault) {}
    CheckpointFault fault() const { return fault_; }

private:
    CheckpointFault fault_;
};

/// Binary format: magic "DMTC", u32 version, config block, then per-tensor
/// records (u32 name length + bytes, u32 rank, u64 dims, f64 payload), all
/// little-endian. Deterministic: save -> load -> save is byte-identical.
void save_checkpoint(ModelParams& params, const ModelConfig& cfg, const std::string& path);
std::pair<ModelParams, ModelConfig> load_checkpoint(const std::string& path);

} // namespace dmt
