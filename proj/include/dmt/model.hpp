// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "dmt/gradcheck.hpp"
#include "dmt/mask.hpp"
#include "dmt/ops.hpp"
#include "dmt/tensor.hpp"

namespace dmt {

struct GridDims {
    std::int64_t frames = 1, h = 0, w = 0;
    std::int64_t cells() const { return frames * h * w; }
};

struct DmtConfig {
    std::int64_t layers = 4;     // L
    std::int64_t width = 64;     // token width d
    std::int64_t heads = 4;
    std::int64_t ffn_hidden = 256;
    std::int64_t rfc_kernel = 13; // K, odd
    SlidingWindowSpec warp{3, 1, 1};
    GridDims grid;
    // ablation switches
    bool token_selection = true;
    bool mask_activation = true;
    bool use_rfc = true;

    void validate() const;
    SlidingWindowSpec rfc_spec() const { return {rfc_kernel, 1, (rfc_kernel - 1) / 2}; }
};

struct DmtLayerParams {
    TensorPtr ln1_gamma, ln1_beta;
    TensorPtr wq, bq, wk, bk, wv, bv, wo, bo;
    TensorPtr ln2_gamma, ln2_beta;
    TensorPtr ffn_w1, ffn_b1, ffn_w2, ffn_b2;
    // RFC: branch A = 1x1 conv + GELU; branch B = 1x1 conv, depthwise KxK,
    // pointwise 1x1 merge; branches summed, plus the module skip.
    TensorPtr rfc_a_w, rfc_a_b;
    TensorPtr rfc_b_w, rfc_b_b;
    TensorPtr rfc_dw_w, rfc_dw_b;
    TensorPtr rfc_m_w, rfc_m_b;

    template <class Fn> void visit(const std::string& prefix, Fn&& fn) {
        fn(prefix + ".ln1.gamma", ln1_gamma);
        fn(prefix + ".ln1.beta", ln1_beta);
        fn(prefix + ".attn.wq", wq);
        fn(prefix + ".attn.bq", bq);
        fn(prefix + ".attn.wk", wk);
        fn(prefix + ".attn.bk", bk);
        fn(prefix + ".attn.wv", wv);
        fn(prefix + ".attn.bv", bv);
        fn(prefix + ".attn.wo", wo);
        fn(prefix + ".attn.bo", bo);
        fn(prefix + ".ln2.gamma", ln2_gamma);
        fn(prefix + ".ln2.beta", ln2_beta);
        fn(prefix + ".ffn.w1", ffn_w1);
        fn(prefix + ".ffn.b1", ffn_b1);
        fn(prefix + ".ffn.w2", ffn_w2);
        fn(prefix + ".ffn.b2", ffn_b2);
        fn(prefix + ".rfc.a.w", rfc_a_w);
        fn(prefix + ".rfc.a.b", rfc_a_b);
        fn(prefix + ".rfc.b.w", rfc_b_w);
        fn(prefix + ".rfc.b.b", rfc_b_b);
        fn(prefix + ".rfc.dw.w", rfc_dw_w);
        fn(prefix + ".rfc.dw.b", rfc_dw_b);
        fn(prefix + ".rfc.m.w", rfc_m_w);
        fn(prefix + ".rfc.m.b", rfc_m_b);
    }
};

DmtLayerParams init_dmt_layer_params(const DmtConfig& cfg, Rng& rng, bool requires_grad = true);

struct LayerState {
    TensorPtr grid; // [T,d,Hg,Wg]; invalid cells exactly zero on entry
    MaskSequence mask; // grid-resolution validity per frame
    std::int64_t layer_index = 0;
};

struct LayerTraceEntry {
    TensorPtr features; // h^(l): [T,d,Hg,Wg]
    MaskSequence mask;  // activated mask after the layer
};
using LayerTrace = std::vector<LayerTraceEntry>;

/// Per-layer instrumentation sampled by dmt_stack.
struct LayerStats {
    std::int64_t n_tokens = 0;      // N' entering the layer
    std::uint64_t attention_macs = 0; // counted inside msa_valid
};

/// Exact attention cost model: 4*N'*d^2 + 2*N'^2*d multiply-accumulates.
std::uint64_t attention_macs(std::int64_t n_tokens, std::int64_t width);

/// Pre-norm multi-head self-attention over the valid tokens of all frames
/// jointly, with residual. Empty batches pass through unchanged.
TokenBatch msa_valid(const TokenBatch& batch, const DmtLayerParams& params, std::int64_t heads);

/// Pre-norm FFN with token-feature warping: scatter to grid, soft-split
/// (unfold), two-layer MLP with GELU on each window column, soft-composition
/// (fold normalized by overlap counts), re-select, residual.
TokenBatch ffn_tokenwarp(const TokenBatch& batch, const DmtLayerParams& params,
                         const SlidingWindowSpec& warp_spec, const GridDims& grid);

/// Two-branch convolutional contextualizer with skip: returns branches + x.
TensorPtr rfc_forward(const TensorPtr& grid, const DmtLayerParams& params, std::int64_t kernel);

LayerState dmt_layer(const LayerState& state, const DmtLayerParams& params, const DmtConfig& cfg,
                     LayerStats* stats = nullptr);

struct StackResult {
    LayerState final_state;
    LayerTrace trace; // empty unless recorded
    std::vector<LayerStats> stats;
};

StackResult dmt_stack(const LayerState& state, const std::vector<DmtLayerParams>& params,
                      const DmtConfig& cfg, bool record_trace, bool record_stats = false);

} // namespace dmt
