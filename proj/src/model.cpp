// SPDX-License-Identifier: Apache-2.0
#include "dmt/model.hpp"

#include <cmath>
#include <string>

namespace dmt {

void DmtConfig::validate() const {
    if (layers < 1) throw ConfigError("DmtConfig: L must be >= 1");
    if (width < 1 || heads < 1 || width % heads != 0) {
        throw ConfigError("DmtConfig: token width must be a positive multiple of heads");
    }
    if (ffn_hidden < 1) throw ConfigError("DmtConfig: ffn_hidden must be >= 1");
    if (rfc_kernel < 1 || rfc_kernel % 2 == 0) throw ConfigError("DmtConfig: K must be odd");
    if (grid.h < 1 || grid.w < 1 || grid.frames < 1) {
        throw ConfigError("DmtConfig: grid dims must be positive");
    }
    warp.validate(grid.h, grid.w);
}

namespace {

TensorPtr kaiming(Shape shape, std::int64_t fan_in, Rng& rng, bool requires_grad) {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    return tensor::rand_uniform(std::move(shape), rng, -bound, bound, requires_grad);
}

} // namespace

DmtLayerParams init_dmt_layer_params(const DmtConfig& cfg, Rng& rng, bool requires_grad) {
    const std::int64_t d = cfg.width;
    const std::int64_t patch = d * cfg.warp.kernel * cfg.warp.kernel;
    const std::int64_t K = cfg.rfc_kernel;
    DmtLayerParams p;
    p.ln1_gamma = tensor::full({d}, 1.0, requires_grad);
    p.ln1_beta = tensor::zeros({d}, requires_grad);
    p.wq = kaiming({d, d}, d, rng, requires_grad);
    p.bq = tensor::zeros({d}, requires_grad);
    p.wk = kaiming({d, d}, d, rng, requires_grad);
    p.bk = tensor::zeros({d}, requires_grad);
    p.wv = kaiming({d, d}, d, rng, requires_grad);
    p.bv = tensor::zeros({d}, requires_grad);
    p.wo = kaiming({d, d}, d, rng, requires_grad);
    p.bo = tensor::zeros({d}, requires_grad);
    p.ln2_gamma = tensor::full({d}, 1.0, requires_grad);
    p.ln2_beta = tensor::zeros({d}, requires_grad);
    p.ffn_w1 = kaiming({patch, cfg.ffn_hidden}, patch, rng, requires_grad);
    p.ffn_b1 = tensor::zeros({cfg.ffn_hidden}, requires_grad);
    p.ffn_w2 = kaiming({cfg.ffn_hidden, patch}, cfg.ffn_hidden, rng, requires_grad);
    p.ffn_b2 = tensor::zeros({patch}, requires_grad);
    p.rfc_a_w = kaiming({d, d, 1, 1}, d, rng, requires_grad);
    p.rfc_a_b = tensor::zeros({d}, requires_grad);
    p.rfc_b_w = kaiming({d, d, 1, 1}, d, rng, requires_grad);
    p.rfc_b_b = tensor::zeros({d}, requires_grad);
    p.rfc_dw_w = kaiming({d, 1, K, K}, K * K, rng, requires_grad);
    p.rfc_dw_b = tensor::zeros({d}, requires_grad);
    p.rfc_m_w = kaiming({d, d, 1, 1}, d, rng, requires_grad);
    p.rfc_m_b = tensor::zeros({d}, requires_grad);
    return p;
}

std::uint64_t attention_macs(std::int64_t n_tokens, std::int64_t width) {
    if (n_tokens < 0) throw ValueError("attention_macs: negative token count");
    const std::uint64_t n = static_cast<std::uint64_t>(n_tokens);
    const std::uint64_t d = static_cast<std::uint64_t>(width);
    return 4 * n * d * d + 2 * n * n * d;
}

TokenBatch msa_valid(const TokenBatch& batch, const DmtLayerParams& params, std::int64_t heads) {
    if (batch.count() == 0) return batch;
    const std::int64_t d = batch.width;
    if (d % heads != 0) throw ShapeError("msa_valid: token width not divisible by heads");
    const std::int64_t dh = d / heads;

    TensorPtr z = batch.tokens;
    TensorPtr h = layer_norm(z, params.ln1_gamma, params.ln1_beta);

    TensorPtr out;
    {
        MacCounterScope macs;
        TensorPtr q = add_bias_rows(matmul(h, params.wq), params.bq);
        TensorPtr k = add_bias_rows(matmul(h, params.wk), params.bk);
        TensorPtr v = add_bias_rows(matmul(h, params.wv), params.bv);
        std::vector<TensorPtr> head_outputs;
        head_outputs.reserve(static_cast<std::size_t>(heads));
        const double att_scale = 1.0 / std::sqrt(static_cast<double>(dh));
        for (std::int64_t hh = 0; hh < heads; ++hh) {
            TensorPtr qh = slice_cols(q, hh * dh, (hh + 1) * dh);
            TensorPtr kh = slice_cols(k, hh * dh, (hh + 1) * dh);
            TensorPtr vh = slice_cols(v, hh * dh, (hh + 1) * dh);
            TensorPtr scores = scale(matmul(qh, transpose2d(kh)), att_scale);
            TensorPtr attn = softmax(scores, 1);
            head_outputs.push_back(matmul(attn, vh));
        }
        TensorPtr cat = heads == 1 ? head_outputs[0] : concat_cols(head_outputs);
        out = add_bias_rows(matmul(cat, params.wo), params.bo);
    }

    TokenBatch result = batch;
    result.tokens = add(z, out);
    return result;
}

TokenBatch ffn_tokenwarp(const TokenBatch& batch, const DmtLayerParams& params,
                         const SlidingWindowSpec& warp_spec, const GridDims& grid) {
    if (batch.count() == 0) return batch;
    if (batch.frames != grid.frames || batch.grid_h != grid.h || batch.grid_w != grid.w) {
        throw ShapeError("ffn_tokenwarp: batch grid dims disagree with config");
    }
    warp_spec.validate(grid.h, grid.w);

    TensorPtr z = batch.tokens;
    TensorPtr h = layer_norm(z, params.ln2_gamma, params.ln2_beta);

    const std::vector<std::int64_t> rows = batch.flat_rows();
    TensorPtr grid_feat =
        rows_to_grid(scatter_rows(h, rows, grid.cells()), grid.frames, grid.h, grid.w);

    // soft split
    TensorPtr cols = unfold(grid_feat, warp_spec);
    TensorPtr cols_t = transpose2d(cols); // [T*Nwin, d*k^2]
    TensorPtr m1 = gelu(add_bias_rows(matmul(cols_t, params.ffn_w1), params.ffn_b1));
    TensorPtr m2 = add_bias_rows(matmul(m1, params.ffn_w2), params.ffn_b2);

    // soft composition, normalized by per-pixel overlap counts
    TensorPtr folded = fold(transpose2d(m2), warp_spec, grid.frames, grid.h, grid.w);
    TensorPtr counts = overlap_counts(warp_spec, grid.frames, grid.h, grid.w);
    std::vector<double> recip(counts->data.size());
    for (std::size_t i = 0; i < recip.size(); ++i) {
        recip[i] = counts->data[i] > 0.0 ? 1.0 / counts->data[i] : 0.0;
    }
    TensorPtr normed =
        mul_mask_channels(folded, tensor::from_data(counts->shape, std::move(recip)));

    TensorPtr out_tokens = gather_rows(grid_to_rows(normed), rows);

    TokenBatch result = batch;
    result.tokens = add(z, out_tokens);
    return result;
}

TensorPtr rfc_forward(const TensorPtr& grid, const DmtLayerParams& params, std::int64_t kernel) {
    if (kernel % 2 == 0) throw ShapeError("rfc_forward: kernel must be odd");
    const SlidingWindowSpec point{1, 1, 0};
    const SlidingWindowSpec dw{kernel, 1, (kernel - 1) / 2};
    TensorPtr branch_a = gelu(conv2d(grid, params.rfc_a_w, params.rfc_a_b, point));
    TensorPtr branch_b = conv2d(grid, params.rfc_b_w, params.rfc_b_b, point);
    branch_b = depthwise_conv2d(branch_b, params.rfc_dw_w, params.rfc_dw_b, dw);
    branch_b = conv2d(branch_b, params.rfc_m_w, params.rfc_m_b, point);
    return add(add(branch_a, branch_b), grid);
}

LayerState dmt_layer(const LayerState& state, const DmtLayerParams& params, const DmtConfig& cfg,
                     LayerStats* stats) {
    const GridDims& g = cfg.grid;
    if (!state.grid || state.grid->rank() != 4 || state.grid->dim(0) != g.frames ||
        state.grid->dim(1) != cfg.width || state.grid->dim(2) != g.h ||
        state.grid->dim(3) != g.w) {
        throw ShapeError("dmt_layer: state grid must be [T,d,Hg,Wg] matching the config");
    }

    MaskSequence all_valid;
    if (!cfg.token_selection) {
        for (std::int64_t t = 0; t < g.frames; ++t) all_valid.emplace_back(g.h, g.w, 1);
    }
    const MaskSequence& select_mask = cfg.token_selection ? state.mask : all_valid;

    TokenBatch batch = token_select(grid_to_rows(state.grid), select_mask);
    if (stats) {
        stats->n_tokens = batch.count();
        mac_counter_reset();
    }
    if (batch.count() > 0) {
        batch = msa_valid(batch, params, cfg.heads);
        if (stats) stats->attention_macs = mac_counter_value();
        batch = ffn_tokenwarp(batch, params, cfg.warp, g);
    } else if (stats) {
        stats->attention_macs = 0;
    }

    // AU: the attention-path updater uses the soft-split window
    MaskSequence mask_au =
        cfg.mask_activation ? mask_update(state.mask, cfg.warp) : state.mask;

    TensorPtr grid_feat = token_scatter(batch);

    MaskSequence mask_out = mask_au;
    if (cfg.use_rfc) {
        grid_feat = rfc_forward(grid_feat, params, cfg.rfc_kernel);
        // CU: the convolution-path updater uses the RFC kernel window
        if (cfg.mask_activation) mask_out = mask_update(mask_au, cfg.rfc_spec());
    }

    if (cfg.token_selection) {
        grid_feat = mul_mask_channels(grid_feat, masks_to_tensor(mask_out));
    }

    return LayerState{grid_feat, std::move(mask_out), state.layer_index + 1};
}

StackResult dmt_stack(const LayerState& state, const std::vector<DmtLayerParams>& params,
                      const DmtConfig& cfg, bool record_trace, bool record_stats) {
    cfg.validate();
    if (static_cast<std::int64_t>(params.size()) != cfg.layers) {
        throw ShapeError("dmt_stack: expected " + std::to_string(cfg.layers) +
                         " layer parameter sets, got " + std::to_string(params.size()));
    }
    StackResult result;
    LayerState cur = state;
    for (std::int64_t l = 0; l < cfg.layers; ++l) {
        LayerStats stats;
        cur = dmt_layer(cur, params[static_cast<std::size_t>(l)], cfg,
                        record_stats ? &stats : nullptr);
        if (record_stats) result.stats.push_back(stats);
        if (record_trace) result.trace.push_back({cur.grid, cur.mask});
    }
    result.final_state = std::move(cur);
    return result;
}

} // namespace dmt
