// SPDX-License-Identifier: Apache-2.0
//
// Acceptance suite: one line per criterion, nonzero exit if any fails.
// Heavy settings (exhaustive enumerations, R=20 latency runs, 500-step
// training) live here rather than in the unit suite.
#include <chrono>
#include <fstream>
#include <cmath>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include "dmt/bench.hpp"
#include "dmt/metrics.hpp"
#include "dmt/training.hpp"
#include "oracles.hpp"

using namespace dmt;
using Clock = std::chrono::steady_clock;

namespace {

int g_failures = 0;

void report(int id, const std::string& name, bool pass, const std::string& detail) {
    std::printf("[%s] %2d. %s — %s\n", pass ? "PASS" : "FAIL", id, name.c_str(), detail.c_str());
    if (!pass) ++g_failures;
}

void run_criterion(int id, const std::string& name,
                   const std::function<std::pair<bool, std::string>()>& body) {
    try {
        auto [pass, detail] = body();
        report(id, name, pass, detail);
    } catch (const std::exception& e) {
        report(id, name, false, std::string("exception: ") + e.what());
    }
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
    return m;
}

MaskMap mask_from_bits(std::uint32_t bits) {
    MaskMap m(4, 4, 0);
    for (int i = 0; i < 16; ++i) m.v[static_cast<std::size_t>(i)] = (bits >> i) & 1u;
    return m;
}

// --- criterion 1: exhaustive dilation equivalence --------------------------------

std::pair<bool, std::string> criterion1() {
    const auto t0 = Clock::now();
    for (std::int64_t k = 2; k <= 3; ++k) {
        for (std::int64_t p : {std::int64_t{0}, k - 1}) {
            for (std::uint32_t bits = 0; bits < 65536; ++bits) {
                MaskMap m = mask_from_bits(bits);
                if (!(mask_update(m, {k, 1, p}) == oracles::binary_dilate(m, k - 1))) {
                    return {false, "mismatch at k=" + std::to_string(k) +
                                       " p=" + std::to_string(p) +
                                       " bits=" + std::to_string(bits)};
                }
            }
        }
    }
    const double secs = std::chrono::duration<double>(Clock::now() - t0).count();
    if (secs >= 10.0) return {false, "exhaustive run took " + std::to_string(secs) + " s"};
    char buf[128];
    std::snprintf(buf, sizeof(buf),
                  "4 x 65536 masks, k in {2,3}, p in {0,k-1}, exact, %.2f s", secs);
    return {true, buf};
}

// --- criterion 2: literal procedure simulation ------------------------------------

std::pair<bool, std::string> criterion2() {
    Rng rng(2024);
    for (int iter = 0; iter < 200; ++iter) {
        const std::int64_t k = 1 + rng.uniform_int(0, 3);
        const std::int64_t s = 1 + rng.uniform_int(0, 2); // strides 1..3 inclusive
        const std::int64_t p = rng.uniform_int(0, 2);
        const std::int64_t h = std::max<std::int64_t>(k, 3 + rng.uniform_int(0, 6));
        const std::int64_t w = std::max<std::int64_t>(k, 3 + rng.uniform_int(0, 6));
        MaskMap m(h, w, 0);
        for (std::int64_t i = 0; i < h * w; ++i) {
            m.v[static_cast<std::size_t>(i)] = rng.uniform() < rng.uniform() ? 1 : 0;
        }
        if (!(mask_update(m, {k, s, p}) == oracles::algorithm1_sim(m, k, s, p))) {
            return {false, "case " + std::to_string(iter) + " (k=" + std::to_string(k) +
                               ",s=" + std::to_string(s) + ",p=" + std::to_string(p) + ")"};
        }
    }
    return {true, "200 random (mask, spec) cases incl. strides 2 and 3, exact"};
}

// --- criterion 3: dense equivalence -------------------------------------------------

std::pair<bool, std::string> criterion3() {
    DmtConfig cfg;
    cfg.layers = 2;
    cfg.width = 32;
    cfg.heads = 4;
    cfg.ffn_hidden = 48;
    cfg.rfc_kernel = 5;
    cfg.warp = {3, 1, 1};
    cfg.grid = {2, 8, 8};
    Rng rng(3001);
    std::vector<DmtLayerParams> params;
    for (int l = 0; l < 2; ++l) params.push_back(init_dmt_layer_params(cfg, rng, false));
    TensorPtr grid = tensor::rand_uniform({2, 32, 8, 8}, rng, -1.0, 1.0);
    MaskSequence all_valid{MaskMap(8, 8, 1), MaskMap(8, 8, 1)};

    NoGradGuard no_grad;
    StackResult masked = dmt_stack(LayerState{grid, all_valid, 0}, params, cfg, false);
    TensorPtr dense = grid;
    for (int l = 0; l < 2; ++l) dense = oracles::reference_dense_layer(dense, params[l], cfg);
    const double diff = max_abs_diff(masked.final_state.grid->data, dense->data);
    char buf[96];
    std::snprintf(buf, sizeof(buf), "L=2 d=32 8x8 grid T=2, max abs diff %.3e (tol 1e-9)", diff);
    return {diff < 1e-9, buf};
}

// --- criterion 4: noise invariance ---------------------------------------------------

std::pair<bool, std::string> criterion4() {
    DmtConfig cfg;
    cfg.layers = 1;
    cfg.width = 8;
    cfg.heads = 2;
    cfg.ffn_hidden = 12;
    cfg.rfc_kernel = 3;
    cfg.warp = {3, 1, 1};
    cfg.grid = {2, 4, 4};
    Rng rng(4001);
    DmtLayerParams lp = init_dmt_layer_params(cfg, rng, false);

    ModelConfig mc;
    mc.channels = 6;
    mc.width = 8;
    mc.layers = 1;
    mc.heads = 2;
    mc.ffn_hidden = 12;
    mc.rfc_kernel = 3;
    ModelParams mp = init_model_params(mc, 41, false);

    NoGradGuard no_grad;
    for (int trial = 0; trial < 50; ++trial) {
        // layer-level invariance
        MaskSequence masks;
        for (int t = 0; t < 2; ++t) {
            MaskMap m(4, 4, 0);
            for (int i = 0; i < 16; ++i) {
                m.v[static_cast<std::size_t>(i)] = rng.uniform() < 0.5 ? 1 : 0;
            }
            if (m.count_valid() == 0) m.set(0, 0, 1);
            masks.push_back(m);
        }
        TensorPtr grid = tensor::rand_uniform({2, 8, 4, 4}, rng, -1.0, 1.0);
        TensorPtr clean = mul_mask_channels(grid, masks_to_tensor(masks));
        std::vector<double> noisy = clean->data;
        for (int t = 0; t < 2; ++t)
            for (int c = 0; c < 8; ++c)
                for (int i = 0; i < 16; ++i) {
                    if (!masks[static_cast<std::size_t>(t)].v[static_cast<std::size_t>(i)]) {
                        noisy[(t * 8 + c) * 16 + i] = rng.uniform(-1e3, 1e3);
                    }
                }
        LayerState a = dmt_layer(LayerState{clean, masks, 0}, lp, cfg);
        LayerState b = dmt_layer(LayerState{tensor::from_data(clean->shape, noisy), masks, 0},
                                 lp, cfg);
        if (a.grid->data != b.grid->data) {
            return {false, "layer output changed at trial " + std::to_string(trial)};
        }

        // encoder-level invariance
        MaskMap pm(8, 8, 0);
        for (int i = 0; i < 64; ++i) {
            pm.v[static_cast<std::size_t>(i)] = rng.uniform() < 0.6 ? 1 : 0;
        }
        FrameSequence fa(tensor::rand_uniform({1, 3, 8, 8}, rng));
        std::vector<double> tampered = fa.data->data;
        for (int c = 0; c < 3; ++c)
            for (int i = 0; i < 64; ++i) {
                if (!pm.v[static_cast<std::size_t>(i)]) tampered[c * 64 + i] = rng.uniform();
            }
        FrameSequence fb(tensor::from_data(fa.data->shape, tampered));
        if (encode(fa, {pm}, mp, mc)->data != encode(fb, {pm}, mp, mc)->data) {
            return {false, "encoder output changed at trial " + std::to_string(trial)};
        }
    }
    return {true, "50 trials, layer and encoder outputs bit-identical under hole noise"};
}

// --- criterion 5: complexity law ------------------------------------------------------

std::pair<bool, std::string> criterion5() {
    // desk config: T=8 with an 8x8 grid -> N = 512 tokens, d = 64
    const std::int64_t N = 512, d = 64, heads = 4;
    DmtConfig cfg;
    cfg.layers = 1;
    cfg.width = d;
    cfg.heads = heads;
    cfg.ffn_hidden = 64;
    cfg.rfc_kernel = 3;
    cfg.grid = {8, 8, 8};
    Rng rng(5001);
    DmtLayerParams lp = init_dmt_layer_params(cfg, rng, false);
    NoGradGuard no_grad;

    const std::vector<double> ratios{0.0, 0.1, 0.3, 0.6, 0.9};
    std::vector<std::uint64_t> counted;
    for (double r : ratios) {
        const std::int64_t n_valid = static_cast<std::int64_t>(std::llround((1.0 - r) * N));
        // masks with exactly n_valid valid cells so N' scales linearly
        std::vector<std::int64_t> cells(static_cast<std::size_t>(N));
        for (std::int64_t i = 0; i < N; ++i) cells[static_cast<std::size_t>(i)] = i;
        for (std::int64_t i = N - 1; i > 0; --i) {
            std::swap(cells[static_cast<std::size_t>(i)],
                      cells[static_cast<std::size_t>(rng.uniform_int(0, i))]);
        }
        MaskSequence masks(8, MaskMap(8, 8, 0));
        for (std::int64_t i = 0; i < n_valid; ++i) {
            const std::int64_t cell = cells[static_cast<std::size_t>(i)];
            masks[static_cast<std::size_t>(cell / 64)].v[static_cast<std::size_t>(cell % 64)] = 1;
        }
        TensorPtr features = tensor::rand_uniform({N, d}, rng, -1.0, 1.0);
        TokenBatch batch = token_select(features, masks);
        if (batch.count() != n_valid) return {false, "mask construction failed"};
        mac_counter_reset();
        msa_valid(batch, lp, heads);
        const std::uint64_t macs = mac_counter_value();
        if (macs != attention_macs(n_valid, d)) {
            return {false, "ratio " + std::to_string(r) + ": counted " + std::to_string(macs) +
                               " != formula " + std::to_string(attention_macs(n_valid, d))};
        }
        counted.push_back(macs);
    }
    for (std::size_t i = 1; i < counted.size(); ++i) {
        if (counted[i] >= counted[i - 1]) return {false, "MAC curve not strictly decreasing"};
    }
    const double reduction =
        1.0 - static_cast<double>(counted.back()) / static_cast<double>(counted.front());
    char buf[160];
    std::snprintf(buf, sizeof(buf),
                  "exact at ratios {0,.1,.3,.6,.9}; monotone; %.1f%% reduction at 0.9 "
                  "(>= 75%%; absolute G-MAC table values out of scope)",
                  100.0 * reduction);
    return {reduction >= 0.75, buf};
}

// --- criterion 6: latency trend -------------------------------------------------------

std::pair<bool, std::string> criterion6() {
    BenchConfig cfg;
    cfg.model = ModelConfig{}; // toy defaults: d=64, L=4, heads=4, K=13
    cfg.frames = 8;
    cfg.frame_h = cfg.frame_w = 64;
    cfg.ratios = {0.1, 0.9};
    cfg.repetitions = 20;
    cfg.warmup = 3;
    cfg.seed = 7;
    BenchReport report = bench_run(cfg);
    const BenchRow& low = report.rows[0];
    const BenchRow& high = report.rows[1];
    char buf[160];
    std::snprintf(buf, sizeof(buf),
                  "T=8 64x64, R=20: mean %.1f ms @0.9 < %.1f ms @0.1 (std %.1f / %.1f)",
                  high.wall_ms_mean, low.wall_ms_mean, high.wall_ms_std, low.wall_ms_std);
    return {high.wall_ms_mean < low.wall_ms_mean, buf};
}

// --- criterion 7: gradient correctness -------------------------------------------------

std::pair<bool, std::string> criterion7() {
    const auto t0 = Clock::now();
    const double tol = 1e-4;
    Rng rng(7001);
    double worst = 0.0;

    // (a) primitive operators
    {
        ParamSet p;
        p["a"] = tensor::rand_uniform({3, 4}, rng, -1.0, 1.0, true);
        p["b"] = tensor::rand_uniform({4, 3}, rng, -1.0, 1.0, true);
        p["bias"] = tensor::rand_uniform({3}, rng, -1.0, 1.0, true);
        p["g"] = tensor::rand_uniform({3}, rng, 0.5, 1.5, true);
        p["beta"] = tensor::rand_uniform({3}, rng, -0.5, 0.5, true);
        p["x"] = tensor::rand_uniform({1, 2, 5, 5}, rng, -1.0, 1.0, true);
        p["w"] = tensor::rand_uniform({2, 2, 3, 3}, rng, -1.0, 1.0, true);
        p["dw"] = tensor::rand_uniform({2, 1, 3, 3}, rng, -1.0, 1.0, true);
        auto f = [](const ParamSet& q) {
            TensorPtr lin = add_bias_rows(matmul(q.at("a"), q.at("b")), q.at("bias"));
            TensorPtr ln = layer_norm(lin, q.at("g"), q.at("beta"));
            TensorPtr soft = softmax(ln, 1);
            TensorPtr act = add(gelu(lin), sigmoid(scale(lin, 0.7)));
            TensorPtr conv = conv2d(q.at("x"), q.at("w"), nullptr, {3, 2, 1});
            TensorPtr dconv = depthwise_conv2d(q.at("x"), q.at("dw"), nullptr, {3, 1, 1});
            TensorPtr cols = unfold(q.at("x"), {3, 1, 1});
            TensorPtr back = fold(cols, {3, 1, 1}, 1, 5, 5);
            TensorPtr up = upsample_nn2x(q.at("x"));
            return add(add(add(sum(mul(soft, soft)), sum(act)),
                           add(sum(mul(conv, conv)), sum(abs_val(dconv)))),
                       add(sum(mul(back, back)), add(sum(up), mean(q.at("x")))));
        };
        FiniteDiffReport r = finite_diff_check(f, p, 1e-5);
        worst = std::max(worst, r.max_rel_err);
        if (r.max_rel_err >= tol) {
            return {false, "primitive ops: rel err " + std::to_string(r.max_rel_err) + " at " +
                               r.worst_param};
        }
    }

    // (b) one full layer
    {
        DmtConfig cfg;
        cfg.layers = 1;
        cfg.width = 8;
        cfg.heads = 2;
        cfg.ffn_hidden = 12;
        cfg.rfc_kernel = 3;
        cfg.warp = {3, 1, 1};
        cfg.grid = {2, 4, 4};
        DmtLayerParams lp = init_dmt_layer_params(cfg, rng, true);
        ParamSet p;
        lp.visit("layer", [&p](const std::string& n, TensorPtr& t) { p[n] = t; });
        MaskSequence masks;
        for (int t = 0; t < 2; ++t) {
            MaskMap m(4, 4, 0);
            for (int i = 0; i < 16; ++i) {
                m.v[static_cast<std::size_t>(i)] = rng.uniform() < 0.5 ? 1 : 0;
            }
            if (m.count_valid() == 0) m.set(1, 1, 1);
            masks.push_back(m);
        }
        TensorPtr grid;
        {
            NoGradGuard ng;
            grid = mul_mask_channels(tensor::rand_uniform({2, 8, 4, 4}, rng, -1.0, 1.0),
                                     masks_to_tensor(masks));
        }
        auto f = [&](const ParamSet&) {
            return mean(abs_val(dmt_layer(LayerState{grid, masks, 0}, lp, cfg).grid));
        };
        FiniteDiffReport r = finite_diff_check(f, p, 1e-5, 16, 7070);
        worst = std::max(worst, r.max_rel_err);
        if (r.max_rel_err >= tol) {
            return {false, "dmt layer: rel err " + std::to_string(r.max_rel_err) + " at " +
                               r.worst_param};
        }
    }

    // (c) full forward + lambda_rec*L1 + lambda_mig*L_mig
    {
        ModelConfig mc;
        mc.channels = 6;
        mc.width = 8;
        mc.layers = 2;
        mc.heads = 2;
        mc.ffn_hidden = 12;
        mc.rfc_kernel = 3;
        ModelParams video = init_model_params(mc, 70, true);
        ModelParams prior = init_model_params(mc, 71, false);
        ParamSet p = video.param_set();

        SyntheticDatasetSpec data;
        data.height = data.width = 16;
        data.frames = 2;
        data.seed = 72;
        FrameSequence frames = synth_clip(data, 0);
        MaskSequence masks = synth_masks(data, 0);

        LayerTrace prior_trace;
        {
            NoGradGuard ng;
            std::vector<LayerTrace> per_frame;
            for (std::int64_t t = 0; t < 2; ++t) {
                const std::int64_t plane = 3 * 16 * 16;
                std::vector<double> fd(frames.data->data.begin() + t * plane,
                                       frames.data->data.begin() + (t + 1) * plane);
                FrameSequence one(tensor::from_data({1, 3, 16, 16}, std::move(fd)));
                per_frame.push_back(
                    forward(one, {masks[static_cast<std::size_t>(t)]}, prior, mc, true).trace);
            }
            for (std::size_t l = 0; l < per_frame[0].size(); ++l) {
                const Shape& s1 = per_frame[0][l].features->shape;
                std::vector<double> stacked;
                MaskSequence ml;
                for (int t = 0; t < 2; ++t) {
                    const auto& src = per_frame[static_cast<std::size_t>(t)][l];
                    stacked.insert(stacked.end(), src.features->data.begin(),
                                   src.features->data.end());
                    ml.push_back(src.mask[0]);
                }
                prior_trace.push_back(
                    {tensor::from_data({2, s1[1], s1[2], s1[3]}, std::move(stacked)), ml});
            }
        }

        const LossWeights weights{1.0, 0.1};
        auto f = [&](const ParamSet&) {
            ForwardResult out = forward(frames, masks, video, mc, true);
            return add(scale(l1_loss(out.raw, frames.data), weights.lambda_rec),
                       scale(migration_loss(out.trace, prior_trace), weights.lambda_mig));
        };
        FiniteDiffReport r = finite_diff_check(f, p, 1e-5, 3, 7171);
        worst = std::max(worst, r.max_rel_err);
        if (r.max_rel_err >= tol) {
            return {false, "full forward: rel err " + std::to_string(r.max_rel_err) + " at " +
                               r.worst_param};
        }
    }

    const double secs = std::chrono::duration<double>(Clock::now() - t0).count();
    char buf[128];
    std::snprintf(buf, sizeof(buf), "max rel err %.2e (tol 1e-4), kinks excluded, %.1f s (< 120)",
                  worst, secs);
    return {secs < 120.0, buf};
}

// --- criterion 8: mask vanishing bound ---------------------------------------------------

std::pair<bool, std::string> criterion8() {
    Rng rng(8001);
    for (int trial = 0; trial < 30; ++trial) {
        const std::int64_t k = 2 + rng.uniform_int(0, 1);  // warp kernel 2..3
        const std::int64_t K = 3 + 2 * rng.uniform_int(0, 1); // rfc kernel 3 or 5
        const std::int64_t r_au = k - 1, r_cu = K - 1;
        const std::int64_t H = 8 + rng.uniform_int(0, 4);
        const std::int64_t W = 8 + rng.uniform_int(0, 4);

        // random rectangular hole; everything else valid
        MaskMap m(H, W, 1);
        const std::int64_t hy0 = rng.uniform_int(0, H - 2);
        const std::int64_t hy1 = rng.uniform_int(hy0 + 1, H);
        const std::int64_t hx0 = rng.uniform_int(0, W - 2);
        const std::int64_t hx1 = rng.uniform_int(hx0 + 1, W);
        for (std::int64_t y = hy0; y < hy1; ++y)
            for (std::int64_t x = hx0; x < hx1; ++x) m.set(y, x, 0);
        if (m.count_valid() == 0) m.set(0, 0, 1);

        // Chebyshev radius of the hole: farthest invalid cell from a valid one
        std::int64_t rho = 0;
        for (std::int64_t y = 0; y < H; ++y)
            for (std::int64_t x = 0; x < W; ++x) {
                if (m.at(y, x)) continue;
                std::int64_t best = INT64_MAX;
                for (std::int64_t vy = 0; vy < H; ++vy)
                    for (std::int64_t vx = 0; vx < W; ++vx) {
                        if (!m.at(vy, vx)) continue;
                        best = std::min<std::int64_t>(best,
                                                      std::max(std::llabs(y - vy), std::llabs(x - vx)));
                    }
                rho = std::max(rho, best);
            }
        if (rho == 0) continue; // no hole left

        const std::int64_t bound = (rho + r_au + r_cu - 1) / (r_au + r_cu);

        DmtConfig cfg;
        cfg.layers = bound + 1;
        cfg.width = 4;
        cfg.heads = 2;
        cfg.ffn_hidden = 6;
        cfg.rfc_kernel = K;
        cfg.warp = {k, 1, k - 1};
        cfg.grid = {1, H, W};
        Rng prng(900 + trial);
        std::vector<DmtLayerParams> params;
        for (std::int64_t l = 0; l < cfg.layers; ++l) {
            params.push_back(init_dmt_layer_params(cfg, prng, false));
        }
        NoGradGuard no_grad;
        TensorPtr grid = mul_mask_channels(
            tensor::rand_uniform({1, 4, H, W}, prng, -1.0, 1.0), masks_to_tensor({m}));
        StackResult stack = dmt_stack(LayerState{grid, {m}, 0}, params, cfg, true);

        MaskMap expect = m;
        for (std::int64_t l = 0; l < cfg.layers; ++l) {
            expect = oracles::iterate_dilate(expect, r_au + r_cu, 1);
            if (!(stack.trace[static_cast<std::size_t>(l)].mask[0] == expect)) {
                return {false, "trial " + std::to_string(trial) + ": layer " + std::to_string(l) +
                                   " mask diverges from iterated dilation"};
            }
        }
        const MaskMap& at_bound = stack.trace[static_cast<std::size_t>(bound - 1)].mask[0];
        if (at_bound.count_valid() != at_bound.size()) {
            return {false, "trial " + std::to_string(trial) + ": not all-valid after ceil(rho/(r_AU+r_CU)) = " +
                               std::to_string(bound) + " layers (rho=" + std::to_string(rho) +
                               ")"};
        }
    }
    return {true, "30 random holes: per-layer masks equal iterated dilation; vanish at the bound"};
}

// --- criterion 9: toy training -------------------------------------------------------------

std::pair<bool, std::string> criterion9() {
    const auto t0 = Clock::now();
    TrainConfig cfg;
    cfg.model.channels = 16;
    cfg.model.width = 32;
    cfg.model.layers = 2;
    cfg.model.heads = 4;
    cfg.model.ffn_hidden = 64;
    cfg.model.rfc_kernel = 5;
    cfg.batch = 2;
    cfg.seed = 1;

    SyntheticDatasetSpec data;
    data.height = data.width = 16;
    data.clips = 32;
    data.mask_ratio = 0.35;

    // stage one: image pretraining at the higher pretrain rate
    cfg.adam.lr = 1e-3;
    TrainLog img_log;
    ModelParams prior = pretrain_image(cfg, data, 500, &img_log);
    double init10 = 0.0, last50 = 0.0;
    for (int i = 0; i < 10; ++i) init10 += img_log[static_cast<std::size_t>(i)].rec;
    init10 /= 10.0;
    for (std::size_t i = img_log.size() - 50; i < img_log.size(); ++i) last50 += img_log[i].rec;
    last50 /= 50.0;
    if (!(last50 <= 0.5 * init10)) {
        return {false, "image L1 did not halve: first-10 avg " + std::to_string(init10) +
                           ", last-50 avg " + std::to_string(last50)};
    }

    // stage two: video training from scratch with the frozen prior
    TrainConfig vcfg = cfg;
    vcfg.adam.lr = 1e-4;
    vcfg.seed = 2;
    vcfg.weights.lambda_mig = 0.1;
    SyntheticDatasetSpec vdata = data;
    vdata.frames = 4;
    TrainLog vid_log;
    train_video(vcfg, vdata, prior, cfg.model, 500, &vid_log);
    double rec10 = 0.0, mig10 = 0.0, recf = 0.0, migf = 0.0;
    for (int i = 0; i < 10; ++i) {
        rec10 += vid_log[static_cast<std::size_t>(i)].rec;
        mig10 += vid_log[static_cast<std::size_t>(i)].mig;
    }
    rec10 /= 10.0;
    mig10 /= 10.0;
    for (std::size_t i = vid_log.size() - 50; i < vid_log.size(); ++i) {
        recf += vid_log[i].rec;
        migf += vid_log[i].mig;
    }
    recf /= 50.0;
    migf /= 50.0;
    const double secs = std::chrono::duration<double>(Clock::now() - t0).count();
    char buf[256];
    std::snprintf(buf, sizeof(buf),
                  "image L1 %.3f -> %.3f (halved); video rec %.3f -> %.3f, mig %.1f -> %.1f "
                  "(both below step-10 avg); %.0f s (< 600)",
                  init10, last50, rec10, recf, mig10, migf, secs);
    const bool pass = recf < rec10 && migf < mig10 && secs < 600.0;
    return {pass, buf};
}

// --- criterion 10: migration-loss contracts -------------------------------------------------

std::pair<bool, std::string> criterion10() {
    Rng rng(10001);
    auto trace_of = [](const std::vector<double>& vals, const MaskMap& m) {
        LayerTrace t;
        const std::int64_t c = static_cast<std::int64_t>(vals.size()) / (m.h * m.w);
        t.push_back({tensor::from_data({1, c, m.h, m.w}, vals), MaskSequence{m}});
        return t;
    };

    for (int i = 0; i < 100; ++i) { // equality with non-negative prior
        MaskMap m(3, 3, 0);
        for (int j = 0; j < 9; ++j) m.v[static_cast<std::size_t>(j)] = rng.uniform() < 0.7;
        std::vector<double> vals = tensor::rand_uniform({18}, rng, 0.0, 2.0)->data;
        if (migration_loss(trace_of(vals, m), trace_of(vals, m))->item() != 0.0) {
            return {false, "nonzero loss under trace equality with non-negative prior"};
        }
    }
    for (int i = 0; i < 100; ++i) { // all-invalid masks block everything
        MaskMap m(3, 3, 0);
        std::vector<double> a = tensor::rand_uniform({18}, rng, -3.0, 3.0)->data;
        std::vector<double> b = tensor::rand_uniform({18}, rng, -3.0, 3.0)->data;
        if (migration_loss(trace_of(a, m), trace_of(b, m))->item() != 0.0) {
            return {false, "nonzero loss under all-invalid mask"};
        }
    }
    for (int i = 0; i < 100; ++i) { // monotone under mask shrinkage
        MaskMap large(3, 3, 0);
        for (int j = 0; j < 9; ++j) large.v[static_cast<std::size_t>(j)] = rng.uniform() < 0.6;
        MaskMap small = large;
        for (int j = 0; j < 9; ++j) {
            if (small.v[static_cast<std::size_t>(j)] && rng.uniform() < 0.5) {
                small.v[static_cast<std::size_t>(j)] = 0;
            }
        }
        std::vector<double> a = tensor::rand_uniform({18}, rng, -3.0, 3.0)->data;
        std::vector<double> b = tensor::rand_uniform({18}, rng, -3.0, 3.0)->data;
        const double l_large = migration_loss(trace_of(a, large), trace_of(b, large))->item();
        const double l_small = migration_loss(trace_of(a, small), trace_of(b, small))->item();
        if (l_large < 0.0 || l_small > l_large + 1e-12) {
            return {false, "loss increased when the mask shrank"};
        }
    }
    return {true, "3 contracts x 100 random cases"};
}

// --- criterion 11: metric fixed points and oracles --------------------------------------------

std::pair<bool, std::string> criterion11() {
    Rng rng(11001);
    // exact fixed points
    std::vector<double> a(3 * 256, 0.5), b(3 * 256, 0.6);
    FrameSequence fa(tensor::from_data({1, 3, 16, 16}, a));
    FrameSequence fb(tensor::from_data({1, 3, 16, 16}, b));
    if (std::fabs(psnr(fa, fb).mean - 20.0) > 1e-12) return {false, "uniform 0.1 != 20 dB"};
    FrameSequence fr(tensor::rand_uniform({1, 3, 16, 16}, rng));
    if (std::fabs(ssim(fr, fr).mean - 1.0) > 1e-12) return {false, "identical SSIM != 1"};
    if (!psnr(fr, fr).has_infinite) return {false, "identical PSNR not flagged infinite"};

    // oracle agreement on random pairs
    for (int i = 0; i < 10; ++i) {
        FrameSequence x(tensor::rand_uniform({1, 3, 15, 14}, rng));
        FrameSequence y(tensor::rand_uniform({1, 3, 15, 14}, rng));
        const double p_expected = oracles::psnr_oracle(x.data->data, y.data->data, 1.0);
        if (std::fabs(psnr(x, y).mean - p_expected) > 1e-9) return {false, "PSNR oracle diff"};
        const std::int64_t plane = 15 * 14;
        std::vector<double> ya(plane), yb(plane);
        for (std::int64_t j = 0; j < plane; ++j) {
            ya[j] = 0.299 * x.data->data[j] + 0.587 * x.data->data[plane + j] +
                    0.114 * x.data->data[2 * plane + j];
            yb[j] = 0.299 * y.data->data[j] + 0.587 * y.data->data[plane + j] +
                    0.114 * y.data->data[2 * plane + j];
        }
        const double s_expected = oracles::ssim_oracle(ya, yb, 15, 14, 11, 1.5, 0.01, 0.03, 1.0);
        if (std::fabs(ssim(x, y).mean - s_expected) > 1e-6) return {false, "SSIM oracle diff"};
    }
    return {true, "PSNR 20 dB exact; SSIM 1.0 exact; 10 random pairs match the oracles"};
}

// --- criterion 12: checkpoint round trip ---------------------------------------------------------

std::pair<bool, std::string> criterion12() {
    const std::string path = "/tmp/dmt_acceptance.ckpt";
    ModelConfig cfg;
    cfg.channels = 8;
    cfg.width = 16;
    cfg.layers = 2;
    cfg.heads = 2;
    cfg.ffn_hidden = 16;
    cfg.rfc_kernel = 3;
    ModelParams params = init_model_params(cfg, 12);
    save_checkpoint(params, cfg, path);
    auto [loaded, cfg2] = load_checkpoint(path);
    save_checkpoint(loaded, cfg2, path + ".2");

    auto slurp = [](const std::string& p) {
        std::ifstream f(p, std::ios::binary);
        return std::string((std::istreambuf_iterator<char>(f)),
                           std::istreambuf_iterator<char>());
    };
    const std::string b1 = slurp(path), b2 = slurp(path + ".2");
    if (b1 != b2 || b1.empty()) return {false, "save/load/save not byte-identical"};

    auto corrupt = [&](std::size_t offset, const std::string& bytes) {
        std::string c = b1;
        c.replace(offset, bytes.size(), bytes);
        std::ofstream f(path + ".bad", std::ios::binary | std::ios::trunc);
        f << c;
    };
    auto fault_of = [&]() {
        try {
            load_checkpoint(path + ".bad");
        } catch (const CheckpointError& e) {
            return e.fault();
        }
        return CheckpointFault::Malformed;
    };
    corrupt(0, "ZZZZ");
    if (fault_of() != CheckpointFault::BadMagic) return {false, "magic corruption not detected"};
    corrupt(4, std::string("\x09\x00\x00\x00", 4));
    if (fault_of() != CheckpointFault::BadVersion) return {false, "version skew not detected"};
    {
        std::ofstream f(path + ".bad", std::ios::binary | std::ios::trunc);
        f << b1.substr(0, b1.size() / 3);
    }
    if (fault_of() != CheckpointFault::Truncated) return {false, "truncation not detected"};
    ModelParams bent = init_model_params(cfg, 13);
    bent.itok_w = tensor::zeros({cfg.width, cfg.channels + 2}, true);
    save_checkpoint(bent, cfg, path + ".bad");
    try {
        load_checkpoint(path + ".bad");
        return {false, "shape inconsistency not detected"};
    } catch (const CheckpointError& e) {
        if (e.fault() != CheckpointFault::ShapeMismatch ||
            std::string(e.what()).find("itok.w") == std::string::npos) {
            return {false, "shape fault did not name the offending tensor"};
        }
    }
    return {true, "byte-identical round trip; magic/version/truncation/shape faults distinct"};
}

// --- criterion 13: ablation harness, directional only --------------------------------------------

std::pair<bool, std::string> criterion13() {
    AblateConfig cfg;
    cfg.train.model.channels = 12;
    cfg.train.model.width = 16;
    cfg.train.model.layers = 2;
    cfg.train.model.heads = 2;
    cfg.train.model.ffn_hidden = 32;
    cfg.train.model.rfc_kernel = 5;
    cfg.train.batch = 1;
    cfg.train.seed = 13;
    cfg.data.height = cfg.data.width = 16;
    cfg.data.frames = 2;
    cfg.data.clips = 16;
    cfg.steps_image = 120;
    cfg.steps_video = 120;
    cfg.eval_clips = 4;

    const std::vector<AblateRow> rows = ablate_run(cfg);
    if (rows.size() != 5) return {false, "expected 5 variants"};
    std::printf("      paper-scale quality numbers (PSNR 33.82 / SSIM 0.976 / VFID) are out of "
                "scope at desk scale; toy directional table:\n");
    for (const auto& r : rows) {
        if (!std::isfinite(r.psnr) || !std::isfinite(r.ssim)) {
            return {false, "non-finite metric for " + r.variant};
        }
        std::printf("      %-22s psnr=%7.3f dB  ssim=%.4f\n", r.variant.c_str(), r.psnr, r.ssim);
    }
    const double full_psnr = rows[0].psnr;
    std::printf("      direction vs full: no_rfc %+0.3f dB, no_migration %+0.3f dB (reported, "
                "not asserted)\n",
                rows[3].psnr - full_psnr, rows[4].psnr - full_psnr);
    return {true, "harness trains and reports all 5 variants (directional only)"};
}

} // namespace

int main() {
    std::printf("acceptance suite\n");
    run_criterion(1, "mask activation equals square dilation (exhaustive)", criterion1);
    run_criterion(2, "mask activation matches the literal procedure simulation", criterion2);
    run_criterion(3, "all-valid masked stack equals the dense reference", criterion3);
    run_criterion(4, "noise invariance at invalid positions", criterion4);
    run_criterion(5, "attention MACs equal 4N'd^2 + 2N'^2 d and scale down", criterion5);
    run_criterion(6, "forward latency decreases with mask ratio", criterion6);
    run_criterion(7, "backward matches central finite differences", criterion7);
    run_criterion(8, "masks vanish within the dilation-radius bound", criterion8);
    run_criterion(9, "two-stage toy training converges in budget", criterion9);
    run_criterion(10, "migration-loss contracts", criterion10);
    run_criterion(11, "PSNR/SSIM fixed points and oracles", criterion11);
    run_criterion(12, "checkpoint round trip and fault taxonomy", criterion12);
    run_criterion(13, "ablation harness reports toy-scale directions", criterion13);

    if (g_failures == 0) {
        std::printf("all 13 criteria passed\n");
        return 0;
    }
    std::printf("%d criteria FAILED\n", g_failures);
    return 1;
}
