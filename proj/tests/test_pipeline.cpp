// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cstdio>
#include <fstream>

#include "dmt/pipeline.hpp"

using namespace dmt;

namespace {

ModelConfig tiny_model() {
    ModelConfig cfg;
    cfg.channels = 6;
    cfg.width = 8;
    cfg.layers = 2;
    cfg.heads = 2;
    cfg.ffn_hidden = 12;
    cfg.rfc_kernel = 3;
    cfg.warp = {3, 1, 1};
    return cfg;
}

FrameSequence random_frames(Rng& rng, std::int64_t T, std::int64_t H, std::int64_t W) {
    return FrameSequence(tensor::rand_uniform({T, 3, H, W}, rng));
}

MaskSequence random_masks(Rng& rng, std::int64_t T, std::int64_t H, std::int64_t W,
                          double p_valid) {
    MaskSequence masks;
    for (std::int64_t t = 0; t < T; ++t) {
        MaskMap m(H, W, 0);
        for (std::int64_t i = 0; i < H * W; ++i) {
            m.v[static_cast<std::size_t>(i)] = rng.uniform() < p_valid ? 1 : 0;
        }
        masks.push_back(m);
    }
    return masks;
}

const std::string kTmp = "/tmp/dmt_test_ckpt.bin";

} // namespace

TEST_SUITE("encode") {
    TEST_CASE("output spatial dims are H/4 x W/4") {
        Rng rng(71);
        ModelConfig cfg = tiny_model();
        ModelParams params = init_model_params(cfg, 1);
        FrameSequence frames = random_frames(rng, 2, 16, 24);
        MaskSequence masks{MaskMap(16, 24, 1), MaskMap(16, 24, 1)};
        TensorPtr enc = encode(frames, masks, params, cfg);
        CHECK(enc->shape == Shape{2, cfg.channels, 4, 6});
    }

    TEST_CASE("zero weights give zero features") {
        Rng rng(72);
        ModelConfig cfg = tiny_model();
        ModelParams params = init_model_params(cfg, 1);
        params.enc1_w = tensor::zeros({cfg.channels, 4, 3, 3}, true);
        params.enc1_b = tensor::zeros({cfg.channels}, true);
        params.enc2_w = tensor::zeros({cfg.channels, cfg.channels, 3, 3}, true);
        params.enc2_b = tensor::zeros({cfg.channels}, true);
        FrameSequence frames = random_frames(rng, 1, 8, 8);
        TensorPtr enc = encode(frames, {MaskMap(8, 8, 1)}, params, cfg);
        for (double v : enc->data) CHECK(v == 0.0);
    }

    TEST_CASE("hole pixels cannot influence the encoding") {
        Rng rng(73);
        ModelConfig cfg = tiny_model();
        ModelParams params = init_model_params(cfg, 2);
        MaskSequence masks = random_masks(rng, 1, 8, 8, 0.6);
        FrameSequence a = random_frames(rng, 1, 8, 8);
        std::vector<double> tampered = a.data->data;
        for (std::int64_t c = 0; c < 3; ++c)
            for (std::int64_t i = 0; i < 64; ++i) {
                if (!masks[0].v[static_cast<std::size_t>(i)]) {
                    tampered[c * 64 + i] = rng.uniform();
                }
            }
        FrameSequence b(tensor::from_data(a.data->shape, tampered));
        TensorPtr ea = encode(a, masks, params, cfg);
        TensorPtr eb = encode(b, masks, params, cfg);
        CHECK(ea->data == eb->data); // exact
    }

    TEST_CASE("non-divisible dimensions raise") {
        Rng rng(74);
        ModelConfig cfg = tiny_model();
        ModelParams params = init_model_params(cfg, 1);
        FrameSequence frames(tensor::rand_uniform({1, 3, 10, 8}, rng));
        CHECK_THROWS_AS(encode(frames, {MaskMap(10, 8, 1)}, params, cfg), ShapeError);
    }
}

TEST_SUITE("tokenize") {
    TEST_CASE("identity linear flattens the grid in raster-then-frame order") {
        Rng rng(75);
        const std::int64_t C = 3;
        TensorPtr grid = tensor::rand_uniform({2, C, 2, 2}, rng);
        std::vector<double> eye(static_cast<std::size_t>(C * C), 0.0);
        for (std::int64_t i = 0; i < C; ++i) eye[i * C + i] = 1.0;
        TensorPtr tokens = tokenize(grid, tensor::from_data({C, C}, eye), tensor::zeros({C}));
        REQUIRE(tokens->shape == Shape{8, C});
        // token n = t*4 + y*2 + x
        for (std::int64_t t = 0; t < 2; ++t)
            for (std::int64_t y = 0; y < 2; ++y)
                for (std::int64_t x = 0; x < 2; ++x)
                    for (std::int64_t c = 0; c < C; ++c) {
                        CHECK(tokens->data[((t * 2 + y) * 2 + x) * C + c] ==
                              grid->data[((t * C + c) * 2 + y) * 2 + x]);
                    }
    }

    TEST_CASE("two frames double the token count") {
        Rng rng(76);
        TensorPtr g1 = tensor::rand_uniform({1, 2, 3, 3}, rng);
        TensorPtr g2 = tensor::rand_uniform({2, 2, 3, 3}, rng);
        TensorPtr w = tensor::rand_uniform({2, 4}, rng);
        TensorPtr b = tensor::zeros({4});
        CHECK(tokenize(g1, w, b)->dim(0) == 9);
        CHECK(tokenize(g2, w, b)->dim(0) == 18);
    }

    TEST_CASE("tokenize and inverse layout round trip exactly") {
        Rng rng(77);
        const std::int64_t C = 3;
        TensorPtr grid = tensor::rand_uniform({2, C, 2, 3}, rng);
        std::vector<double> eye(static_cast<std::size_t>(C * C), 0.0);
        for (std::int64_t i = 0; i < C; ++i) eye[i * C + i] = 1.0;
        TensorPtr w = tensor::from_data({C, C}, eye);
        TensorPtr b = tensor::zeros({C});
        TensorPtr rt = inverse_tokenize(tokenize(grid, w, b), w, b, {2, 2, 3});
        CHECK(rt->data == grid->data);
    }
}

TEST_SUITE("decode") {
    TEST_CASE("output dims are exactly (T,3,H,W)") {
        Rng rng(78);
        ModelConfig cfg = tiny_model();
        ModelParams params = init_model_params(cfg, 3);
        TensorPtr grid = tensor::rand_uniform({2, cfg.channels, 4, 4}, rng);
        TensorPtr out = decode(grid, params, cfg);
        CHECK(out->shape == Shape{2, 3, 16, 16});
    }

    TEST_CASE("zero final-layer weights give 0.5 everywhere") {
        Rng rng(79);
        ModelConfig cfg = tiny_model();
        ModelParams params = init_model_params(cfg, 3);
        params.dec2_w = tensor::zeros({3, cfg.channels, 3, 3}, true);
        params.dec2_b = tensor::zeros({3}, true);
        TensorPtr grid = tensor::rand_uniform({1, cfg.channels, 2, 2}, rng);
        TensorPtr out = decode(grid, params, cfg);
        for (double v : out->data) CHECK(v == doctest::Approx(0.5));
    }

    TEST_CASE("gradient flows through decode") {
        ModelConfig cfg = tiny_model();
        cfg.channels = 2;
        ModelParams params = init_model_params(cfg, 4);
        Rng rng(80);
        TensorPtr grid = tensor::rand_uniform({1, 2, 2, 2}, rng, -1.0, 1.0);
        ParamSet pset;
        pset["dec1.w"] = params.dec1_w;
        pset["dec1.b"] = params.dec1_b;
        pset["dec2.w"] = params.dec2_w;
        pset["dec2.b"] = params.dec2_b;
        auto f = [&](const ParamSet&) { return mean(decode(grid, params, cfg)); };
        FiniteDiffReport report = finite_diff_check(f, pset);
        CHECK(report.checked > 0);
        CHECK(report.max_rel_err < 1e-5);
    }
}

TEST_SUITE("compose_output") {
    TEST_CASE("all-valid returns the input unchanged") {
        Rng rng(81);
        FrameSequence input = random_frames(rng, 1, 4, 4);
        FrameSequence raw = random_frames(rng, 1, 4, 4);
        FrameSequence out = compose_output(raw, input, {MaskMap(4, 4, 1)});
        CHECK(out.data->data == input.data->data);
    }

    TEST_CASE("all-invalid returns the raw output unchanged") {
        Rng rng(82);
        FrameSequence input = random_frames(rng, 1, 4, 4);
        FrameSequence raw = random_frames(rng, 1, 4, 4);
        FrameSequence out = compose_output(raw, input, {MaskMap(4, 4, 0)});
        CHECK(out.data->data == raw.data->data);
    }

    TEST_CASE("checkerboard mask merges pixelwise") {
        Rng rng(83);
        FrameSequence input = random_frames(rng, 1, 4, 4);
        FrameSequence raw = random_frames(rng, 1, 4, 4);
        MaskMap m(4, 4, 0);
        for (std::int64_t y = 0; y < 4; ++y)
            for (std::int64_t x = 0; x < 4; ++x) m.set(y, x, (y + x) % 2);
        FrameSequence out = compose_output(raw, input, {m});
        for (std::int64_t c = 0; c < 3; ++c)
            for (std::int64_t y = 0; y < 4; ++y)
                for (std::int64_t x = 0; x < 4; ++x) {
                    const double expect = m.at(y, x) ? input.data->data[(c * 4 + y) * 4 + x]
                                                     : raw.data->data[(c * 4 + y) * 4 + x];
                    CHECK(out.data->data[(c * 4 + y) * 4 + x] == expect);
                }
    }
}

TEST_SUITE("forward") {
    TEST_CASE("all-valid mask composes back to the exact input") {
        Rng rng(84);
        ModelConfig cfg = tiny_model();
        ModelParams params = init_model_params(cfg, 5);
        FrameSequence frames = random_frames(rng, 2, 8, 8);
        MaskSequence masks{MaskMap(8, 8, 1), MaskMap(8, 8, 1)};
        ForwardResult out = forward(frames, masks, params, cfg);
        CHECK(out.composed.data->data == frames.data->data);
    }

    TEST_CASE("composed output equals input bitwise at valid pixels") {
        Rng rng(85);
        ModelConfig cfg = tiny_model();
        ModelParams params = init_model_params(cfg, 6);
        FrameSequence frames = random_frames(rng, 1, 8, 8);
        MaskSequence masks = random_masks(rng, 1, 8, 8, 0.7);
        ForwardResult out = forward(frames, masks, params, cfg);
        for (std::int64_t c = 0; c < 3; ++c)
            for (std::int64_t i = 0; i < 64; ++i) {
                if (masks[0].v[static_cast<std::size_t>(i)]) {
                    CHECK(out.composed.data->data[c * 64 + i] == frames.data->data[c * 64 + i]);
                }
            }
    }

    TEST_CASE("forward is deterministic") {
        Rng rng(86);
        ModelConfig cfg = tiny_model();
        ModelParams params = init_model_params(cfg, 7);
        FrameSequence frames = random_frames(rng, 1, 8, 8);
        MaskSequence masks = random_masks(rng, 1, 8, 8, 0.5);
        ForwardResult a = forward(frames, masks, params, cfg);
        ForwardResult b = forward(frames, masks, params, cfg);
        CHECK(a.raw->data == b.raw->data);
    }

    TEST_CASE("untrained params still produce finite in-range output with varying holes") {
        Rng rng(87);
        ModelConfig cfg = tiny_model();
        ModelParams params = init_model_params(cfg, 8);
        FrameSequence frames = random_frames(rng, 1, 16, 16);
        MaskMap m = gen_stationary_mask(16, 16, 0.25, 0);
        ForwardResult out = forward(frames, {m}, params, cfg);
        double lo = 2.0, hi = -1.0;
        for (std::int64_t c = 0; c < 3; ++c)
            for (std::int64_t i = 0; i < 256; ++i) {
                if (m.v[static_cast<std::size_t>(i)]) continue;
                const double v = out.composed.data->data[c * 256 + i];
                CHECK(std::isfinite(v));
                CHECK(v >= 0.0);
                CHECK(v <= 1.0);
                lo = std::min(lo, v);
                hi = std::max(hi, v);
            }
        CHECK(hi > lo); // holes are filled with non-constant values
    }

    TEST_CASE("trace and per-layer masks are captured on request") {
        Rng rng(88);
        ModelConfig cfg = tiny_model();
        ModelParams params = init_model_params(cfg, 9);
        FrameSequence frames = random_frames(rng, 1, 8, 8);
        MaskSequence masks = random_masks(rng, 1, 8, 8, 0.4);
        ForwardResult out = forward(frames, masks, params, cfg, true, true);
        CHECK(out.trace.size() == static_cast<std::size_t>(cfg.layers));
        CHECK(out.layer_masks.size() == static_cast<std::size_t>(cfg.layers));
        CHECK(out.stats.size() == static_cast<std::size_t>(cfg.layers));
        CHECK(out.trace[0].features->shape == Shape{1, cfg.width, 2, 2});
    }
}

TEST_SUITE("checkpoint") {
    TEST_CASE("save, load, save is byte-identical and value-exact") {
        ModelConfig cfg = tiny_model();
        ModelParams params = init_model_params(cfg, 10);
        save_checkpoint(params, cfg, kTmp);
        auto [loaded, cfg2] = load_checkpoint(kTmp);
        CHECK(cfg2.same_architecture(cfg));
        CHECK(loaded.tok_w->data == params.tok_w->data);
        CHECK(loaded.layers[1].rfc_dw_w->data == params.layers[1].rfc_dw_w->data);

        const std::string second = kTmp + ".again";
        save_checkpoint(loaded, cfg2, second);
        std::ifstream f1(kTmp, std::ios::binary), f2(second, std::ios::binary);
        std::string b1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
        std::string b2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
        CHECK(b1 == b2);
        std::remove(second.c_str());
    }

    TEST_CASE("corrupted magic is rejected as BadMagic") {
        ModelConfig cfg = tiny_model();
        ModelParams params = init_model_params(cfg, 11);
        save_checkpoint(params, cfg, kTmp);
        std::fstream f(kTmp, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(0);
        f.write("XXXX", 4);
        f.close();
        try {
            load_checkpoint(kTmp);
            FAIL("expected CheckpointError");
        } catch (const CheckpointError& e) {
            CHECK(e.fault() == CheckpointFault::BadMagic);
        }
    }

    TEST_CASE("version mismatch is rejected as BadVersion") {
        ModelConfig cfg = tiny_model();
        ModelParams params = init_model_params(cfg, 12);
        save_checkpoint(params, cfg, kTmp);
        std::fstream f(kTmp, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(4);
        const char bytes[4] = {char(0xff), 0, 0, 0};
        f.write(bytes, 4);
        f.close();
        try {
            load_checkpoint(kTmp);
            FAIL("expected CheckpointError");
        } catch (const CheckpointError& e) {
            CHECK(e.fault() == CheckpointFault::BadVersion);
        }
    }

    TEST_CASE("truncated file is rejected as Truncated") {
        ModelConfig cfg = tiny_model();
        ModelParams params = init_model_params(cfg, 13);
        save_checkpoint(params, cfg, kTmp);
        std::ifstream in(kTmp, std::ios::binary);
        std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        in.close();
        std::ofstream out(kTmp, std::ios::binary | std::ios::trunc);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
        out.close();
        try {
            load_checkpoint(kTmp);
            FAIL("expected CheckpointError");
        } catch (const CheckpointError& e) {
            CHECK(e.fault() == CheckpointFault::Truncated);
        }
    }

    TEST_CASE("config-mismatched tensors are rejected naming the tensor") {
        ModelConfig cfg = tiny_model();
        ModelParams params = init_model_params(cfg, 14);
        // widen one tensor so it no longer matches the stored config
        params.tok_w = tensor::zeros({cfg.channels, cfg.width + 1}, true);
        save_checkpoint(params, cfg, kTmp);
        try {
            load_checkpoint(kTmp);
            FAIL("expected CheckpointError");
        } catch (const CheckpointError& e) {
            CHECK(e.fault() == CheckpointFault::ShapeMismatch);
            CHECK(std::string(e.what()).find("tok.w") != std::string::npos);
        }
        std::remove(kTmp.c_str());
    }
}
