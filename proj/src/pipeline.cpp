// SPDX-License-Identifier: Apache-2.0
#include "dmt/pipeline.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <map>

namespace dmt {

FrameSequence::FrameSequence(const TensorPtr& frames) {
    if (!frames || frames->rank() != 4 || frames->dim(1) != 3) {
        throw ShapeError("FrameSequence: expected [T,3,H,W]");
    }
    if (frames->dim(0) < 1) throw ShapeError("FrameSequence: T must be >= 1");
    std::vector<double> d = frames->data;
    for (double& x : d) x = std::clamp(x, 0.0, 1.0);
    data = tensor::from_data(frames->shape, std::move(d));
}

void ModelConfig::validate() const {
    if (channels < 1) throw ConfigError("ModelConfig: C must be >= 1");
    DmtConfig probe = dmt_for({1, 8, 8});
    (void)probe;
    if (width % heads != 0) throw ConfigError("ModelConfig: d must be divisible by heads");
    if (rfc_kernel % 2 == 0) throw ConfigError("ModelConfig: K must be odd");
}

DmtConfig ModelConfig::dmt_for(const GridDims& grid) const {
    DmtConfig cfg;
    cfg.layers = layers;
    cfg.width = width;
    cfg.heads = heads;
    cfg.ffn_hidden = ffn_hidden;
    cfg.rfc_kernel = rfc_kernel;
    cfg.warp = warp;
    cfg.grid = grid;
    cfg.token_selection = token_selection;
    cfg.mask_activation = mask_activation;
    cfg.use_rfc = use_rfc;
    return cfg;
}

bool ModelConfig::same_architecture(const ModelConfig& o) const {
    return channels == o.channels && width == o.width && layers == o.layers &&
           heads == o.heads && ffn_hidden == o.ffn_hidden && rfc_kernel == o.rfc_kernel &&
           warp.kernel == o.warp.kernel && warp.stride == o.warp.stride &&
           warp.padding == o.warp.padding;
}

ParamSet ModelParams::param_set() {
    ParamSet out;
    visit([&out](const std::string& name, TensorPtr& t) { out[name] = t; });
    return out;
}

void ModelParams::set_requires_grad(bool on) {
    visit([on](const std::string&, TensorPtr& t) {
        t->requires_grad = on;
        if (!on) t->zero_grad();
    });
}

namespace {

TensorPtr kaiming(Shape shape, std::int64_t fan_in, Rng& rng, bool requires_grad) {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    return tensor::rand_uniform(std::move(shape), rng, -bound, bound, requires_grad);
}

} // namespace

ModelParams init_model_params(const ModelConfig& cfg, std::uint64_t seed, bool requires_grad) {
    cfg.validate();
    Rng rng(Rng::splitmix(seed));
    const std::int64_t C = cfg.channels, d = cfg.width;
    ModelParams p;
    p.enc1_w = kaiming({C, 4, 3, 3}, 4 * 9, rng, requires_grad);
    p.enc1_b = tensor::zeros({C}, requires_grad);
    p.enc2_w = kaiming({C, C, 3, 3}, C * 9, rng, requires_grad);
    p.enc2_b = tensor::zeros({C}, requires_grad);
    p.tok_w = kaiming({C, d}, C, rng, requires_grad);
    p.tok_b = tensor::zeros({d}, requires_grad);
    DmtConfig layer_cfg = cfg.dmt_for({1, 8, 8});
    for (std::int64_t l = 0; l < cfg.layers; ++l) {
        p.layers.push_back(init_dmt_layer_params(layer_cfg, rng, requires_grad));
    }
    p.itok_w = kaiming({d, C}, d, rng, requires_grad);
    p.itok_b = tensor::zeros({C}, requires_grad);
    p.dec1_w = kaiming({C, C, 3, 3}, C * 9, rng, requires_grad);
    p.dec1_b = tensor::zeros({C}, requires_grad);
    p.dec2_w = kaiming({3, C, 3, 3}, C * 9, rng, requires_grad);
    p.dec2_b = tensor::zeros({3}, requires_grad);
    return p;
}

TensorPtr encode(const FrameSequence& frames, const MaskSequence& masks, const ModelParams& params,
                 const ModelConfig& cfg) {
    (void)cfg;
    const std::int64_t T = frames.frames(), H = frames.height(), W = frames.width();
    if (static_cast<std::int64_t>(masks.size()) != T) {
        throw ShapeError("encode: mask count does not match frame count");
    }
    if (H % kDownscaleFactor != 0 || W % kDownscaleFactor != 0) {
        throw ShapeError("encode: H and W must be divisible by 4");
    }
    TensorPtr mask_t = masks_to_tensor(masks);
    if (mask_t->dim(2) != H || mask_t->dim(3) != W) {
        throw ShapeError("encode: mask resolution does not match frames");
    }

    // hole pixels zeroed; validity map appended as a fourth channel
    TensorPtr masked = mul_mask_channels(frames.data, mask_t);
    std::vector<double> enc_in(static_cast<std::size_t>(T * 4 * H * W));
    const std::int64_t plane = H * W;
    for (std::int64_t t = 0; t < T; ++t) {
        for (std::int64_t c = 0; c < 3; ++c) {
            std::copy_n(masked->data.data() + (t * 3 + c) * plane, plane,
                        enc_in.data() + (t * 4 + c) * plane);
        }
        std::copy_n(mask_t->data.data() + t * plane, plane, enc_in.data() + (t * 4 + 3) * plane);
    }
    TensorPtr x = tensor::from_data({T, 4, H, W}, std::move(enc_in));

    const SlidingWindowSpec stride2{3, 2, 1};
    TensorPtr h1 = gelu(conv2d(x, params.enc1_w, params.enc1_b, stride2));
    return gelu(conv2d(h1, params.enc2_w, params.enc2_b, stride2));
}

TensorPtr tokenize(const TensorPtr& grid, const TensorPtr& weight, const TensorPtr& bias) {
    if (grid->rank() != 4) throw ShapeError("tokenize: [T,C,Hg,Wg] required");
    return add_bias_rows(matmul(grid_to_rows(grid), weight), bias);
}

TensorPtr inverse_tokenize(const TensorPtr& tokens, const TensorPtr& weight, const TensorPtr& bias,
                           const GridDims& grid) {
    TensorPtr rows = add_bias_rows(matmul(tokens, weight), bias);
    return rows_to_grid(rows, grid.frames, grid.h, grid.w);
}

TensorPtr decode(const TensorPtr& grid, const ModelParams& params, const ModelConfig& cfg) {
    (void)cfg;
    const SlidingWindowSpec same{3, 1, 1};
    TensorPtr h = gelu(conv2d(upsample_nn2x(grid), params.dec1_w, params.dec1_b, same));
    return sigmoid(conv2d(upsample_nn2x(h), params.dec2_w, params.dec2_b, same));
}

FrameSequence compose_output(const FrameSequence& raw, const FrameSequence& input,
                             const MaskSequence& masks) {
    if (raw.data->shape != input.data->shape) {
        throw ShapeError("compose_output: raw/input shape mismatch");
    }
    const std::int64_t T = input.frames(), H = input.height(), W = input.width();
    if (static_cast<std::int64_t>(masks.size()) != T) {
        throw ShapeError("compose_output: mask count mismatch");
    }
    std::vector<double> out(input.data->data.size());
    const std::int64_t plane = H * W;
    for (std::int64_t t = 0; t < T; ++t) {
        const MaskMap& m = masks[static_cast<std::size_t>(t)];
        if (m.h != H || m.w != W) throw ShapeError("compose_output: mask resolution mismatch");
        for (std::int64_t c = 0; c < 3; ++c) {
            const std::int64_t base = (t * 3 + c) * plane;
            for (std::int64_t i = 0; i < plane; ++i) {
                out[base + i] = m.v[static_cast<std::size_t>(i)] ? input.data->data[base + i]
                                                                 : raw.data->data[base + i];
            }
        }
    }
    FrameSequence result;
    result.data = tensor::from_data(input.data->shape, std::move(out));
    return result;
}

ForwardResult forward(const FrameSequence& frames, const MaskSequence& masks, ModelParams& params,
                      const ModelConfig& cfg, bool record_trace, bool record_stats) {
    cfg.validate();
    const std::int64_t T = frames.frames(), H = frames.height(), W = frames.width();
    TensorPtr enc = encode(frames, masks, params, cfg);
    const GridDims grid{T, H / kDownscaleFactor, W / kDownscaleFactor};

    MaskSequence grid_masks;
    grid_masks.reserve(masks.size());
    for (const auto& m : masks) grid_masks.push_back(downscale_mask(m, kDownscaleFactor));

    TensorPtr tokens = tokenize(enc, params.tok_w, params.tok_b);
    TensorPtr token_grid = rows_to_grid(tokens, grid.frames, grid.h, grid.w);
    if (cfg.token_selection) {
        token_grid = mul_mask_channels(token_grid, masks_to_tensor(grid_masks));
    }

    DmtConfig dmt_cfg = cfg.dmt_for(grid);
    StackResult stack = dmt_stack(LayerState{token_grid, grid_masks, 0}, params.layers, dmt_cfg,
                                  record_trace, record_stats);

    TensorPtr inv = inverse_tokenize(grid_to_rows(stack.final_state.grid), params.itok_w,
                                     params.itok_b, grid);
    TensorPtr raw = decode(inv, params, cfg);

    ForwardResult result;
    result.raw = raw;
    FrameSequence raw_seq;
    raw_seq.data = raw;
    result.composed = compose_output(raw_seq, frames, masks);
    result.trace = std::move(stack.trace);
    for (const auto& entry : result.trace) result.layer_masks.push_back(entry.mask);
    result.stats = std::move(stack.stats);
    return result;
}

// ---- checkpoint I/O -----------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'D', 'M', 'T', 'C'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f64(std::string& out, double v) { put_u64(out, std::bit_cast<std::uint64_t>(v)); }

class Reader {
public:
    Reader(const std::string& bytes) : bytes_(bytes) {}

    void need(std::size_t n) {
        if (pos_ + n > bytes_.size()) {
            throw CheckpointError(CheckpointFault::Truncated,
                                  "checkpoint truncated at byte " + std::to_string(pos_));
        }
    }

    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) {
            v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
        }
        pos_ += 4;
        return v;
    }

    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) {
            v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
        }
        pos_ += 8;
        return v;
    }

    double f64() { return std::bit_cast<double>(u64()); }

    std::string str(std::size_t n) {
        need(n);
        std::string s = bytes_.substr(pos_, n);
        pos_ += n;
        return s;
    }

    bool exhausted() const { return pos_ == bytes_.size(); }

private:
    const std::string& bytes_;
    std::size_t pos_ = 0;
};

} // namespace

void save_checkpoint(ModelParams& params, const ModelConfig& cfg, const std::string& path) {
    std::string out;
    out.append(kMagic, 4);
    put_u32(out, kVersion);
    put_u64(out, static_cast<std::uint64_t>(cfg.channels));
    put_u64(out, static_cast<std::uint64_t>(cfg.width));
    put_u64(out, static_cast<std::uint64_t>(cfg.layers));
    put_u64(out, static_cast<std::uint64_t>(cfg.heads));
    put_u64(out, static_cast<std::uint64_t>(cfg.ffn_hidden));
    put_u64(out, static_cast<std::uint64_t>(cfg.rfc_kernel));
    put_u64(out, static_cast<std::uint64_t>(cfg.warp.kernel));
    put_u64(out, static_cast<std::uint64_t>(cfg.warp.stride));
    put_u64(out, static_cast<std::uint64_t>(cfg.warp.padding));
    out.push_back(cfg.token_selection ? 1 : 0);
    out.push_back(cfg.mask_activation ? 1 : 0);
    out.push_back(cfg.use_rfc ? 1 : 0);

    std::uint64_t count = 0;
    params.visit([&count](const std::string&, TensorPtr&) { ++count; });
    put_u64(out, count);
    params.visit([&out](const std::string& name, TensorPtr& t) {
        put_u32(out, static_cast<std::uint32_t>(name.size()));
        out.append(name);
        put_u32(out, static_cast<std::uint32_t>(t->rank()));
        for (std::int64_t dim : t->shape) put_u64(out, static_cast<std::uint64_t>(dim));
        for (double v : t->data) put_f64(out, v);
    });

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("save_checkpoint: cannot open " + path + " for writing");
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw IoError("save_checkpoint: short write to " + path);
}

std::pair<ModelParams, ModelConfig> load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("load_checkpoint: cannot open " + path);
    std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

    Reader r(bytes);
    const std::string magic = r.str(4);
    if (std::memcmp(magic.data(), kMagic, 4) != 0) {
        throw CheckpointError(CheckpointFault::BadMagic, "bad checkpoint magic in " + path);
    }
    const std::uint32_t version = r.u32();
    if (version != kVersion) {
        throw CheckpointError(CheckpointFault::BadVersion,
                              "unsupported checkpoint version " + std::to_string(version));
    }
    ModelConfig cfg;
    cfg.channels = static_cast<std::int64_t>(r.u64());
    cfg.width = static_cast<std::int64_t>(r.u64());
    cfg.layers = static_cast<std::int64_t>(r.u64());
    cfg.heads = static_cast<std::int64_t>(r.u64());
    cfg.ffn_hidden = static_cast<std::int64_t>(r.u64());
    cfg.rfc_kernel = static_cast<std::int64_t>(r.u64());
    cfg.warp.kernel = static_cast<std::int64_t>(r.u64());
    cfg.warp.stride = static_cast<std::int64_t>(r.u64());
    cfg.warp.padding = static_cast<std::int64_t>(r.u64());
    cfg.token_selection = r.str(1)[0] != 0;
    cfg.mask_activation = r.str(1)[0] != 0;
    cfg.use_rfc = r.str(1)[0] != 0;
    try {
        cfg.validate();
    } catch (const Error& e) {
        throw CheckpointError(CheckpointFault::Malformed,
                              std::string("invalid checkpoint config: ") + e.what());
    }

    const std::uint64_t count = r.u64();
    std::map<std::string, std::pair<Shape, std::vector<double>>> records;
    for (std::uint64_t i = 0; i < count; ++i) {
        const std::uint32_t name_len = r.u32();
        const std::string name = r.str(name_len);
        const std::uint32_t rank = r.u32();
        if (rank > 8) {
            throw CheckpointError(CheckpointFault::Malformed,
                                  "implausible tensor rank for " + name);
        }
        Shape shape;
        for (std::uint32_t k = 0; k < rank; ++k) {
            shape.push_back(static_cast<std::int64_t>(r.u64()));
        }
        const std::int64_t n = numel(shape);
        std::vector<double> data(static_cast<std::size_t>(n));
        r.need(static_cast<std::size_t>(n) * 8);
        for (std::int64_t k = 0; k < n; ++k) data[static_cast<std::size_t>(k)] = r.f64();
        if (!records.emplace(name, std::make_pair(std::move(shape), std::move(data))).second) {
            throw CheckpointError(CheckpointFault::Malformed, "duplicate tensor " + name);
        }
    }
    if (!r.exhausted()) {
        throw CheckpointError(CheckpointFault::Malformed, "trailing bytes after tensor records");
    }

    // shapes implied by the config; mismatches name the offending tensor
    ModelParams params = init_model_params(cfg, 0, true);
    params.visit([&records](const std::string& name, TensorPtr& t) {
        auto it = records.find(name);
        if (it == records.end()) {
            throw CheckpointError(CheckpointFault::ShapeMismatch,
                                  "checkpoint is missing tensor " + name);
        }
        if (it->second.first != t->shape) {
            throw CheckpointError(CheckpointFault::ShapeMismatch,
                                  "tensor " + name + " has shape " + shape_str(it->second.first) +
                                      " but the config requires " + shape_str(t->shape));
        }
        detail::check_finite(it->second.second, "load_checkpoint");
        t = tensor::from_data(t->shape, std::move(it->second.second), true);
        records.erase(it);
    });
    if (!records.empty()) {
        throw CheckpointError(CheckpointFault::ShapeMismatch,
                              "checkpoint contains unexpected tensor " + records.begin()->first);
    }
    return {std::move(params), cfg};
}

} // namespace dmt
