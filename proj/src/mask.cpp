// SPDX-License-Identifier: Apache-2.0
#include "dmt/mask.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace dmt {

MaskMap::MaskMap(std::int64_t height, std::int64_t width, std::uint8_t fill)
    : h(height), w(width), v(static_cast<std::size_t>(height * width), fill ? 1 : 0) {
    if (height < 1 || width < 1) throw ShapeError("MaskMap: dimensions must be positive");
}

std::int64_t MaskMap::count_valid() const {
    std::int64_t n = 0;
    for (std::uint8_t b : v) n += b;
    return n;
}

TensorPtr MaskMap::to_tensor() const {
    std::vector<double> d(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) d[i] = v[i] ? 1.0 : 0.0;
    return tensor::from_data({1, 1, h, w}, std::move(d));
}

TensorPtr masks_to_tensor(const MaskSequence& masks) {
    if (masks.empty()) throw ShapeError("masks_to_tensor: empty sequence");
    const std::int64_t T = static_cast<std::int64_t>(masks.size());
    const std::int64_t h = masks[0].h, w = masks[0].w;
    std::vector<double> d(static_cast<std::size_t>(T * h * w));
    for (std::int64_t t = 0; t < T; ++t) {
        if (masks[t].h != h || masks[t].w != w) {
            throw ShapeError("masks_to_tensor: frame masks must share one shape");
        }
        for (std::int64_t i = 0; i < h * w; ++i) {
            d[t * h * w + i] = masks[t].v[i] ? 1.0 : 0.0;
        }
    }
    return tensor::from_data({T, 1, h, w}, std::move(d));
}

double validity_fraction(const MaskMap& m) {
    if (m.size() == 0) throw ShapeError("validity_fraction: empty mask");
    return static_cast<double>(m.count_valid()) / static_cast<double>(m.size());
}

double validity_fraction(const MaskSequence& masks) {
    std::int64_t valid = 0, total = 0;
    for (const auto& m : masks) {
        valid += m.count_valid();
        total += m.size();
    }
    if (total == 0) throw ShapeError("validity_fraction: empty sequence");
    return static_cast<double>(valid) / static_cast<double>(total);
}

MaskMap downscale_mask(const MaskMap& m, std::int64_t factor) {
    if (factor < 1) throw ShapeError("downscale_mask: factor must be >= 1");
    if (m.h % factor != 0 || m.w % factor != 0) {
        throw ShapeError("downscale_mask: dimensions " + std::to_string(m.h) + "x" +
                         std::to_string(m.w) + " not divisible by factor " +
                         std::to_string(factor));
    }
    MaskMap out(m.h / factor, m.w / factor, 0);
    for (std::int64_t y = 0; y < m.h; ++y) {
        for (std::int64_t x = 0; x < m.w; ++x) {
            if (m.at(y, x)) out.set(y / factor, x / factor, 1);
        }
    }
    return out;
}

std::vector<std::int64_t> TokenBatch::flat_rows() const {
    std::vector<std::int64_t> rows;
    rows.reserve(index_map.size());
    for (const auto& g : index_map) {
        rows.push_back((g.t * grid_h + g.y) * grid_w + g.x);
    }
    return rows;
}

TokenBatch token_select(const TensorPtr& features, const MaskSequence& grid_masks) {
    if (features->rank() != 2) throw ShapeError("token_select: features must be [N,d]");
    if (grid_masks.empty()) throw ShapeError("token_select: no masks");
    const std::int64_t T = static_cast<std::int64_t>(grid_masks.size());
    const std::int64_t Hg = grid_masks[0].h, Wg = grid_masks[0].w;
    const std::int64_t N = T * Hg * Wg;
    if (features->dim(0) != N) {
        throw ShapeError("token_select: feature rows " + std::to_string(features->dim(0)) +
                         " do not match grid cell count " + std::to_string(N));
    }

    TokenBatch batch;
    batch.frames = T;
    batch.grid_h = Hg;
    batch.grid_w = Wg;
    batch.width = features->dim(1);
    std::vector<std::int64_t> rows;
    for (std::int64_t t = 0; t < T; ++t) {
        const MaskMap& m = grid_masks[static_cast<std::size_t>(t)];
        if (m.h != Hg || m.w != Wg) throw ShapeError("token_select: mask shapes disagree");
        for (std::int64_t y = 0; y < Hg; ++y) {
            for (std::int64_t x = 0; x < Wg; ++x) {
                if (m.at(y, x)) {
                    batch.index_map.push_back({t, y, x});
                    rows.push_back((t * Hg + y) * Wg + x);
                }
            }
        }
    }
    batch.tokens = gather_rows(features, rows);
    return batch;
}

TensorPtr token_scatter(const TokenBatch& batch) {
    if (!batch.tokens) throw ShapeError("token_scatter: batch has no tokens");
    TensorPtr rows = scatter_rows(batch.tokens, batch.flat_rows(), batch.grid_cells());
    return rows_to_grid(rows, batch.frames, batch.grid_h, batch.grid_w);
}

MaskMap mask_update(const MaskMap& m, const SlidingWindowSpec& spec) {
    spec.validate(m.h, m.w);
    NoGradGuard no_grad;
    TensorPtr cols = unfold(m.to_tensor(), spec);
    const std::int64_t rows = cols->dim(0), n = cols->dim(1);
    std::vector<double> renorm(cols->data.size(), 0.0);
    for (std::int64_t c = 0; c < n; ++c) {
        double s = 0.0;
        for (std::int64_t r = 0; r < rows; ++r) s += cols->data[r * n + c];
        if (s > 0.0) {
            for (std::int64_t r = 0; r < rows; ++r) renorm[r * n + c] = 1.0;
        }
    }
    TensorPtr folded = fold(tensor::from_data(cols->shape, std::move(renorm)), spec, 1, m.h, m.w);
    MaskMap out(m.h, m.w, 0);
    for (std::int64_t i = 0; i < m.size(); ++i) {
        out.v[static_cast<std::size_t>(i)] = folded->data[static_cast<std::size_t>(i)] > 0.0 ? 1 : 0;
    }
    return out;
}

MaskSequence mask_update(const MaskSequence& masks, const SlidingWindowSpec& spec) {
    MaskSequence out;
    out.reserve(masks.size());
    for (const auto& m : masks) out.push_back(mask_update(m, spec));
    return out;
}

namespace {

void stamp_square(MaskMap& m, double cy, double cx, std::int64_t radius) {
    const std::int64_t y0 = std::max<std::int64_t>(0, static_cast<std::int64_t>(cy) - radius);
    const std::int64_t y1 = std::min(m.h - 1, static_cast<std::int64_t>(cy) + radius);
    const std::int64_t x0 = std::max<std::int64_t>(0, static_cast<std::int64_t>(cx) - radius);
    const std::int64_t x1 = std::min(m.w - 1, static_cast<std::int64_t>(cx) + radius);
    for (std::int64_t y = y0; y <= y1; ++y) {
        for (std::int64_t x = x0; x <= x1; ++x) m.set(y, x, 0);
    }
}

void draw_stroke(MaskMap& m, Rng& rng, std::int64_t thickness) {
    double y = rng.uniform(0.0, static_cast<double>(m.h));
    double x = rng.uniform(0.0, static_cast<double>(m.w));
    double angle = rng.uniform(0.0, 6.283185307179586);
    const std::int64_t steps = 4 + rng.uniform_int(0, 10);
    const double step_len = std::max<double>(1.0, static_cast<double>(m.h) / 16.0);
    const std::int64_t radius = std::max<std::int64_t>(1, thickness / 2);
    for (std::int64_t i = 0; i < steps; ++i) {
        stamp_square(m, y, x, radius);
        angle += rng.uniform(-0.8, 0.8);
        y += step_len * std::sin(angle);
        x += step_len * std::cos(angle);
        y = std::clamp(y, 0.0, static_cast<double>(m.h - 1));
        x = std::clamp(x, 0.0, static_cast<double>(m.w - 1));
    }
}

} // namespace

MaskMap gen_freeform_mask(std::int64_t h, std::int64_t w, double target_invalid_ratio,
                          std::uint64_t seed) {
    if (target_invalid_ratio == 0.0) return MaskMap(h, w, 1);
    if (!(target_invalid_ratio > 0.0 && target_invalid_ratio <= 0.95)) {
        throw ValueError("gen_freeform_mask: target ratio must be 0 or in (0, 0.95]");
    }
    const double lo = target_invalid_ratio - 0.03;
    const double hi = target_invalid_ratio + 0.03;
    const std::int64_t max_thickness = std::max<std::int64_t>(2, h / 8);
    constexpr int kMaxAttempts = 1000;

    for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
        Rng rng(Rng::splitmix(seed ^ (0xa0761d64ULL + 0x9e3779b97f4a7c15ULL *
                                                          static_cast<std::uint64_t>(attempt))));
        MaskMap m(h, w, 1);
        const std::int64_t broad_strokes = 1 + rng.uniform_int(0, 5);
        bool overshoot = false;
        for (std::int64_t s = 0; s < 256 && !overshoot; ++s) {
            // broad strokes first, thin touch-up strokes near the target
            const std::int64_t thickness =
                s < broad_strokes ? rng.uniform_int(2, max_thickness) : 2;
            draw_stroke(m, rng, thickness);
            const double invalid = 1.0 - validity_fraction(m);
            if (invalid > hi) {
                overshoot = true;
            } else if (invalid >= lo) {
                return m;
            }
        }
    }
    throw ValueError("gen_freeform_mask: could not reach invalid ratio " +
                     std::to_string(target_invalid_ratio) + " within bounded attempts");
}

MaskMap gen_stationary_mask(std::int64_t h, std::int64_t w, double rect_fraction,
                            std::uint64_t /*seed*/) {
    if (!(rect_fraction > 0.0 && rect_fraction <= 1.0)) {
        throw ValueError("gen_stationary_mask: fraction must be in (0, 1]");
    }
    const double side = std::sqrt(rect_fraction);
    const std::int64_t rh = std::clamp<std::int64_t>(std::llround(side * static_cast<double>(h)),
                                                     1, h);
    const std::int64_t rw = std::clamp<std::int64_t>(std::llround(side * static_cast<double>(w)),
                                                     1, w);
    MaskMap m(h, w, 1);
    const std::int64_t y0 = (h - rh) / 2;
    const std::int64_t x0 = (w - rw) / 2;
    for (std::int64_t y = y0; y < y0 + rh; ++y) {
        for (std::int64_t x = x0; x < x0 + rw; ++x) m.set(y, x, 0);
    }
    return m;
}

} // namespace dmt
