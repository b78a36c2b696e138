// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

#include "dmt/ops.hpp"
#include "dmt/tensor.hpp"

namespace dmt {

// Binary validity grid; 1 = valid (unmasked) pixel, 0 = hole.
struct MaskMap {
    std::int64_t h = 0;
    std::int64_t w = 0;
    std::vector<std::uint8_t> v;

    MaskMap() = default;
    MaskMap(std::int64_t height, std::int64_t width, std::uint8_t fill = 1);

    std::uint8_t at(std::int64_t y, std::int64_t x) const { return v[y * w + x]; }
    void set(std::int64_t y, std::int64_t x, std::uint8_t val) { v[y * w + x] = val ? 1 : 0; }
    std::int64_t count_valid() const;
    std::int64_t size() const { return h * w; }

    bool operator==(const MaskMap& o) const { return h == o.h && w == o.w && v == o.v; }

    /// [1,1,h,w] float tensor view (untracked), values 0/1.
    TensorPtr to_tensor() const;
};

/// Frame-wise masks sharing one H x W.
using MaskSequence = std::vector<MaskMap>;

/// Stacks per-frame masks into a [T,1,H,W] tensor (untracked).
TensorPtr masks_to_tensor(const MaskSequence& masks);

/// 1(m)/|m| : share of valid cells.
double validity_fraction(const MaskMap& m);
double validity_fraction(const MaskSequence& masks);

/// Any-valid pooling: an output cell is valid iff any pixel of its f x f
/// source block is valid. H and W must be divisible by `factor`.
MaskMap downscale_mask(const MaskMap& m, std::int64_t factor);

struct GridIndex {
    std::int64_t t = 0, y = 0, x = 0;
    bool operator==(const GridIndex& o) const { return t == o.t && y == o.y && x == o.x; }
};

// Valid-only token matrix plus the index map back to the grid.
struct TokenBatch {
    TensorPtr tokens; // [N', d]
    std::vector<GridIndex> index_map;
    std::int64_t frames = 0, grid_h = 0, grid_w = 0;
    std::int64_t width = 0; // d

    std::int64_t count() const { return static_cast<std::int64_t>(index_map.size()); }
    std::int64_t grid_cells() const { return frames * grid_h * grid_w; }
    /// Flat row indices t*Hg*Wg + y*Wg + x for gather/scatter.
    std::vector<std::int64_t> flat_rows() const;
};

/// Gathers rows of F ([N,d], N = T*Hg*Wg) whose grid cell is valid,
/// raster-then-frame order.
TokenBatch token_select(const TensorPtr& features, const MaskSequence& grid_masks);

/// Inverse of selection: valid cells carry their token features, invalid
/// cells are exactly zero. Returns [T,d,Hg,Wg].
TensorPtr token_scatter(const TokenBatch& batch);

/// Mask Activation: unfold with `spec`, set every column with a positive sum
/// to all-ones, overlap-add fold, clamp to {0,1}, un-pad.
MaskMap mask_update(const MaskMap& m, const SlidingWindowSpec& spec);
MaskSequence mask_update(const MaskSequence& masks, const SlidingWindowSpec& spec);

/// Seeded brush-stroke mask; strokes are rasterized as invalid pixels until
/// the invalid fraction lands within +-3% of the target. target 0 draws
/// nothing.
MaskMap gen_freeform_mask(std::int64_t h, std::int64_t w, double target_invalid_ratio,
                          std::uint64_t seed);

/// Centered invalid rectangle with the requested area fraction. Side lengths
/// are round(dim * sqrt(fraction)), clamped to [1, dim].
MaskMap gen_stationary_mask(std::int64_t h, std::int64_t w, double rect_fraction,
                            std::uint64_t seed);

} // namespace dmt
