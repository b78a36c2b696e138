// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

#include "dmt/tensor.hpp"

namespace dmt {

// Sliding-window geometry shared by unfold/fold, the convolutions, and the
// mask updater.
struct SlidingWindowSpec {
    std::int64_t kernel = 1;
    std::int64_t stride = 1;
    std::int64_t padding = 0;

    /// Number of window positions along an axis of the given extent.
    std::int64_t out_count(std::int64_t extent) const;
    void validate(std::int64_t h, std::int64_t w) const;
};

// ---- elementwise / reduction -------------------------------------------

TensorPtr add(const TensorPtr& a, const TensorPtr& b);
TensorPtr sub(const TensorPtr& a, const TensorPtr& b);
TensorPtr mul(const TensorPtr& a, const TensorPtr& b);
TensorPtr scale(const TensorPtr& a, double c);
TensorPtr relu(const TensorPtr& x);
/// Exact Gauss-CDF GELU: x * Phi(x).
TensorPtr gelu(const TensorPtr& x);
TensorPtr sigmoid(const TensorPtr& x);
TensorPtr abs_val(const TensorPtr& x);
TensorPtr sum(const TensorPtr& x);
TensorPtr mean(const TensorPtr& x);

// ---- linear algebra ------------------------------------------------------

TensorPtr matmul(const TensorPtr& a, const TensorPtr& b);
TensorPtr transpose2d(const TensorPtr& x);
/// x: [N,d], bias: [d]; adds bias to every row.
TensorPtr add_bias_rows(const TensorPtr& x, const TensorPtr& bias);
TensorPtr softmax(const TensorPtr& x, int axis);
TensorPtr layer_norm(const TensorPtr& x, const TensorPtr& gamma, const TensorPtr& beta,
                     double eps = 1e-5);

// ---- convolution family --------------------------------------------------

/// x: [T,Cin,H,W] (or [Cin,H,W]), w: [Cout,Cin,k,k], bias: [Cout] or null.
/// Cross-correlation; output spatial size per the spec formula.
TensorPtr conv2d(const TensorPtr& x, const TensorPtr& w, const TensorPtr& bias,
                 const SlidingWindowSpec& spec);
/// x: [T,C,H,W] (or [C,H,W]), w: [C,1,K,K]; K odd, stride 1, padding (K-1)/2.
TensorPtr depthwise_conv2d(const TensorPtr& x, const TensorPtr& w, const TensorPtr& bias,
                           const SlidingWindowSpec& spec);
/// x: [T,C,H,W] -> [T,C,2H,2W], nearest-neighbor.
TensorPtr upsample_nn2x(const TensorPtr& x);

// ---- unfold / fold ---------------------------------------------------------

/// x: [C,H,W] -> [C*k^2, N] or [T,C,H,W] -> [C*k^2, T*N]; column n holds the
/// zero-padded window at raster position n (rows outer, cols inner), frames
/// ordered outermost.
TensorPtr unfold(const TensorPtr& x, const SlidingWindowSpec& spec);
/// Adjoint of unfold: overlap-add into the padded canvas, then un-pad.
/// cols: [C*k^2, T*N] -> [T,C,out_h,out_w] (T=1 gives the [C,H,W] case,
/// returned as [C,out_h,out_w]).
TensorPtr fold(const TensorPtr& cols, const SlidingWindowSpec& spec, std::int64_t frames,
               std::int64_t out_h, std::int64_t out_w);
TensorPtr fold(const TensorPtr& cols, const SlidingWindowSpec& spec, std::int64_t out_h,
               std::int64_t out_w);
/// Number of windows covering each pixel, as a [T,1,H,W] tensor (untracked).
TensorPtr overlap_counts(const SlidingWindowSpec& spec, std::int64_t frames, std::int64_t h,
                         std::int64_t w);

// ---- gather / scatter / layout ----------------------------------------------

/// out[i,:] = x[rows[i],:]
TensorPtr gather_rows(const TensorPtr& x, const std::vector<std::int64_t>& rows);
/// out[rows[i],:] = x[i,:], all other rows exactly zero; rows must be unique.
TensorPtr scatter_rows(const TensorPtr& x, const std::vector<std::int64_t>& rows,
                       std::int64_t out_rows);
TensorPtr slice_cols(const TensorPtr& x, std::int64_t c0, std::int64_t c1);
TensorPtr concat_cols(const std::vector<TensorPtr>& parts);
/// [T,C,H,W] -> [T*H*W, C], row index t*H*W + y*W + x.
TensorPtr grid_to_rows(const TensorPtr& x);
/// [N,C] -> [T,C,H,W], inverse layout of grid_to_rows.
TensorPtr rows_to_grid(const TensorPtr& x, std::int64_t frames, std::int64_t h, std::int64_t w);
/// x: [T,C,H,W] * mask [T,1,H,W] broadcast across channels; mask untracked.
TensorPtr mul_mask_channels(const TensorPtr& x, const TensorPtr& mask);

// ---- MAC instrumentation ---------------------------------------------------

/// matmul adds M*K*N to a thread-local counter while a MacCounterScope is
/// alive. Single-threaded by contract; nesting reenters the same counter.
class MacCounterScope {
public:
    MacCounterScope();
    ~MacCounterScope();
    MacCounterScope(const MacCounterScope&) = delete;
    MacCounterScope& operator=(const MacCounterScope&) = delete;
};

std::uint64_t mac_counter_value();
void mac_counter_reset();

} // namespace dmt
