// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

#include "dmt/pipeline.hpp"

namespace dmt {

struct PsnrResult {
    std::vector<double> per_frame; // dB; +inf when a frame's MSE is zero
    double mean = 0.0;
    bool has_infinite = false;
};

/// 10*log10(peak^2 / MSE) per frame and averaged over frames.
PsnrResult psnr(const FrameSequence& a, const FrameSequence& b, double peak = 1.0);

struct SsimParams {
    std::int64_t window = 11;
    double sigma = 1.5;
    double k1 = 0.01;
    double k2 = 0.03;
    double peak = 1.0;
};

struct SsimResult {
    std::vector<double> per_frame;
    double mean = 0.0;
};

/// Mean local SSIM with a Gaussian window on the luminance plane
/// (0.299/0.587/0.114), valid positions only (no padding).
SsimResult ssim(const FrameSequence& a, const FrameSequence& b, const SsimParams& params = {});

} // namespace dmt
