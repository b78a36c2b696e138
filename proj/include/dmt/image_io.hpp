// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dmt/mask.hpp"
#include "dmt/tensor.hpp"

namespace dmt {

// 8-bit image buffer; channels is 1 (gray) or 3 (RGB), row-major, channel
// interleaved.
struct Image8 {
    std::int64_t h = 0, w = 0, channels = 0;
    std::vector<std::uint8_t> pixels;

    std::uint8_t at(std::int64_t y, std::int64_t x, std::int64_t c) const {
        return pixels[(y * w + x) * channels + c];
    }
};

enum class ImageFormat { Ppm, Pgm, Png };

/// Format by file extension (.ppm/.pgm/.png, case-insensitive).
ImageFormat format_from_path(const std::string& path);
bool png_supported();

Image8 read_image(const std::string& path);
void write_image(const std::string& path, const Image8& img);

/// [3,H,W] float in [0,1] from an 8-bit image (gray replicated to RGB).
TensorPtr image_to_frame(const Image8& img);
/// Quantizes round(v*255) with clamping; exact for values that came from u8.
Image8 frame_to_image(const TensorPtr& frame);

/// Grayscale mask image -> validity map. Pixel >= 128 marks a HOLE and is
/// inverted to internal valid=1.
MaskMap image_to_mask(const Image8& img);
/// Validity map -> grayscale image with hole = 255.
Image8 mask_to_image(const MaskMap& mask);

} // namespace dmt
