// SPDX-License-Identifier: Apache-2.0
#include "dmt/image_io.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>

#ifdef DMT_HAS_PNG
#include <png.h>
#endif

namespace dmt {

ImageFormat format_from_path(const std::string& path) {
    const auto dot = path.find_last_of('.');
    std::string ext = dot == std::string::npos ? "" : path.substr(dot + 1);
    std::transform(ext.begin(), ext.end(), ext.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    if (ext == "ppm") return ImageFormat::Ppm;
    if (ext == "pgm") return ImageFormat::Pgm;
    if (ext == "png") return ImageFormat::Png;
    throw IoError("unsupported image extension on " + path + " (expect .ppm/.pgm/.png)");
}

bool png_supported() {
#ifdef DMT_HAS_PNG
    return true;
#else
    return false;
#endif
}

namespace {

// Reads one whitespace-delimited token, skipping '#' comment lines.
std::string next_token(std::istream& in, const std::string& path) {
    std::string tok;
    int c;
    while ((c = in.get()) != EOF) {
        if (c == '#') {
            while ((c = in.get()) != EOF && c != '\n') {
            }
            continue;
        }
        if (std::isspace(c)) {
            if (!tok.empty()) return tok;
            continue;
        }
        tok.push_back(static_cast<char>(c));
    }
    if (tok.empty()) throw IoError("unexpected end of header in " + path);
    return tok;
}

Image8 read_pnm(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open image " + path);
    const std::string magic = next_token(f, path);
    std::int64_t channels;
    if (magic == "P6") channels = 3;
    else if (magic == "P5") channels = 1;
    else throw IoError("unsupported PNM magic '" + magic + "' in " + path);

    Image8 img;
    img.channels = channels;
    img.w = std::stoll(next_token(f, path));
    img.h = std::stoll(next_token(f, path));
    const std::int64_t maxval = std::stoll(next_token(f, path));
    if (img.w < 1 || img.h < 1) throw IoError("bad image dimensions in " + path);
    if (maxval != 255) throw IoError("only maxval 255 supported, got " + std::to_string(maxval) +
                                     " in " + path);
    // single whitespace byte after maxval already consumed by next_token
    img.pixels.resize(static_cast<std::size_t>(img.h * img.w * channels));
    f.read(reinterpret_cast<char*>(img.pixels.data()),
           static_cast<std::streamsize>(img.pixels.size()));
    if (f.gcount() != static_cast<std::streamsize>(img.pixels.size())) {
        throw IoError("truncated pixel data in " + path);
    }
    return img;
}

void write_pnm(const std::string& path, const Image8& img) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open " + path + " for writing");
    f << (img.channels == 3 ? "P6" : "P5") << "\n" << img.w << " " << img.h << "\n255\n";
    f.write(reinterpret_cast<const char*>(img.pixels.data()),
            static_cast<std::streamsize>(img.pixels.size()));
    if (!f) throw IoError("short write to " + path);
}

#ifdef DMT_HAS_PNG

Image8 read_png_file(const std::string& path) {
    std::FILE* fp = std::fopen(path.c_str(), "rb");
    if (!fp) throw IoError("cannot open image " + path);
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        if (png) png_destroy_read_struct(&png, &info, nullptr);
        std::fclose(fp);
        throw IoError("libpng initialization failed for " + path);
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        std::fclose(fp);
        throw IoError("failed to decode PNG " + path);
    }
    png_init_io(png, fp);
    png_read_info(png, info);

    png_set_strip_16(png);
    png_set_packing(png);
    png_set_expand(png);
    png_set_strip_alpha(png);
    png_read_update_info(png, info);

    const png_uint_32 w = png_get_image_width(png, info);
    const png_uint_32 h = png_get_image_height(png, info);
    const png_byte color = png_get_color_type(png, info);
    const int channels = (color & PNG_COLOR_MASK_COLOR) ? 3 : 1;

    Image8 img;
    img.w = static_cast<std::int64_t>(w);
    img.h = static_cast<std::int64_t>(h);
    img.channels = channels;
    img.pixels.resize(static_cast<std::size_t>(img.h * img.w * channels));
    std::vector<png_bytep> rows(h);
    for (png_uint_32 y = 0; y < h; ++y) {
        rows[y] = img.pixels.data() + static_cast<std::size_t>(y) * w * channels;
    }
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    return img;
}

void write_png_file(const std::string& path, const Image8& img) {
    std::FILE* fp = std::fopen(path.c_str(), "wb");
    if (!fp) throw IoError("cannot open " + path + " for writing");
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        if (png) png_destroy_write_struct(&png, &info);
        std::fclose(fp);
        throw IoError("libpng initialization failed for " + path);
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        std::fclose(fp);
        throw IoError("failed to encode PNG " + path);
    }
    png_init_io(png, fp);
    png_set_IHDR(png, info, static_cast<png_uint_32>(img.w), static_cast<png_uint_32>(img.h), 8,
                 img.channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    std::vector<png_bytep> rows(static_cast<std::size_t>(img.h));
    for (std::int64_t y = 0; y < img.h; ++y) {
        rows[static_cast<std::size_t>(y)] = const_cast<png_bytep>(
            img.pixels.data() + static_cast<std::size_t>(y * img.w * img.channels));
    }
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
}

#endif // DMT_HAS_PNG

} // namespace

Image8 read_image(const std::string& path) {
    switch (format_from_path(path)) {
    case ImageFormat::Ppm:
    case ImageFormat::Pgm:
        return read_pnm(path);
    case ImageFormat::Png:
#ifdef DMT_HAS_PNG
        return read_png_file(path);
#else
        throw IoError("PNG support not compiled in; cannot read " + path);
#endif
    }
    throw IoError("unreachable image format");
}

void write_image(const std::string& path, const Image8& img) {
    if (img.channels != 1 && img.channels != 3) {
        throw IoError("write_image: only 1- or 3-channel images supported");
    }
    const ImageFormat fmt = format_from_path(path);
    if (fmt == ImageFormat::Ppm && img.channels != 3) {
        throw IoError("write_image: PPM requires 3 channels for " + path);
    }
    if (fmt == ImageFormat::Pgm && img.channels != 1) {
        throw IoError("write_image: PGM requires 1 channel for " + path);
    }
    switch (fmt) {
    case ImageFormat::Ppm:
    case ImageFormat::Pgm:
        write_pnm(path, img);
        return;
    case ImageFormat::Png:
#ifdef DMT_HAS_PNG
        write_png_file(path, img);
        return;
#else
        throw IoError("PNG support not compiled in; cannot write " + path);
#endif
    }
}

TensorPtr image_to_frame(const Image8& img) {
    std::vector<double> d(static_cast<std::size_t>(3 * img.h * img.w));
    const std::int64_t plane = img.h * img.w;
    for (std::int64_t y = 0; y < img.h; ++y) {
        for (std::int64_t x = 0; x < img.w; ++x) {
            for (std::int64_t c = 0; c < 3; ++c) {
                const std::uint8_t v =
                    img.channels == 3 ? img.at(y, x, c) : img.at(y, x, 0);
                d[c * plane + y * img.w + x] = static_cast<double>(v) / 255.0;
            }
        }
    }
    return tensor::from_data({3, img.h, img.w}, std::move(d));
}

Image8 frame_to_image(const TensorPtr& frame) {
    if (frame->rank() != 3 || frame->dim(0) != 3) {
        throw ShapeError("frame_to_image: [3,H,W] required");
    }
    Image8 img;
    img.h = frame->dim(1);
    img.w = frame->dim(2);
    img.channels = 3;
    img.pixels.resize(static_cast<std::size_t>(3 * img.h * img.w));
    const std::int64_t plane = img.h * img.w;
    for (std::int64_t y = 0; y < img.h; ++y) {
        for (std::int64_t x = 0; x < img.w; ++x) {
            for (std::int64_t c = 0; c < 3; ++c) {
                const double v = std::clamp(frame->data[c * plane + y * img.w + x], 0.0, 1.0);
                img.pixels[(y * img.w + x) * 3 + c] =
                    static_cast<std::uint8_t>(std::lround(v * 255.0));
            }
        }
    }
    return img;
}

MaskMap image_to_mask(const Image8& img) {
    MaskMap m(img.h, img.w, 1);
    for (std::int64_t y = 0; y < img.h; ++y) {
        for (std::int64_t x = 0; x < img.w; ++x) {
            // >=128 marks a hole in the file convention; internal 1 = valid
            const std::uint8_t v = img.at(y, x, 0);
            m.set(y, x, v >= 128 ? 0 : 1);
        }
    }
    return m;
}

Image8 mask_to_image(const MaskMap& mask) {
    Image8 img;
    img.h = mask.h;
    img.w = mask.w;
    img.channels = 1;
    img.pixels.resize(static_cast<std::size_t>(mask.h * mask.w));
    for (std::int64_t i = 0; i < mask.size(); ++i) {
        img.pixels[static_cast<std::size_t>(i)] = mask.v[static_cast<std::size_t>(i)] ? 0 : 255;
    }
    return img;
}

} // namespace dmt
