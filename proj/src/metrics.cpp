// SPDX-License-Identifier: Apache-2.0
#include "dmt/metrics.hpp"

#include <cmath>
#include <limits>

namespace dmt {

PsnrResult psnr(const FrameSequence& a, const FrameSequence& b, double peak) {
    if (a.data->shape != b.data->shape) throw ShapeError("psnr: shape mismatch");
    if (peak <= 0.0) throw ValueError("psnr: peak must be positive");
    const std::int64_t T = a.frames();
    const std::int64_t plane = 3 * a.height() * a.width();

    PsnrResult result;
    double acc = 0.0;
    for (std::int64_t t = 0; t < T; ++t) {
        double mse = 0.0;
        for (std::int64_t i = 0; i < plane; ++i) {
            const double d = a.data->data[t * plane + i] - b.data->data[t * plane + i];
            mse += d * d;
        }
        mse /= static_cast<double>(plane);
        double db;
        if (mse == 0.0) {
            db = std::numeric_limits<double>::infinity();
            result.has_infinite = true;
        } else {
            db = 10.0 * std::log10(peak * peak / mse);
        }
        result.per_frame.push_back(db);
        acc += db;
    }
    result.mean = result.has_infinite ? std::numeric_limits<double>::infinity()
                                      : acc / static_cast<double>(T);
    return result;
}

namespace {

std::vector<double> luminance(const FrameSequence& f, std::int64_t t) {
    const std::int64_t H = f.height(), W = f.width();
    const std::int64_t plane = H * W;
    const double* base = f.data->data.data() + t * 3 * plane;
    std::vector<double> y(static_cast<std::size_t>(plane));
    for (std::int64_t i = 0; i < plane; ++i) {
        y[static_cast<std::size_t>(i)] =
            0.299 * base[i] + 0.587 * base[plane + i] + 0.114 * base[2 * plane + i];
    }
    return y;
}

std::vector<double> gaussian_window(std::int64_t n, double sigma) {
    std::vector<double> w(static_cast<std::size_t>(n * n));
    const std::int64_t half = n / 2;
    double total = 0.0;
    for (std::int64_t y = 0; y < n; ++y) {
        for (std::int64_t x = 0; x < n; ++x) {
            const double dy = static_cast<double>(y - half), dx = static_cast<double>(x - half);
            const double v = std::exp(-(dy * dy + dx * dx) / (2.0 * sigma * sigma));
            w[static_cast<std::size_t>(y * n + x)] = v;
            total += v;
        }
    }
    for (double& v : w) v /= total;
    return w;
}

} // namespace

SsimResult ssim(const FrameSequence& a, const FrameSequence& b, const SsimParams& params) {
    if (a.data->shape != b.data->shape) throw ShapeError("ssim: shape mismatch");
    const std::int64_t H = a.height(), W = a.width();
    const std::int64_t n = params.window;
    if (H < n || W < n) {
        throw ShapeError("ssim: frame smaller than the " + std::to_string(n) + "x" +
                         std::to_string(n) + " window");
    }
    const std::vector<double> win = gaussian_window(n, params.sigma);
    const double c1 = params.k1 * params.peak * params.k1 * params.peak;
    const double c2 = params.k2 * params.peak * params.k2 * params.peak;

    SsimResult result;
    double acc = 0.0;
    for (std::int64_t t = 0; t < a.frames(); ++t) {
        const std::vector<double> ya = luminance(a, t);
        const std::vector<double> yb = luminance(b, t);
        double frame_acc = 0.0;
        std::int64_t count = 0;
        for (std::int64_t y0 = 0; y0 + n <= H; ++y0) {
            for (std::int64_t x0 = 0; x0 + n <= W; ++x0) {
                double mua = 0.0, mub = 0.0, saa = 0.0, sbb = 0.0, sab = 0.0;
                for (std::int64_t wy = 0; wy < n; ++wy) {
                    for (std::int64_t wx = 0; wx < n; ++wx) {
                        const double wgt = win[static_cast<std::size_t>(wy * n + wx)];
                        const double va = ya[static_cast<std::size_t>((y0 + wy) * W + x0 + wx)];
                        const double vb = yb[static_cast<std::size_t>((y0 + wy) * W + x0 + wx)];
                        mua += wgt * va;
                        mub += wgt * vb;
                        saa += wgt * va * va;
                        sbb += wgt * vb * vb;
                        sab += wgt * va * vb;
                    }
                }
                const double var_a = saa - mua * mua;
                const double var_b = sbb - mub * mub;
                const double cov = sab - mua * mub;
                const double val = ((2.0 * mua * mub + c1) * (2.0 * cov + c2)) /
                                   ((mua * mua + mub * mub + c1) * (var_a + var_b + c2));
                frame_acc += val;
                ++count;
            }
        }
        const double frame_ssim = frame_acc / static_cast<double>(count);
        result.per_frame.push_back(frame_ssim);
        acc += frame_ssim;
    }
    result.mean = acc / static_cast<double>(a.frames());
    return result;
}

} // namespace dmt
