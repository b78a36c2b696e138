// SPDX-License-Identifier: Apache-2.0
#include "dmt/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <string>
#include <utility>

namespace dmt {

namespace {

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

thread_local std::uint64_t g_macs = 0;
thread_local int g_mac_depth = 0;

std::int64_t idx4(std::int64_t t, std::int64_t c, std::int64_t y, std::int64_t x, std::int64_t C,
                  std::int64_t H, std::int64_t W) {
    return ((t * C + c) * H + y) * W + x;
}

void require(bool cond, const std::string& msg) {
    if (!cond) throw ShapeError(msg);
}

struct Dims4 {
    std::int64_t T, C, H, W;
    bool was3d;
};

Dims4 as4d(const TensorPtr& x, const char* who) {
    if (x->rank() == 4) return {x->dim(0), x->dim(1), x->dim(2), x->dim(3), false};
    if (x->rank() == 3) return {1, x->dim(0), x->dim(1), x->dim(2), true};
    throw ShapeError(std::string(who) + ": expected rank 3 or 4, got shape " + shape_str(x->shape));
}

// out += a @ b with optional transposes; raw kernel shared by forward and
// adjoint paths so backward matmuls bypass the MAC counter.
void matmul_acc(const double* a, const double* b, double* out, std::int64_t M, std::int64_t K,
                std::int64_t N, bool trans_a, bool trans_b) {
    for (std::int64_t i = 0; i < M; ++i) {
        for (std::int64_t k = 0; k < K; ++k) {
            const double av = trans_a ? a[k * M + i] : a[i * K + k];
            if (av == 0.0) continue;
            const double* brow = trans_b ? nullptr : b + k * N;
            double* orow = out + i * N;
            if (trans_b) {
                for (std::int64_t j = 0; j < N; ++j) orow[j] += av * b[j * K + k];
            } else {
                for (std::int64_t j = 0; j < N; ++j) orow[j] += av * brow[j];
            }
        }
    }
}

// im2col: cols[c*k*k + ky*k + kx, t*oh*ow + wy*ow + wx]
void im2col_raw(const double* src, std::int64_t T, std::int64_t C, std::int64_t H, std::int64_t W,
                const SlidingWindowSpec& sp, double* cols) {
    const std::int64_t k = sp.kernel, s = sp.stride, p = sp.padding;
    const std::int64_t oh = sp.out_count(H), ow = sp.out_count(W);
    const std::int64_t ncols = T * oh * ow;
    for (std::int64_t t = 0; t < T; ++t) {
        for (std::int64_t wy = 0; wy < oh; ++wy) {
            for (std::int64_t wx = 0; wx < ow; ++wx) {
                const std::int64_t col = (t * oh + wy) * ow + wx;
                for (std::int64_t c = 0; c < C; ++c) {
                    for (std::int64_t ky = 0; ky < k; ++ky) {
                        const std::int64_t y = wy * s - p + ky;
                        for (std::int64_t kx = 0; kx < k; ++kx) {
                            const std::int64_t x = wx * s - p + kx;
                            const std::int64_t row = (c * k + ky) * k + kx;
                            double v = 0.0;
                            if (y >= 0 && y < H && x >= 0 && x < W) {
                                v = src[idx4(t, c, y, x, C, H, W)];
                            }
                            cols[row * ncols + col] = v;
                        }
                    }
                }
            }
        }
    }
}

// col2im: overlap-add of window contents, padding contributions dropped.
void col2im_raw(const double* cols, std::int64_t T, std::int64_t C, std::int64_t H, std::int64_t W,
                const SlidingWindowSpec& sp, double* dst) {
    const std::int64_t k = sp.kernel, s = sp.stride, p = sp.padding;
    const std::int64_t oh = sp.out_count(H), ow = sp.out_count(W);
    const std::int64_t ncols = T * oh * ow;
    for (std::int64_t t = 0; t < T; ++t) {
        for (std::int64_t wy = 0; wy < oh; ++wy) {
            for (std::int64_t wx = 0; wx < ow; ++wx) {
                const std::int64_t col = (t * oh + wy) * ow + wx;
                for (std::int64_t c = 0; c < C; ++c) {
                    for (std::int64_t ky = 0; ky < k; ++ky) {
                        const std::int64_t y = wy * s - p + ky;
                        if (y < 0 || y >= H) continue;
                        for (std::int64_t kx = 0; kx < k; ++kx) {
                            const std::int64_t x = wx * s - p + kx;
                            if (x < 0 || x >= W) continue;
                            const std::int64_t row = (c * k + ky) * k + kx;
                            dst[idx4(t, c, y, x, C, H, W)] += cols[row * ncols + col];
                        }
                    }
                }
            }
        }
    }
}

} // namespace

std::int64_t SlidingWindowSpec::out_count(std::int64_t extent) const {
    return (extent + 2 * padding - kernel) / stride + 1;
}

void SlidingWindowSpec::validate(std::int64_t h, std::int64_t w) const {
    if (kernel < 1 || stride < 1 || padding < 0) {
        throw ShapeError("sliding window spec requires kernel>=1, stride>=1, padding>=0");
    }
    if (h + 2 * padding < kernel || w + 2 * padding < kernel) {
        throw ShapeError("window of size " + std::to_string(kernel) +
                         " larger than padded input " + std::to_string(h) + "x" +
                         std::to_string(w) + " (padding " + std::to_string(padding) + ")");
    }
    if (out_count(h) < 1 || out_count(w) < 1) {
        throw ShapeError("sliding window spec yields no output positions");
    }
}

// ---- elementwise -----------------------------------------------------------

TensorPtr add(const TensorPtr& a, const TensorPtr& b) {
    require(a->shape == b->shape, "add: shape mismatch " + shape_str(a->shape) + " vs " +
                                      shape_str(b->shape));
    std::vector<double> out(a->data.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a->data[i] + b->data[i];
    return detail::make_node(
        a->shape, std::move(out), {a, b},
        [a, b](Tensor& self) {
            if (a->requires_grad) detail::accumulate(*a, self.grad);
            if (b->requires_grad) detail::accumulate(*b, self.grad);
        },
        "add");
}

TensorPtr sub(const TensorPtr& a, const TensorPtr& b) {
    require(a->shape == b->shape, "sub: shape mismatch " + shape_str(a->shape) + " vs " +
                                      shape_str(b->shape));
    std::vector<double> out(a->data.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a->data[i] - b->data[i];
    return detail::make_node(
        a->shape, std::move(out), {a, b},
        [a, b](Tensor& self) {
            if (a->requires_grad) detail::accumulate(*a, self.grad);
            if (b->requires_grad) {
                auto& g = b->grad_ref();
                for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
            }
        },
        "sub");
}

TensorPtr mul(const TensorPtr& a, const TensorPtr& b) {
    require(a->shape == b->shape, "mul: shape mismatch " + shape_str(a->shape) + " vs " +
                                      shape_str(b->shape));
    std::vector<double> out(a->data.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a->data[i] * b->data[i];
    return detail::make_node(
        a->shape, std::move(out), {a, b},
        [a, b](Tensor& self) {
            if (a->requires_grad) {
                auto& g = a->grad_ref();
                for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * b->data[i];
            }
            if (b->requires_grad) {
                auto& g = b->grad_ref();
                for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * a->data[i];
            }
        },
        "mul");
}

TensorPtr scale(const TensorPtr& a, double c) {
    std::vector<double> out(a->data.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a->data[i] * c;
    return detail::make_node(
        a->shape, std::move(out), {a},
        [a, c](Tensor& self) {
            if (a->requires_grad) {
                auto& g = a->grad_ref();
                for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * c;
            }
        },
        "scale");
}

TensorPtr relu(const TensorPtr& x) {
    std::vector<double> out(x->data.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x->data[i] > 0.0 ? x->data[i] : 0.0;
    return detail::make_node(
        x->shape, std::move(out), {x},
        [x](Tensor& self) {
            if (!x->requires_grad) return;
            auto& g = x->grad_ref();
            for (std::size_t i = 0; i < g.size(); ++i) {
                if (x->data[i] > 0.0) g[i] += self.grad[i];
            }
        },
        "relu");
}

TensorPtr gelu(const TensorPtr& x) {
    std::vector<double> out(x->data.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double v = x->data[i];
        out[i] = 0.5 * v * (1.0 + std::erf(v * kInvSqrt2));
    }
    return detail::make_node(
        x->shape, std::move(out), {x},
        [x](Tensor& self) {
            if (!x->requires_grad) return;
            auto& g = x->grad_ref();
            for (std::size_t i = 0; i < g.size(); ++i) {
                const double v = x->data[i];
                const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
                const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
                g[i] += self.grad[i] * (cdf + v * pdf);
            }
        },
        "gelu");
}

TensorPtr sigmoid(const TensorPtr& x) {
    std::vector<double> out(x->data.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double v = x->data[i];
        out[i] = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
    }
    // capture forward values: s(1-s) only needs the output
    std::vector<double> saved = out;
    return detail::make_node(
        x->shape, std::move(out), {x},
        [x, saved = std::move(saved)](Tensor& self) {
            if (!x->requires_grad) return;
            auto& g = x->grad_ref();
            for (std::size_t i = 0; i < g.size(); ++i) {
                g[i] += self.grad[i] * saved[i] * (1.0 - saved[i]);
            }
        },
        "sigmoid");
}

TensorPtr abs_val(const TensorPtr& x) {
    std::vector<double> out(x->data.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::fabs(x->data[i]);
    return detail::make_node(
        x->shape, std::move(out), {x},
        [x](Tensor& self) {
            if (!x->requires_grad) return;
            auto& g = x->grad_ref();
            for (std::size_t i = 0; i < g.size(); ++i) {
                const double v = x->data[i];
                if (v > 0.0) g[i] += self.grad[i];
                else if (v < 0.0) g[i] -= self.grad[i];
            }
        },
        "abs");
}

TensorPtr sum(const TensorPtr& x) {
    double acc = 0.0;
    for (double v : x->data) acc += v;
    return detail::make_node(
        {1}, {acc}, {x},
        [x](Tensor& self) {
            if (!x->requires_grad) return;
            auto& g = x->grad_ref();
            const double gv = self.grad[0];
            for (double& gi : g) gi += gv;
        },
        "sum");
}

TensorPtr mean(const TensorPtr& x) {
    if (x->numel() == 0) throw ShapeError("mean: empty tensor");
    return scale(sum(x), 1.0 / static_cast<double>(x->numel()));
}

// ---- linear algebra ---------------------------------------------------------

TensorPtr matmul(const TensorPtr& a, const TensorPtr& b) {
    require(a->rank() == 2 && b->rank() == 2, "matmul: operands must be rank-2");
    const std::int64_t M = a->dim(0), K = a->dim(1), N = b->dim(1);
    require(b->dim(0) == K, "matmul: inner dimensions disagree, " + shape_str(a->shape) + " x " +
                                shape_str(b->shape));
    if (g_mac_depth > 0) {
        g_macs += static_cast<std::uint64_t>(M) * static_cast<std::uint64_t>(K) *
                  static_cast<std::uint64_t>(N);
    }
    std::vector<double> out(static_cast<std::size_t>(M * N), 0.0);
    matmul_acc(a->data.data(), b->data.data(), out.data(), M, K, N, false, false);
    return detail::make_node(
        {M, N}, std::move(out), {a, b},
        [a, b, M, K, N](Tensor& self) {
            if (a->requires_grad) {
                // gA = gOut @ B^T
                matmul_acc(self.grad.data(), b->data.data(), a->grad_ref().data(), M, N, K, false,
                           true);
            }
            if (b->requires_grad) {
                // gB = A^T @ gOut
                matmul_acc(a->data.data(), self.grad.data(), b->grad_ref().data(), K, M, N, true,
                           false);
            }
        },
        "matmul");
}

TensorPtr transpose2d(const TensorPtr& x) {
    require(x->rank() == 2, "transpose2d: rank-2 required");
    const std::int64_t M = x->dim(0), N = x->dim(1);
    std::vector<double> out(x->data.size());
    for (std::int64_t i = 0; i < M; ++i) {
        for (std::int64_t j = 0; j < N; ++j) out[j * M + i] = x->data[i * N + j];
    }
    return detail::make_node(
        {N, M}, std::move(out), {x},
        [x, M, N](Tensor& self) {
            if (!x->requires_grad) return;
            auto& g = x->grad_ref();
            for (std::int64_t i = 0; i < M; ++i) {
                for (std::int64_t j = 0; j < N; ++j) g[i * N + j] += self.grad[j * M + i];
            }
        },
        "transpose2d");
}

TensorPtr add_bias_rows(const TensorPtr& x, const TensorPtr& bias) {
    require(x->rank() == 2 && bias->rank() == 1, "add_bias_rows: need [N,d] and [d]");
    const std::int64_t N = x->dim(0), d = x->dim(1);
    require(bias->dim(0) == d, "add_bias_rows: bias width mismatch");
    std::vector<double> out(x->data.size());
    for (std::int64_t i = 0; i < N; ++i) {
        for (std::int64_t j = 0; j < d; ++j) out[i * d + j] = x->data[i * d + j] + bias->data[j];
    }
    return detail::make_node(
        {N, d}, std::move(out), {x, bias},
        [x, bias, N, d](Tensor& self) {
            if (x->requires_grad) detail::accumulate(*x, self.grad);
            if (bias->requires_grad) {
                auto& g = bias->grad_ref();
                for (std::int64_t i = 0; i < N; ++i) {
                    for (std::int64_t j = 0; j < d; ++j) g[j] += self.grad[i * d + j];
                }
            }
        },
        "add_bias_rows");
}

TensorPtr softmax(const TensorPtr& x, int axis) {
    require(axis >= 0 && static_cast<std::size_t>(axis) < x->rank(),
            "softmax: axis out of range for shape " + shape_str(x->shape));
    const std::int64_t len = x->dim(static_cast<std::size_t>(axis));
    std::int64_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= x->dim(static_cast<std::size_t>(i));
    for (std::size_t i = static_cast<std::size_t>(axis) + 1; i < x->rank(); ++i) inner *= x->dim(i);

    std::vector<double> out(x->data.size());
    for (std::int64_t o = 0; o < outer; ++o) {
        for (std::int64_t in = 0; in < inner; ++in) {
            const std::int64_t base = o * len * inner + in;
            double mx = x->data[base];
            for (std::int64_t l = 1; l < len; ++l) mx = std::max(mx, x->data[base + l * inner]);
            double denom = 0.0;
            for (std::int64_t l = 0; l < len; ++l) {
                const double e = std::exp(x->data[base + l * inner] - mx);
                out[base + l * inner] = e;
                denom += e;
            }
            for (std::int64_t l = 0; l < len; ++l) out[base + l * inner] /= denom;
        }
    }
    std::vector<double> saved = out;
    return detail::make_node(
        x->shape, std::move(out), {x},
        [x, saved = std::move(saved), outer, inner, len](Tensor& self) {
            if (!x->requires_grad) return;
            auto& g = x->grad_ref();
            for (std::int64_t o = 0; o < outer; ++o) {
                for (std::int64_t in = 0; in < inner; ++in) {
                    const std::int64_t base = o * len * inner + in;
                    double dot = 0.0;
                    for (std::int64_t l = 0; l < len; ++l) {
                        dot += self.grad[base + l * inner] * saved[base + l * inner];
                    }
                    for (std::int64_t l = 0; l < len; ++l) {
                        const std::int64_t i = base + l * inner;
                        g[i] += saved[i] * (self.grad[i] - dot);
                    }
                }
            }
        },
        "softmax");
}

TensorPtr layer_norm(const TensorPtr& x, const TensorPtr& gamma, const TensorPtr& beta,
                     double eps) {
    require(x->rank() >= 1, "layer_norm: rank >= 1 required");
    const std::int64_t d = x->dim(x->rank() - 1);
    require(gamma->rank() == 1 && gamma->dim(0) == d && beta->rank() == 1 && beta->dim(0) == d,
            "layer_norm: gamma/beta must be [d] with d matching the last axis");
    const std::int64_t rows = x->numel() / std::max<std::int64_t>(d, 1);

    std::vector<double> out(x->data.size());
    std::vector<double> xhat(x->data.size());
    std::vector<double> inv_std(static_cast<std::size_t>(rows));
    for (std::int64_t r = 0; r < rows; ++r) {
        const double* row = x->data.data() + r * d;
        double mu = 0.0;
        for (std::int64_t j = 0; j < d; ++j) mu += row[j];
        mu /= static_cast<double>(d);
        double var = 0.0;
        for (std::int64_t j = 0; j < d; ++j) {
            const double c = row[j] - mu;
            var += c * c;
        }
        var /= static_cast<double>(d);
        const double is = 1.0 / std::sqrt(var + eps);
        inv_std[static_cast<std::size_t>(r)] = is;
        for (std::int64_t j = 0; j < d; ++j) {
            const double h = (row[j] - mu) * is;
            xhat[r * d + j] = h;
            out[r * d + j] = gamma->data[j] * h + beta->data[j];
        }
    }
    return detail::make_node(
        x->shape, std::move(out), {x, gamma, beta},
        [x, gamma, beta, rows, d, xhat = std::move(xhat),
         inv_std = std::move(inv_std)](Tensor& self) {
            if (gamma->requires_grad) {
                auto& gg = gamma->grad_ref();
                for (std::int64_t r = 0; r < rows; ++r) {
                    for (std::int64_t j = 0; j < d; ++j) {
                        gg[j] += self.grad[r * d + j] * xhat[r * d + j];
                    }
                }
            }
            if (beta->requires_grad) {
                auto& gb = beta->grad_ref();
                for (std::int64_t r = 0; r < rows; ++r) {
                    for (std::int64_t j = 0; j < d; ++j) gb[j] += self.grad[r * d + j];
                }
            }
            if (x->requires_grad) {
                auto& gx = x->grad_ref();
                for (std::int64_t r = 0; r < rows; ++r) {
                    double m1 = 0.0, m2 = 0.0; // mean(gy), mean(gy * xhat)
                    for (std::int64_t j = 0; j < d; ++j) {
                        const double gy = self.grad[r * d + j] * gamma->data[j];
                        m1 += gy;
                        m2 += gy * xhat[r * d + j];
                    }
                    m1 /= static_cast<double>(d);
                    m2 /= static_cast<double>(d);
                    const double is = inv_std[static_cast<std::size_t>(r)];
                    for (std::int64_t j = 0; j < d; ++j) {
                        const double gy = self.grad[r * d + j] * gamma->data[j];
                        gx[r * d + j] += is * (gy - m1 - xhat[r * d + j] * m2);
                    }
                }
            }
        },
        "layer_norm");
}

// ---- convolution family -------------------------------------------------------

TensorPtr conv2d(const TensorPtr& x, const TensorPtr& w, const TensorPtr& bias,
                 const SlidingWindowSpec& spec) {
    const Dims4 dx = as4d(x, "conv2d");
    require(w->rank() == 4, "conv2d: weight must be [Cout,Cin,k,k]");
    const std::int64_t Cout = w->dim(0), Cin = w->dim(1), kh = w->dim(2), kw = w->dim(3);
    require(kh == kw && kh == spec.kernel, "conv2d: weight kernel disagrees with spec");
    require(Cin == dx.C, "conv2d: input channels " + std::to_string(dx.C) +
                             " do not match weight Cin " + std::to_string(Cin));
    if (bias) require(bias->rank() == 1 && bias->dim(0) == Cout, "conv2d: bias must be [Cout]");
    spec.validate(dx.H, dx.W);
    const std::int64_t oh = spec.out_count(dx.H), ow = spec.out_count(dx.W);
    const std::int64_t k = spec.kernel, s = spec.stride, p = spec.padding;

    std::vector<double> out(static_cast<std::size_t>(dx.T * Cout * oh * ow), 0.0);
    for (std::int64_t t = 0; t < dx.T; ++t) {
        for (std::int64_t co = 0; co < Cout; ++co) {
            const double bv = bias ? bias->data[co] : 0.0;
            for (std::int64_t oy = 0; oy < oh; ++oy) {
                for (std::int64_t ox = 0; ox < ow; ++ox) {
                    double acc = bv;
                    for (std::int64_t ci = 0; ci < Cin; ++ci) {
                        for (std::int64_t ky = 0; ky < k; ++ky) {
                            const std::int64_t y = oy * s - p + ky;
                            if (y < 0 || y >= dx.H) continue;
                            for (std::int64_t kx = 0; kx < k; ++kx) {
                                const std::int64_t xx = ox * s - p + kx;
                                if (xx < 0 || xx >= dx.W) continue;
                                acc += x->data[idx4(t, ci, y, xx, dx.C, dx.H, dx.W)] *
                                       w->data[((co * Cin + ci) * k + ky) * k + kx];
                            }
                        }
                    }
                    out[idx4(t, co, oy, ox, Cout, oh, ow)] = acc;
                }
            }
        }
    }

    Shape out_shape = dx.was3d ? Shape{Cout, oh, ow} : Shape{dx.T, Cout, oh, ow};
    std::vector<TensorPtr> parents = bias ? std::vector<TensorPtr>{x, w, bias}
                                          : std::vector<TensorPtr>{x, w};
    return detail::make_node(
        std::move(out_shape), std::move(out), std::move(parents),
        [x, w, bias, dx, Cout, Cin, k, s, p, oh, ow](Tensor& self) {
            const bool gx_on = x->requires_grad;
            const bool gw_on = w->requires_grad;
            const bool gb_on = bias && bias->requires_grad;
            if (!gx_on && !gw_on && !gb_on) return;
            auto* gx = gx_on ? x->grad_ref().data() : nullptr;
            auto* gw = gw_on ? w->grad_ref().data() : nullptr;
            auto* gb = gb_on ? bias->grad_ref().data() : nullptr;
            for (std::int64_t t = 0; t < dx.T; ++t) {
                for (std::int64_t co = 0; co < Cout; ++co) {
                    for (std::int64_t oy = 0; oy < oh; ++oy) {
                        for (std::int64_t ox = 0; ox < ow; ++ox) {
                            const double g = self.grad[idx4(t, co, oy, ox, Cout, oh, ow)];
                            if (g == 0.0) continue;
                            if (gb) gb[co] += g;
                            for (std::int64_t ci = 0; ci < Cin; ++ci) {
                                for (std::int64_t ky = 0; ky < k; ++ky) {
                                    const std::int64_t y = oy * s - p + ky;
                                    if (y < 0 || y >= dx.H) continue;
                                    for (std::int64_t kx = 0; kx < k; ++kx) {
                                        const std::int64_t xx = ox * s - p + kx;
                                        if (xx < 0 || xx >= dx.W) continue;
                                        const std::int64_t xi =
                                            idx4(t, ci, y, xx, dx.C, dx.H, dx.W);
                                        const std::int64_t wi =
                                            ((co * Cin + ci) * k + ky) * k + kx;
                                        if (gx) gx[xi] += g * w->data[wi];
                                        if (gw) gw[wi] += g * x->data[xi];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        },
        "conv2d");
}

TensorPtr depthwise_conv2d(const TensorPtr& x, const TensorPtr& w, const TensorPtr& bias,
                           const SlidingWindowSpec& spec) {
    const Dims4 dx = as4d(x, "depthwise_conv2d");
    require(w->rank() == 4 && w->dim(1) == 1, "depthwise_conv2d: weight must be [C,1,K,K]");
    const std::int64_t C = w->dim(0), K = w->dim(2);
    require(w->dim(3) == K && K == spec.kernel, "depthwise_conv2d: weight kernel disagrees");
    require(C == dx.C, "depthwise_conv2d: channel count mismatch");
    if (K % 2 == 0) throw ShapeError("depthwise_conv2d: kernel size must be odd");
    require(spec.stride == 1 && spec.padding == (K - 1) / 2,
            "depthwise_conv2d: requires stride 1 and padding (K-1)/2");
    if (bias) require(bias->rank() == 1 && bias->dim(0) == C, "depthwise_conv2d: bias must be [C]");
    spec.validate(dx.H, dx.W);
    const std::int64_t p = spec.padding;

    std::vector<double> out(x->data.size(), 0.0);
    for (std::int64_t t = 0; t < dx.T; ++t) {
        for (std::int64_t c = 0; c < C; ++c) {
            const double bv = bias ? bias->data[c] : 0.0;
            for (std::int64_t oy = 0; oy < dx.H; ++oy) {
                for (std::int64_t ox = 0; ox < dx.W; ++ox) {
                    double acc = bv;
                    for (std::int64_t ky = 0; ky < K; ++ky) {
                        const std::int64_t y = oy - p + ky;
                        if (y < 0 || y >= dx.H) continue;
                        for (std::int64_t kx = 0; kx < K; ++kx) {
                            const std::int64_t xx = ox - p + kx;
                            if (xx < 0 || xx >= dx.W) continue;
                            acc += x->data[idx4(t, c, y, xx, C, dx.H, dx.W)] *
                                   w->data[(c * K + ky) * K + kx];
                        }
                    }
                    out[idx4(t, c, oy, ox, C, dx.H, dx.W)] = acc;
                }
            }
        }
    }

    Shape out_shape = dx.was3d ? Shape{C, dx.H, dx.W} : Shape{dx.T, C, dx.H, dx.W};
    std::vector<TensorPtr> parents = bias ? std::vector<TensorPtr>{x, w, bias}
                                          : std::vector<TensorPtr>{x, w};
    return detail::make_node(
        std::move(out_shape), std::move(out), std::move(parents),
        [x, w, bias, dx, C, K, p](Tensor& self) {
            const bool gx_on = x->requires_grad;
            const bool gw_on = w->requires_grad;
            const bool gb_on = bias && bias->requires_grad;
            if (!gx_on && !gw_on && !gb_on) return;
            auto* gx = gx_on ? x->grad_ref().data() : nullptr;
            auto* gw = gw_on ? w->grad_ref().data() : nullptr;
            auto* gb = gb_on ? bias->grad_ref().data() : nullptr;
            for (std::int64_t t = 0; t < dx.T; ++t) {
                for (std::int64_t c = 0; c < C; ++c) {
                    for (std::int64_t oy = 0; oy < dx.H; ++oy) {
                        for (std::int64_t ox = 0; ox < dx.W; ++ox) {
                            const double g = self.grad[idx4(t, c, oy, ox, C, dx.H, dx.W)];
                            if (g == 0.0) continue;
                            if (gb) gb[c] += g;
                            for (std::int64_t ky = 0; ky < K; ++ky) {
                                const std::int64_t y = oy - p + ky;
                                if (y < 0 || y >= dx.H) continue;
                                for (std::int64_t kx = 0; kx < K; ++kx) {
                                    const std::int64_t xx = ox - p + kx;
                                    if (xx < 0 || xx >= dx.W) continue;
                                    const std::int64_t xi = idx4(t, c, y, xx, C, dx.H, dx.W);
                                    const std::int64_t wi = (c * K + ky) * K + kx;
                                    if (gx) gx[xi] += g * w->data[wi];
                                    if (gw) gw[wi] += g * x->data[xi];
                                }
                            }
                        }
                    }
                }
            }
        },
        "depthwise_conv2d");
}

TensorPtr upsample_nn2x(const TensorPtr& x) {
    const Dims4 dx = as4d(x, "upsample_nn2x");
    const std::int64_t H2 = dx.H * 2, W2 = dx.W * 2;
    std::vector<double> out(static_cast<std::size_t>(dx.T * dx.C * H2 * W2));
    for (std::int64_t t = 0; t < dx.T; ++t) {
        for (std::int64_t c = 0; c < dx.C; ++c) {
            for (std::int64_t y = 0; y < dx.H; ++y) {
                for (std::int64_t xx = 0; xx < dx.W; ++xx) {
                    const double v = x->data[idx4(t, c, y, xx, dx.C, dx.H, dx.W)];
                    out[idx4(t, c, 2 * y, 2 * xx, dx.C, H2, W2)] = v;
                    out[idx4(t, c, 2 * y, 2 * xx + 1, dx.C, H2, W2)] = v;
                    out[idx4(t, c, 2 * y + 1, 2 * xx, dx.C, H2, W2)] = v;
                    out[idx4(t, c, 2 * y + 1, 2 * xx + 1, dx.C, H2, W2)] = v;
                }
            }
        }
    }
    Shape out_shape = dx.was3d ? Shape{dx.C, H2, W2} : Shape{dx.T, dx.C, H2, W2};
    return detail::make_node(
        std::move(out_shape), std::move(out), {x},
        [x, dx, H2, W2](Tensor& self) {
            if (!x->requires_grad) return;
            auto& g = x->grad_ref();
            for (std::int64_t t = 0; t < dx.T; ++t) {
                for (std::int64_t c = 0; c < dx.C; ++c) {
                    for (std::int64_t y = 0; y < dx.H; ++y) {
                        for (std::int64_t xx = 0; xx < dx.W; ++xx) {
                            g[idx4(t, c, y, xx, dx.C, dx.H, dx.W)] +=
                                self.grad[idx4(t, c, 2 * y, 2 * xx, dx.C, H2, W2)] +
                                self.grad[idx4(t, c, 2 * y, 2 * xx + 1, dx.C, H2, W2)] +
                                self.grad[idx4(t, c, 2 * y + 1, 2 * xx, dx.C, H2, W2)] +
                                self.grad[idx4(t, c, 2 * y + 1, 2 * xx + 1, dx.C, H2, W2)];
                        }
                    }
                }
            }
        },
        "upsample_nn2x");
}

// ---- unfold / fold -------------------------------------------------------------

TensorPtr unfold(const TensorPtr& x, const SlidingWindowSpec& spec) {
    const Dims4 dx = as4d(x, "unfold");
    spec.validate(dx.H, dx.W);
    const std::int64_t k = spec.kernel;
    const std::int64_t ncols = dx.T * spec.out_count(dx.H) * spec.out_count(dx.W);
    std::vector<double> out(static_cast<std::size_t>(dx.C * k * k * ncols));
    im2col_raw(x->data.data(), dx.T, dx.C, dx.H, dx.W, spec, out.data());
    return detail::make_node(
        {dx.C * k * k, ncols}, std::move(out), {x},
        [x, dx, spec](Tensor& self) {
            if (!x->requires_grad) return;
            col2im_raw(self.grad.data(), dx.T, dx.C, dx.H, dx.W, spec, x->grad_ref().data());
        },
        "unfold");
}

TensorPtr fold(const TensorPtr& cols, const SlidingWindowSpec& spec, std::int64_t frames,
               std::int64_t out_h, std::int64_t out_w) {
    require(cols->rank() == 2, "fold: columns must be rank-2");
    spec.validate(out_h, out_w);
    const std::int64_t k = spec.kernel;
    require(cols->dim(0) % (k * k) == 0, "fold: row count not divisible by kernel^2");
    const std::int64_t C = cols->dim(0) / (k * k);
    const std::int64_t ncols = frames * spec.out_count(out_h) * spec.out_count(out_w);
    require(cols->dim(1) == ncols, "fold: column count " + std::to_string(cols->dim(1)) +
                                       " does not match spec raster count " +
                                       std::to_string(ncols));
    std::vector<double> out(static_cast<std::size_t>(frames * C * out_h * out_w), 0.0);
    col2im_raw(cols->data.data(), frames, C, out_h, out_w, spec, out.data());
    return detail::make_node(
        {frames, C, out_h, out_w}, std::move(out), {cols},
        [cols, frames, C, out_h, out_w, spec](Tensor& self) {
            if (!cols->requires_grad) return;
            im2col_raw(self.grad.data(), frames, C, out_h, out_w, spec,
                       cols->grad_ref().data());
        },
        "fold");
}

TensorPtr fold(const TensorPtr& cols, const SlidingWindowSpec& spec, std::int64_t out_h,
               std::int64_t out_w) {
    TensorPtr r = fold(cols, spec, 1, out_h, out_w);
    // present the single-frame result as [C,H,W]
    const std::int64_t C = r->dim(1);
    std::vector<double> d = r->data;
    return detail::make_node(
        {C, out_h, out_w}, std::move(d), {r},
        [r](Tensor& self) {
            if (r->requires_grad) detail::accumulate(*r, self.grad);
        },
        "fold3");
}

TensorPtr overlap_counts(const SlidingWindowSpec& spec, std::int64_t frames, std::int64_t h,
                         std::int64_t w) {
    spec.validate(h, w);
    const std::int64_t oh = spec.out_count(h), ow = spec.out_count(w);
    std::vector<double> counts(static_cast<std::size_t>(h * w), 0.0);
    for (std::int64_t wy = 0; wy < oh; ++wy) {
        for (std::int64_t wx = 0; wx < ow; ++wx) {
            for (std::int64_t ky = 0; ky < spec.kernel; ++ky) {
                const std::int64_t y = wy * spec.stride - spec.padding + ky;
                if (y < 0 || y >= h) continue;
                for (std::int64_t kx = 0; kx < spec.kernel; ++kx) {
                    const std::int64_t x = wx * spec.stride - spec.padding + kx;
                    if (x < 0 || x >= w) continue;
                    counts[y * w + x] += 1.0;
                }
            }
        }
    }
    std::vector<double> out(static_cast<std::size_t>(frames * h * w));
    for (std::int64_t t = 0; t < frames; ++t) {
        std::copy(counts.begin(), counts.end(), out.begin() + t * h * w);
    }
    return tensor::from_data({frames, 1, h, w}, std::move(out));
}

// ---- gather / scatter / layout ---------------------------------------------------

TensorPtr gather_rows(const TensorPtr& x, const std::vector<std::int64_t>& rows) {
    require(x->rank() == 2, "gather_rows: rank-2 required");
    const std::int64_t N = x->dim(0), d = x->dim(1);
    for (std::int64_t r : rows) {
        require(r >= 0 && r < N, "gather_rows: row index out of range");
    }
    const std::int64_t n = static_cast<std::int64_t>(rows.size());
    std::vector<double> out(static_cast<std::size_t>(n * d));
    for (std::int64_t i = 0; i < n; ++i) {
        std::copy_n(x->data.data() + rows[i] * d, d, out.data() + i * d);
    }
    return detail::make_node(
        {n, d}, std::move(out), {x},
        [x, rows, d](Tensor& self) {
            if (!x->requires_grad) return;
            auto& g = x->grad_ref();
            for (std::size_t i = 0; i < rows.size(); ++i) {
                for (std::int64_t j = 0; j < d; ++j) {
                    g[rows[i] * d + j] += self.grad[static_cast<std::int64_t>(i) * d + j];
                }
            }
        },
        "gather_rows");
}

TensorPtr scatter_rows(const TensorPtr& x, const std::vector<std::int64_t>& rows,
                       std::int64_t out_rows) {
    require(x->rank() == 2, "scatter_rows: rank-2 required");
    const std::int64_t n = x->dim(0), d = x->dim(1);
    require(static_cast<std::int64_t>(rows.size()) == n, "scatter_rows: index count mismatch");
    std::vector<char> seen(static_cast<std::size_t>(out_rows), 0);
    for (std::int64_t r : rows) {
        require(r >= 0 && r < out_rows, "scatter_rows: row index out of range");
        require(!seen[static_cast<std::size_t>(r)], "scatter_rows: duplicate row index");
        seen[static_cast<std::size_t>(r)] = 1;
    }
    std::vector<double> out(static_cast<std::size_t>(out_rows * d), 0.0);
    for (std::int64_t i = 0; i < n; ++i) {
        std::copy_n(x->data.data() + i * d, d, out.data() + rows[i] * d);
    }
    return detail::make_node(
        {out_rows, d}, std::move(out), {x},
        [x, rows, d](Tensor& self) {
            if (!x->requires_grad) return;
            auto& g = x->grad_ref();
            for (std::size_t i = 0; i < rows.size(); ++i) {
                for (std::int64_t j = 0; j < d; ++j) {
                    g[static_cast<std::int64_t>(i) * d + j] += self.grad[rows[i] * d + j];
                }
            }
        },
        "scatter_rows");
}

TensorPtr slice_cols(const TensorPtr& x, std::int64_t c0, std::int64_t c1) {
    require(x->rank() == 2, "slice_cols: rank-2 required");
    const std::int64_t N = x->dim(0), d = x->dim(1);
    require(0 <= c0 && c0 < c1 && c1 <= d, "slice_cols: bad column range");
    const std::int64_t width = c1 - c0;
    std::vector<double> out(static_cast<std::size_t>(N * width));
    for (std::int64_t i = 0; i < N; ++i) {
        std::copy_n(x->data.data() + i * d + c0, width, out.data() + i * width);
    }
    return detail::make_node(
        {N, width}, std::move(out), {x},
        [x, c0, width, N, d](Tensor& self) {
            if (!x->requires_grad) return;
            auto& g = x->grad_ref();
            for (std::int64_t i = 0; i < N; ++i) {
                for (std::int64_t j = 0; j < width; ++j) {
                    g[i * d + c0 + j] += self.grad[i * width + j];
                }
            }
        },
        "slice_cols");
}

TensorPtr concat_cols(const std::vector<TensorPtr>& parts) {
    require(!parts.empty(), "concat_cols: no parts");
    const std::int64_t N = parts[0]->dim(0);
    std::int64_t total = 0;
    for (const auto& p : parts) {
        require(p->rank() == 2 && p->dim(0) == N, "concat_cols: row counts disagree");
        total += p->dim(1);
    }
    std::vector<double> out(static_cast<std::size_t>(N * total));
    std::int64_t off = 0;
    for (const auto& p : parts) {
        const std::int64_t w = p->dim(1);
        for (std::int64_t i = 0; i < N; ++i) {
            std::copy_n(p->data.data() + i * w, w, out.data() + i * total + off);
        }
        off += w;
    }
    return detail::make_node(
        {N, total}, std::move(out), parts,
        [parts, N, total](Tensor& self) {
            std::int64_t off = 0;
            for (const auto& p : parts) {
                const std::int64_t w = p->dim(1);
                if (p->requires_grad) {
                    auto& g = p->grad_ref();
                    for (std::int64_t i = 0; i < N; ++i) {
                        for (std::int64_t j = 0; j < w; ++j) {
                            g[i * w + j] += self.grad[i * total + off + j];
                        }
                    }
                }
                off += w;
            }
        },
        "concat_cols");
}

TensorPtr grid_to_rows(const TensorPtr& x) {
    require(x->rank() == 4, "grid_to_rows: [T,C,H,W] required");
    const std::int64_t T = x->dim(0), C = x->dim(1), H = x->dim(2), W = x->dim(3);
    const std::int64_t N = T * H * W;
    std::vector<double> out(static_cast<std::size_t>(N * C));
    for (std::int64_t t = 0; t < T; ++t) {
        for (std::int64_t c = 0; c < C; ++c) {
            for (std::int64_t y = 0; y < H; ++y) {
                for (std::int64_t xx = 0; xx < W; ++xx) {
                    out[((t * H + y) * W + xx) * C + c] = x->data[idx4(t, c, y, xx, C, H, W)];
                }
            }
        }
    }
    return detail::make_node(
        {N, C}, std::move(out), {x},
        [x, T, C, H, W](Tensor& self) {
            if (!x->requires_grad) return;
            auto& g = x->grad_ref();
            for (std::int64_t t = 0; t < T; ++t) {
                for (std::int64_t c = 0; c < C; ++c) {
                    for (std::int64_t y = 0; y < H; ++y) {
                        for (std::int64_t xx = 0; xx < W; ++xx) {
                            g[idx4(t, c, y, xx, C, H, W)] +=
                                self.grad[((t * H + y) * W + xx) * C + c];
                        }
                    }
                }
            }
        },
        "grid_to_rows");
}

TensorPtr rows_to_grid(const TensorPtr& x, std::int64_t frames, std::int64_t h, std::int64_t w) {
    require(x->rank() == 2, "rows_to_grid: rank-2 required");
    const std::int64_t N = x->dim(0), C = x->dim(1);
    require(N == frames * h * w, "rows_to_grid: row count does not equal T*H*W");
    std::vector<double> out(x->data.size());
    for (std::int64_t t = 0; t < frames; ++t) {
        for (std::int64_t c = 0; c < C; ++c) {
            for (std::int64_t y = 0; y < h; ++y) {
                for (std::int64_t xx = 0; xx < w; ++xx) {
                    out[idx4(t, c, y, xx, C, h, w)] = x->data[((t * h + y) * w + xx) * C + c];
                }
            }
        }
    }
    return detail::make_node(
        {frames, C, h, w}, std::move(out), {x},
        [x, frames, C, h, w](Tensor& self) {
            if (!x->requires_grad) return;
            auto& g = x->grad_ref();
            for (std::int64_t t = 0; t < frames; ++t) {
                for (std::int64_t c = 0; c < C; ++c) {
                    for (std::int64_t y = 0; y < h; ++y) {
                        for (std::int64_t xx = 0; xx < w; ++xx) {
                            g[((t * h + y) * w + xx) * C + c] +=
                                self.grad[idx4(t, c, y, xx, C, h, w)];
                        }
                    }
                }
            }
        },
        "rows_to_grid");
}

TensorPtr mul_mask_channels(const TensorPtr& x, const TensorPtr& mask) {
    require(x->rank() == 4, "mul_mask_channels: [T,C,H,W] required");
    const std::int64_t T = x->dim(0), C = x->dim(1), H = x->dim(2), W = x->dim(3);
    require(mask->rank() == 4 && mask->dim(0) == T && mask->dim(1) == 1 && mask->dim(2) == H &&
                mask->dim(3) == W,
            "mul_mask_channels: mask must be [T,1,H,W] matching x");
    if (mask->requires_grad) {
        throw ValueError("mul_mask_channels: mask must be a constant (untracked) tensor");
    }
    std::vector<double> out(x->data.size());
    for (std::int64_t t = 0; t < T; ++t) {
        for (std::int64_t c = 0; c < C; ++c) {
            for (std::int64_t y = 0; y < H; ++y) {
                for (std::int64_t xx = 0; xx < W; ++xx) {
                    out[idx4(t, c, y, xx, C, H, W)] = x->data[idx4(t, c, y, xx, C, H, W)] *
                                                      mask->data[(t * H + y) * W + xx];
                }
            }
        }
    }
    return detail::make_node(
        std::vector<std::int64_t>{T, C, H, W}, std::move(out), {x},
        [x, mask, T, C, H, W](Tensor& self) {
            if (!x->requires_grad) return;
            auto& g = x->grad_ref();
            for (std::int64_t t = 0; t < T; ++t) {
                for (std::int64_t c = 0; c < C; ++c) {
                    for (std::int64_t y = 0; y < H; ++y) {
                        for (std::int64_t xx = 0; xx < W; ++xx) {
                            g[idx4(t, c, y, xx, C, H, W)] +=
                                self.grad[idx4(t, c, y, xx, C, H, W)] *
                                mask->data[(t * H + y) * W + xx];
                        }
                    }
                }
            }
        },
        "mul_mask_channels");
}

// ---- MAC instrumentation ---------------------------------------------------------

MacCounterScope::MacCounterScope() { ++g_mac_depth; }
MacCounterScope::~MacCounterScope() { --g_mac_depth; }

std::uint64_t mac_counter_value() { return g_macs; }
void mac_counter_reset() { g_macs = 0; }

} // namespace dmt
