#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "deeppyram/gemm.hpp"
#include "deeppyram/tensor.hpp"

namespace deeppyram {

// ---------------------------------------------------------------------------
// conv2d: im2col gather + GEMM, with a direct-loop reference used by tests.
// ---------------------------------------------------------------------------

inline int64_t conv_out_extent(int64_t in, int64_t pad, int64_t dilation, int64_t k, int64_t stride) {
    return (in + 2 * pad - dilation * (k - 1) - 1) / stride + 1;
}

namespace detail {

// columns layout: row = (ci, kh, kw), col = (ho, wo); zero outside the image.
template <typename T>
void im2col(const T* x, int64_t C, int64_t H, int64_t W, int64_t kh, int64_t kw,
            int64_t stride, int64_t pad, int64_t dilation, int64_t Ho, int64_t Wo, T* col) {
    for (int64_t c = 0; c < C; ++c) {
        for (int64_t i = 0; i < kh; ++i) {
            for (int64_t j = 0; j < kw; ++j) {
                T* dst = col + ((c * kh + i) * kw + j) * (Ho * Wo);
                const T* src = x + c * H * W;
                for (int64_t ho = 0; ho < Ho; ++ho) {
                    const int64_t ih = ho * stride - pad + i * dilation;
                    if (ih < 0 || ih >= H) {
                        for (int64_t wo = 0; wo < Wo; ++wo) dst[ho * Wo + wo] = T(0);
                        continue;
                    }
                    const T* row = src + ih * W;
                    for (int64_t wo = 0; wo < Wo; ++wo) {
                        const int64_t iw = wo * stride - pad + j * dilation;
                        dst[ho * Wo + wo] = (iw >= 0 && iw < W) ? row[iw] : T(0);
                    }
                }
            }
        }
    }
}

template <typename T>
void col2im_acc(const T* col, int64_t C, int64_t H, int64_t W, int64_t kh, int64_t kw,
                int64_t stride, int64_t pad, int64_t dilation, int64_t Ho, int64_t Wo, T* gx) {
    for (int64_t c = 0; c < C; ++c) {
        for (int64_t i = 0; i < kh; ++i) {
            for (int64_t j = 0; j < kw; ++j) {
                const T* src = col + ((c * kh + i) * kw + j) * (Ho * Wo);
                T* dst = gx + c * H * W;
                for (int64_t ho = 0; ho < Ho; ++ho) {
                    const int64_t ih = ho * stride - pad + i * dilation;
                    if (ih < 0 || ih >= H) continue;
                    T* row = dst + ih * W;
                    for (int64_t wo = 0; wo < Wo; ++wo) {
                        const int64_t iw = wo * stride - pad + j * dilation;
                        if (iw >= 0 && iw < W) row[iw] += src[ho * Wo + wo];
                    }
                }
            }
        }
    }
}

// Naive seven-loop convolution over raw buffers; reference for the GEMM path.
template <typename T>
void conv2d_direct(const T* x, Shape4 xs, const T* w, Shape4 ws, const T* bias,
                   int64_t stride, int64_t pad, int64_t dilation, int64_t groups, T* out,
                   int64_t Ho, int64_t Wo) {
    const int64_t cin_g = ws.c;
    const int64_t cout_g = ws.n / groups;
    for (int64_t n = 0; n < xs.n; ++n) {
        for (int64_t co = 0; co < ws.n; ++co) {
            const int64_t g = co / cout_g;
            for (int64_t ho = 0; ho < Ho; ++ho) {
                for (int64_t wo = 0; wo < Wo; ++wo) {
                    T acc = bias ? bias[co] : T(0);
                    for (int64_t ci = 0; ci < cin_g; ++ci) {
                        const int64_t xc = g * cin_g + ci;
                        for (int64_t i = 0; i < ws.h; ++i) {
                            const int64_t ih = ho * stride - pad + i * dilation;
                            if (ih < 0 || ih >= xs.h) continue;
                            for (int64_t j = 0; j < ws.w; ++j) {
                                const int64_t iw = wo * stride - pad + j * dilation;
                                if (iw < 0 || iw >= xs.w) continue;
                                acc += x[((n * xs.c + xc) * xs.h + ih) * xs.w + iw] *
                                       w[((co * cin_g + ci) * ws.h + i) * ws.w + j];
                            }
                        }
                    }
                    out[((n * ws.n + co) * Ho + ho) * Wo + wo] = acc;
                }
            }
        }
    }
}

} // namespace detail

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b = {},
                 int64_t stride = 1, int64_t padding = 0, int64_t dilation = 1,
                 int64_t groups = 1) {
    const Shape4 xs = x.shape();
    const Shape4 ws = w.shape();
    if (padding < 0 || stride < 1 || dilation < 1)
        throw ConfigError("conv2d: invalid stride/padding/dilation");
    if (groups < 1 || xs.c % groups != 0 || ws.n % groups != 0)
        throw ConfigError("conv2d: groups must divide input and output channels");
    if (ws.c != xs.c / groups)
        throw DimensionError("conv2d: weight expects " + std::to_string(ws.c * groups) +
                             " input channels, got " + std::to_string(xs.c));
    if (b.defined() && (b.numel() != ws.n))
        throw DimensionError("conv2d: bias length must equal output channels");
    const int64_t Ho = conv_out_extent(xs.h, padding, dilation, ws.h, stride);
    const int64_t Wo = conv_out_extent(xs.w, padding, dilation, ws.w, stride);
    if (Ho < 1 || Wo < 1) throw DimensionError("conv2d: kernel larger than padded input");

    const int64_t K = xs.c * ws.h * ws.w;      // all col rows
    const int64_t Kg = ws.c * ws.h * ws.w;     // rows per group
    const int64_t cout_g = ws.n / groups;
    const int64_t plane = Ho * Wo;

    Tensor<T> out = Tensor<T>::zeros({xs.n, ws.n, Ho, Wo});
    std::vector<T> col(static_cast<size_t>(K * plane));
    for (int64_t n = 0; n < xs.n; ++n) {
        detail::im2col(x.data() + n * xs.c * xs.h * xs.w, xs.c, xs.h, xs.w, ws.h, ws.w,
                       stride, padding, dilation, Ho, Wo, col.data());
        for (int64_t g = 0; g < groups; ++g) {
            detail::gemm_nn(cout_g, plane, Kg, w.data() + g * cout_g * Kg,
                            col.data() + g * Kg * plane,
                            out.data() + (n * ws.n + g * cout_g) * plane);
        }
        if (b.defined()) {
            for (int64_t co = 0; co < ws.n; ++co) {
                T* dst = out.data() + (n * ws.n + co) * plane;
                const T bv = b.data()[co];
                for (int64_t i = 0; i < plane; ++i) dst[i] += bv;
            }
        }
    }

    detail::attach_backward(out, "conv2d", b.defined() ? std::initializer_list<Tensor<T>>{x, w, b}
                                                       : std::initializer_list<Tensor<T>>{x, w},
        [x, w, b, stride, padding, dilation, groups, Ho, Wo](TensorImpl<T>& self) mutable {
            const Shape4 xs = x.shape();
            const Shape4 ws = w.shape();
            const int64_t K = xs.c * ws.h * ws.w;
            const int64_t Kg = ws.c * ws.h * ws.w;
            const int64_t cout_g = ws.n / groups;
            const int64_t plane = Ho * Wo;
            const T* gout = self.grad.data();

            std::vector<T> col(static_cast<size_t>(K * plane));
            std::vector<T> gcol(x.requires_grad() ? static_cast<size_t>(K * plane) : 0);
            for (int64_t n = 0; n < xs.n; ++n) {
                if (w.requires_grad() || x.requires_grad())
                    detail::im2col(x.data() + n * xs.c * xs.h * xs.w, xs.c, xs.h, xs.w, ws.h,
                                   ws.w, stride, padding, dilation, Ho, Wo, col.data());
                for (int64_t g = 0; g < groups; ++g) {
                    const T* go = gout + (n * ws.n + g * cout_g) * plane;
                    if (w.requires_grad())
                        detail::gemm_nt_acc(cout_g, Kg, plane, go, col.data() + g * Kg * plane,
                                            w.grad().data() + g * cout_g * Kg);
                    if (x.requires_grad())
                        detail::gemm_tn(Kg, plane, cout_g, w.data() + g * cout_g * Kg, go,
                                        gcol.data() + g * Kg * plane);
                }
                if (x.requires_grad())
                    detail::col2im_acc(gcol.data(), xs.c, xs.h, xs.w, ws.h, ws.w, stride,
                                       padding, dilation, Ho, Wo,
                                       x.grad().data() + n * xs.c * xs.h * xs.w);
            }
            if (b.defined() && b.requires_grad()) {
                T* gb = b.grad().data();
                for (int64_t n = 0; n < xs.n; ++n)
                    for (int64_t co = 0; co < ws.n; ++co) {
                        const T* go = gout + (n * ws.n + co) * plane;
                        T acc = T(0);
                        for (int64_t i = 0; i < plane; ++i) acc += go[i];
                        gb[co] += acc;
                    }
            }
        });
    return out;
}

// ---------------------------------------------------------------------------
// transposed conv (stride-s upscatter); weight layout (Cin, Cout, Kh, Kw)
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> transposed_conv2d(const Tensor<T>& x, const Tensor<T>& w, int64_t stride,
                            const Tensor<T>& b = {}) {
    const Shape4 xs = x.shape();
    const Shape4 ws = w.shape();
    if (ws.n != xs.c) throw DimensionError("transposed_conv2d: weight Cin mismatch");
    const int64_t Co = ws.c;
    const int64_t Ho = (xs.h - 1) * stride + ws.h;
    const int64_t Wo = (xs.w - 1) * stride + ws.w;
    if (b.defined() && b.numel() != Co)
        throw DimensionError("transposed_conv2d: bias length must equal output channels");

    Tensor<T> out = Tensor<T>::zeros({xs.n, Co, Ho, Wo});
    for (int64_t n = 0; n < xs.n; ++n) {
        if (b.defined())
            for (int64_t co = 0; co < Co; ++co) {
                T* dst = out.data() + (n * Co + co) * Ho * Wo;
                for (int64_t i = 0; i < Ho * Wo; ++i) dst[i] = b.data()[co];
            }
        for (int64_t ci = 0; ci < xs.c; ++ci) {
            const T* src = x.data() + (n * xs.c + ci) * xs.h * xs.w;
            for (int64_t co = 0; co < Co; ++co) {
                T* dst = out.data() + (n * Co + co) * Ho * Wo;
                const T* wk = w.data() + (ci * Co + co) * ws.h * ws.w;
                for (int64_t ih = 0; ih < xs.h; ++ih)
                    for (int64_t iw = 0; iw < xs.w; ++iw) {
                        const T v = src[ih * xs.w + iw];
                        if (v == T(0)) continue;
                        for (int64_t i = 0; i < ws.h; ++i)
                            for (int64_t j = 0; j < ws.w; ++j)
                                dst[(ih * stride + i) * Wo + (iw * stride + j)] += v * wk[i * ws.w + j];
                    }
            }
        }
    }

    detail::attach_backward(out, "transposed_conv2d",
        b.defined() ? std::initializer_list<Tensor<T>>{x, w, b}
                    : std::initializer_list<Tensor<T>>{x, w},
        [x, w, b, stride, Ho, Wo](TensorImpl<T>& self) mutable {
            const Shape4 xs = x.shape();
            const Shape4 ws = w.shape();
            const int64_t Co = ws.c;
            const T* gout = self.grad.data();
            for (int64_t n = 0; n < xs.n; ++n) {
                for (int64_t ci = 0; ci < xs.c; ++ci) {
                    for (int64_t co = 0; co < Co; ++co) {
                        const T* go = gout + (n * Co + co) * Ho * Wo;
                        const T* wk = w.data() + (ci * Co + co) * ws.h * ws.w;
                        const T* src = x.data() + (n * xs.c + ci) * xs.h * xs.w;
                        T* gx = x.requires_grad() ? x.grad().data() + (n * xs.c + ci) * xs.h * xs.w : nullptr;
                        T* gw = w.requires_grad() ? w.grad().data() + (ci * Co + co) * ws.h * ws.w : nullptr;
                        for (int64_t ih = 0; ih < xs.h; ++ih)
                            for (int64_t iw = 0; iw < xs.w; ++iw) {
                                T acc = T(0);
                                for (int64_t i = 0; i < ws.h; ++i)
                                    for (int64_t j = 0; j < ws.w; ++j) {
                                        const T g = go[(ih * stride + i) * Wo + (iw * stride + j)];
                                        acc += g * wk[i * ws.w + j];
                                        if (gw) gw[i * ws.w + j] += g * src[ih * xs.w + iw];
                                    }
                                if (gx) gx[ih * xs.w + iw] += acc;
                            }
                    }
                }
            }
            if (b.defined() && b.requires_grad()) {
                T* gb = b.grad().data();
                for (int64_t n = 0; n < xs.n; ++n)
                    for (int64_t co = 0; co < Co; ++co) {
                        const T* go = gout + (n * Co + co) * Ho * Wo;
                        T acc = T(0);
                        for (int64_t i = 0; i < Ho * Wo; ++i) acc += go[i];
                        gb[co] += acc;
                    }
            }
        });
    return out;
}

// ---------------------------------------------------------------------------
// pixel shuffle: (N, C*r^2, H, W) -> (N, C, r*H, r*W)
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> pixel_shuffle(const Tensor<T>& x, int64_t factor) {
    const Shape4 xs = x.shape();
    const int64_t r2 = factor * factor;
    if (factor < 1 || xs.c % r2 != 0)
        throw ConfigError("pixel_shuffle: channels must be divisible by factor^2");
    const int64_t Co = xs.c / r2;
    Tensor<T> out = Tensor<T>::zeros({xs.n, Co, xs.h * factor, xs.w * factor});
    const int64_t Ho = xs.h * factor, Wo = xs.w * factor;
    for (int64_t n = 0; n < xs.n; ++n)
        for (int64_t c = 0; c < Co; ++c)
            for (int64_t dy = 0; dy < factor; ++dy)
                for (int64_t dx = 0; dx < factor; ++dx) {
                    const T* src = x.data() + ((n * xs.c + (c * r2 + dy * factor + dx)) * xs.h) * xs.w;
                    T* dst = out.data() + (n * Co + c) * Ho * Wo;
                    for (int64_t h = 0; h < xs.h; ++h)
                        for (int64_t w = 0; w < xs.w; ++w)
                            dst[(h * factor + dy) * Wo + (w * factor + dx)] = src[h * xs.w + w];
                }
    detail::attach_backward(out, "pixel_shuffle", {x}, [x, factor, Co, Ho, Wo](TensorImpl<T>& self) mutable {
        const Shape4 xs = x.shape();
        const int64_t r2 = factor * factor;
        const T* g = self.grad.data();
        T* gx = x.grad().data();
        for (int64_t n = 0; n < xs.n; ++n)
            for (int64_t c = 0; c < Co; ++c)
                for (int64_t dy = 0; dy < factor; ++dy)
                    for (int64_t dx = 0; dx < factor; ++dx) {
                        T* dst = gx + ((n * xs.c + (c * r2 + dy * factor + dx)) * xs.h) * xs.w;
                        const T* src = g + (n * Co + c) * Ho * Wo;
                        for (int64_t h = 0; h < xs.h; ++h)
                            for (int64_t w = 0; w < xs.w; ++w)
                                dst[h * xs.w + w] += src[(h * factor + dy) * Wo + (w * factor + dx)];
                    }
    });
    return out;
}

// ---------------------------------------------------------------------------
// pooling
// ---------------------------------------------------------------------------

// Average pooling whose divisor counts only in-bounds taps, so constants are
// preserved at borders with same-size stride-1 padding.
template <typename T>
Tensor<T> avg_pool2d(const Tensor<T>& x, int64_t kernel, int64_t stride, int64_t padding) {
    const Shape4 xs = x.shape();
    const int64_t Ho = conv_out_extent(xs.h, padding, 1, kernel, stride);
    const int64_t Wo = conv_out_extent(xs.w, padding, 1, kernel, stride);
    if (Ho < 1 || Wo < 1) throw DimensionError("avg_pool2d: kernel larger than padded input");
    Tensor<T> out = Tensor<T>::zeros({xs.n, xs.c, Ho, Wo});
    for (int64_t nc = 0; nc < xs.n * xs.c; ++nc) {
        const T* src = x.data() + nc * xs.h * xs.w;
        T* dst = out.data() + nc * Ho * Wo;
        for (int64_t ho = 0; ho < Ho; ++ho)
            for (int64_t wo = 0; wo < Wo; ++wo) {
                const int64_t h0 = std::max<int64_t>(0, ho * stride - padding);
                const int64_t h1 = std::min(xs.h, ho * stride - padding + kernel);
                const int64_t w0 = std::max<int64_t>(0, wo * stride - padding);
                const int64_t w1 = std::min(xs.w, wo * stride - padding + kernel);
                T acc = T(0);
                for (int64_t ih = h0; ih < h1; ++ih)
                    for (int64_t iw = w0; iw < w1; ++iw) acc += src[ih * xs.w + iw];
                dst[ho * Wo + wo] = acc / static_cast<T>((h1 - h0) * (w1 - w0));
            }
    }
    detail::attach_backward(out, "avg_pool2d", {x}, [x, kernel, stride, padding, Ho, Wo](TensorImpl<T>& self) mutable {
        const Shape4 xs = x.shape();
        const T* g = self.grad.data();
        T* gx = x.grad().data();
        for (int64_t nc = 0; nc < xs.n * xs.c; ++nc) {
            T* dst = gx + nc * xs.h * xs.w;
            const T* go = g + nc * Ho * Wo;
            for (int64_t ho = 0; ho < Ho; ++ho)
                for (int64_t wo = 0; wo < Wo; ++wo) {
                    const int64_t h0 = std::max<int64_t>(0, ho * stride - padding);
                    const int64_t h1 = std::min(xs.h, ho * stride - padding + kernel);
                    const int64_t w0 = std::max<int64_t>(0, wo * stride - padding);
                    const int64_t w1 = std::min(xs.w, wo * stride - padding + kernel);
                    const T gv = go[ho * Wo + wo] / static_cast<T>((h1 - h0) * (w1 - w0));
                    for (int64_t ih = h0; ih < h1; ++ih)
                        for (int64_t iw = w0; iw < w1; ++iw) dst[ih * xs.w + iw] += gv;
                }
        }
    });
    return out;
}

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
    const Shape4 xs = x.shape();
    if (xs.h < 1 || xs.w < 1) throw DimensionError("global_avg_pool: empty spatial extent");
    Tensor<T> out = Tensor<T>::zeros({xs.n, xs.c, 1, 1});
    const int64_t plane = xs.h * xs.w;
    for (int64_t nc = 0; nc < xs.n * xs.c; ++nc) {
        const T* src = x.data() + nc * plane;
        T acc = T(0);
        for (int64_t i = 0; i < plane; ++i) acc += src[i];
        out.data()[nc] = acc / static_cast<T>(plane);
    }
    detail::attach_backward(out, "global_avg_pool", {x}, [x, plane](TensorImpl<T>& self) mutable {
        const Shape4 xs = x.shape();
        const T* g = self.grad.data();
        T* gx = x.grad().data();
        for (int64_t nc = 0; nc < xs.n * xs.c; ++nc) {
            const T gv = g[nc] / static_cast<T>(plane);
            T* dst = gx + nc * plane;
            for (int64_t i = 0; i < plane; ++i) dst[i] += gv;
        }
    });
    return out;
}

// Max pooling; backward routes the gradient to the argmax, ties broken by the
// first element in row-major order.
template <typename T>
Tensor<T> max_pool2d(const Tensor<T>& x, int64_t kernel, int64_t stride) {
    const Shape4 xs = x.shape();
    const int64_t Ho = (xs.h - kernel) / stride + 1;
    const int64_t Wo = (xs.w - kernel) / stride + 1;
    if (kernel > xs.h || kernel > xs.w) throw DimensionError("max_pool2d: kernel larger than input");
    Tensor<T> out = Tensor<T>::zeros({xs.n, xs.c, Ho, Wo});
    auto argmax = std::make_shared<std::vector<int32_t>>(static_cast<size_t>(out.numel()));
    for (int64_t nc = 0; nc < xs.n * xs.c; ++nc) {
        const T* src = x.data() + nc * xs.h * xs.w;
        T* dst = out.data() + nc * Ho * Wo;
        int32_t* am = argmax->data() + nc * Ho * Wo;
        for (int64_t ho = 0; ho < Ho; ++ho)
            for (int64_t wo = 0; wo < Wo; ++wo) {
                T best = src[(ho * stride) * xs.w + wo * stride];
                int32_t best_idx = static_cast<int32_t>((ho * stride) * xs.w + wo * stride);
                for (int64_t i = 0; i < kernel; ++i)
                    for (int64_t j = 0; j < kernel; ++j) {
                        const int64_t idx = (ho * stride + i) * xs.w + (wo * stride + j);
                        // NaN wins so it propagates instead of being dropped
                        if (src[idx] > best || std::isnan(src[idx])) {
                            best = src[idx];
                            best_idx = static_cast<int32_t>(idx);
                        }
                    }
                dst[ho * Wo + wo] = best;
                am[ho * Wo + wo] = best_idx;
            }
    }
    detail::attach_backward(out, "max_pool2d", {x}, [x, argmax, Ho, Wo](TensorImpl<T>& self) mutable {
        const Shape4 xs = x.shape();
        const T* g = self.grad.data();
        T* gx = x.grad().data();
        for (int64_t nc = 0; nc < xs.n * xs.c; ++nc) {
            const int32_t* am = argmax->data() + nc * Ho * Wo;
            const T* go = g + nc * Ho * Wo;
            T* dst = gx + nc * xs.h * xs.w;
            for (int64_t i = 0; i < Ho * Wo; ++i) dst[am[i]] += go[i];
        }
    });
    return out;
}

// Average pooling into bins_h x bins_w sub-regions (floor/ceil partition).
template <typename T>
Tensor<T> adaptive_avg_pool2d(const Tensor<T>& x, int64_t bins_h, int64_t bins_w) {
    const Shape4 xs = x.shape();
    if (bins_h < 1 || bins_w < 1)
        throw DimensionError("adaptive_avg_pool2d: invalid bin count");
    Tensor<T> out = Tensor<T>::zeros({xs.n, xs.c, bins_h, bins_w});
    // floor/ceil partition; with more bins than pixels, neighboring bins
    // share pixels but every bin stays non-empty
    auto bound = [](int64_t i, int64_t bins, int64_t extent) {
        return std::pair<int64_t, int64_t>{(i * extent) / bins,
                                           ((i + 1) * extent + bins - 1) / bins};
    };
    for (int64_t nc = 0; nc < xs.n * xs.c; ++nc) {
        const T* src = x.data() + nc * xs.h * xs.w;
        T* dst = out.data() + nc * bins_h * bins_w;
        for (int64_t bh = 0; bh < bins_h; ++bh) {
            auto [h0, h1] = bound(bh, bins_h, xs.h);
            for (int64_t bw = 0; bw < bins_w; ++bw) {
                auto [w0, w1] = bound(bw, bins_w, xs.w);
                T acc = T(0);
                for (int64_t ih = h0; ih < h1; ++ih)
                    for (int64_t iw = w0; iw < w1; ++iw) acc += src[ih * xs.w + iw];
                dst[bh * bins_w + bw] = acc / static_cast<T>((h1 - h0) * (w1 - w0));
            }
        }
    }
    detail::attach_backward(out, "adaptive_avg_pool2d", {x}, [x, bins_h, bins_w](TensorImpl<T>& self) mutable {
        const Shape4 xs = x.shape();
        const T* g = self.grad.data();
        T* gx = x.grad().data();
        auto bound = [](int64_t i, int64_t bins, int64_t extent) {
            return std::pair<int64_t, int64_t>{(i * extent) / bins,
                                               ((i + 1) * extent + bins - 1) / bins};
        };
        for (int64_t nc = 0; nc < xs.n * xs.c; ++nc) {
            const T* go = g + nc * bins_h * bins_w;
            T* dst = gx + nc * xs.h * xs.w;
            for (int64_t bh = 0; bh < bins_h; ++bh) {
                auto [h0, h1] = bound(bh, bins_h, xs.h);
                for (int64_t bw = 0; bw < bins_w; ++bw) {
                    auto [w0, w1] = bound(bw, bins_w, xs.w);
                    const T gv = go[bh * bins_w + bw] / static_cast<T>((h1 - h0) * (w1 - w0));
                    for (int64_t ih = h0; ih < h1; ++ih)
                        for (int64_t iw = w0; iw < w1; ++iw) dst[ih * xs.w + iw] += gv;
                }
            }
        }
    });
    return out;
}

// ---------------------------------------------------------------------------
// bilinear upsample, half-pixel centers (align-corners off), edge replicate
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> bilinear_upsample(const Tensor<T>& x, int64_t out_h, int64_t out_w) {
    const Shape4 xs = x.shape();
    if (out_h < 1 || out_w < 1) throw DimensionError("bilinear_upsample: invalid output size");
    Tensor<T> out = Tensor<T>::zeros({xs.n, xs.c, out_h, out_w});

    // precompute per-axis sample positions and weights
    struct Tap { int64_t lo, hi; T w_hi; };
    auto make_taps = [](int64_t in, int64_t outn) {
        std::vector<Tap> taps(static_cast<size_t>(outn));
        const double s = static_cast<double>(in) / static_cast<double>(outn);
        for (int64_t o = 0; o < outn; ++o) {
            double pos = (static_cast<double>(o) + 0.5) * s - 0.5;
            double fl = std::floor(pos);
            double frac = pos - fl;
            int64_t lo = static_cast<int64_t>(fl);
            int64_t hi = lo + 1;
            taps[o] = {std::clamp<int64_t>(lo, 0, in - 1), std::clamp<int64_t>(hi, 0, in - 1),
                       static_cast<T>(frac)};
        }
        return taps;
    };
    auto ytaps = std::make_shared<std::vector<Tap>>(make_taps(xs.h, out_h));
    auto xtaps = std::make_shared<std::vector<Tap>>(make_taps(xs.w, out_w));

    for (int64_t nc = 0; nc < xs.n * xs.c; ++nc) {
        const T* src = x.data() + nc * xs.h * xs.w;
        T* dst = out.data() + nc * out_h * out_w;
        for (int64_t oy = 0; oy < out_h; ++oy) {
            const Tap& ty = (*ytaps)[oy];
            const T* r0 = src + ty.lo * xs.w;
            const T* r1 = src + ty.hi * xs.w;
            for (int64_t ox = 0; ox < out_w; ++ox) {
                const Tap& tx = (*xtaps)[ox];
                const T top = r0[tx.lo] + tx.w_hi * (r0[tx.hi] - r0[tx.lo]);
                const T bot = r1[tx.lo] + tx.w_hi * (r1[tx.hi] - r1[tx.lo]);
                dst[oy * out_w + ox] = top + ty.w_hi * (bot - top);
            }
        }
    }
    detail::attach_backward(out, "bilinear_upsample", {x}, [x, ytaps, xtaps, out_h, out_w](TensorImpl<T>& self) mutable {
        const Shape4 xs = x.shape();
        const T* g = self.grad.data();
        T* gx = x.grad().data();
        for (int64_t nc = 0; nc < xs.n * xs.c; ++nc) {
            const T* go = g + nc * out_h * out_w;
            T* dst = gx + nc * xs.h * xs.w;
            for (int64_t oy = 0; oy < out_h; ++oy) {
                const auto& ty = (*ytaps)[oy];
                for (int64_t ox = 0; ox < out_w; ++ox) {
                    const auto& tx = (*xtaps)[ox];
                    const T gv = go[oy * out_w + ox];
                    dst[ty.lo * xs.w + tx.lo] += (T(1) - ty.w_hi) * (T(1) - tx.w_hi) * gv;
                    dst[ty.lo * xs.w + tx.hi] += (T(1) - ty.w_hi) * tx.w_hi * gv;
                    dst[ty.hi * xs.w + tx.lo] += ty.w_hi * (T(1) - tx.w_hi) * gv;
                    dst[ty.hi * xs.w + tx.hi] += ty.w_hi * tx.w_hi * gv;
                }
            }
        }
    });
    return out;
}

// ---------------------------------------------------------------------------
// normalization
// ---------------------------------------------------------------------------

// Batch norm over (N,H,W) per channel. In training mode, uses batch
// statistics and updates running stats in place (momentum mixing, unbiased
// variance for the running estimate). gamma/beta are (1,C,1,1).
template <typename T>
Tensor<T> batch_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     Tensor<T>& running_mean, Tensor<T>& running_var, bool training,
                     T momentum = T(0.1), T eps = T(1e-5)) {
    const Shape4 xs = x.shape();
    const int64_t C = xs.c;
    if (gamma.numel() != C || beta.numel() != C || running_mean.numel() != C || running_var.numel() != C)
        throw DimensionError("batch_norm: parameter length must equal channel count");
    const int64_t m = xs.n * xs.h * xs.w;
    const int64_t plane = xs.h * xs.w;

    auto mean_v = std::make_shared<std::vector<T>>(static_cast<size_t>(C), T(0));
    auto inv_std = std::make_shared<std::vector<T>>(static_cast<size_t>(C), T(0));

    if (training) {
        for (int64_t c = 0; c < C; ++c) {
            T acc = T(0);
            for (int64_t n = 0; n < xs.n; ++n) {
                const T* src = x.data() + (n * C + c) * plane;
                for (int64_t i = 0; i < plane; ++i) acc += src[i];
            }
            const T mu = acc / static_cast<T>(m);
            T var = T(0);
            for (int64_t n = 0; n < xs.n; ++n) {
                const T* src = x.data() + (n * C + c) * plane;
                for (int64_t i = 0; i < plane; ++i) {
                    const T d = src[i] - mu;
                    var += d * d;
                }
            }
            var /= static_cast<T>(m);
            (*mean_v)[c] = mu;
            (*inv_std)[c] = T(1) / std::sqrt(var + eps);
            const T unbiased = m > 1 ? var * static_cast<T>(m) / static_cast<T>(m - 1) : var;
            running_mean.data()[c] = (T(1) - momentum) * running_mean.data()[c] + momentum * mu;
            running_var.data()[c] = (T(1) - momentum) * running_var.data()[c] + momentum * unbiased;
        }
    } else {
        for (int64_t c = 0; c < C; ++c) {
            (*mean_v)[c] = running_mean.data()[c];
            (*inv_std)[c] = T(1) / std::sqrt(running_var.data()[c] + eps);
        }
    }

    Tensor<T> out = Tensor<T>::zeros(xs);
    for (int64_t n = 0; n < xs.n; ++n)
        for (int64_t c = 0; c < C; ++c) {
            const T* src = x.data() + (n * C + c) * plane;
            T* dst = out.data() + (n * C + c) * plane;
            const T mu = (*mean_v)[c], is = (*inv_std)[c];
            const T gm = gamma.data()[c], bt = beta.data()[c];
            for (int64_t i = 0; i < plane; ++i) dst[i] = gm * (src[i] - mu) * is + bt;
        }

    detail::attach_backward(out, "batch_norm", {x, gamma, beta},
        [x, gamma, beta, mean_v, inv_std, training, m, plane](TensorImpl<T>& self) mutable {
            const Shape4 xs = x.shape();
            const int64_t C = xs.c;
            const T* g = self.grad.data();
            for (int64_t c = 0; c < C; ++c) {
                const T mu = (*mean_v)[c], is = (*inv_std)[c], gm = gamma.data()[c];
                // reductions over the channel slice
                T sum_dy = T(0), sum_dy_xhat = T(0);
                for (int64_t n = 0; n < xs.n; ++n) {
                    const T* go = g + (n * C + c) * plane;
                    const T* src = x.data() + (n * C + c) * plane;
                    for (int64_t i = 0; i < plane; ++i) {
                        sum_dy += go[i];
                        sum_dy_xhat += go[i] * (src[i] - mu) * is;
                    }
                }
                if (gamma.requires_grad()) gamma.grad()[c] += sum_dy_xhat;
                if (beta.requires_grad()) beta.grad()[c] += sum_dy;
                if (!x.requires_grad()) continue;
                const T inv_m = T(1) / static_cast<T>(m);
                for (int64_t n = 0; n < xs.n; ++n) {
                    const T* go = g + (n * C + c) * plane;
                    const T* src = x.data() + (n * C + c) * plane;
                    T* gx = x.grad().data() + (n * C + c) * plane;
                    if (training) {
                        for (int64_t i = 0; i < plane; ++i) {
                            const T xhat = (src[i] - mu) * is;
                            gx[i] += gm * is * (go[i] - sum_dy * inv_m - xhat * sum_dy_xhat * inv_m);
                        }
                    } else {
                        for (int64_t i = 0; i < plane; ++i) gx[i] += gm * is * go[i];
                    }
                }
            }
        });
    return out;
}

// Layer norm over (C,H,W) per sample, no affine parameters.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, T eps = T(1e-5)) {
    const Shape4 xs = x.shape();
    const int64_t m = xs.c * xs.h * xs.w;
    auto mean_v = std::make_shared<std::vector<T>>(static_cast<size_t>(xs.n));
    auto inv_std = std::make_shared<std::vector<T>>(static_cast<size_t>(xs.n));
    Tensor<T> out = Tensor<T>::zeros(xs);
    for (int64_t n = 0; n < xs.n; ++n) {
        const T* src = x.data() + n * m;
        T acc = T(0);
        for (int64_t i = 0; i < m; ++i) acc += src[i];
        const T mu = acc / static_cast<T>(m);
        T var = T(0);
        for (int64_t i = 0; i < m; ++i) {
            const T d = src[i] - mu;
            var += d * d;
        }
        var /= static_cast<T>(m);
        const T is = T(1) / std::sqrt(var + eps);
        (*mean_v)[n] = mu;
        (*inv_std)[n] = is;
        T* dst = out.data() + n * m;
        for (int64_t i = 0; i < m; ++i) dst[i] = (src[i] - mu) * is;
    }
    detail::attach_backward(out, "layer_norm", {x}, [x, mean_v, inv_std, m](TensorImpl<T>& self) mutable {
        const Shape4 xs = x.shape();
        const T* g = self.grad.data();
        T* gxall = x.grad().data();
        for (int64_t n = 0; n < xs.n; ++n) {
            const T* go = g + n * m;
            const T* src = x.data() + n * m;
            T* gx = gxall + n * m;
            const T mu = (*mean_v)[n], is = (*inv_std)[n];
            T sum_dy = T(0), sum_dy_xhat = T(0);
            for (int64_t i = 0; i < m; ++i) {
                sum_dy += go[i];
                sum_dy_xhat += go[i] * (src[i] - mu) * is;
            }
            const T inv_m = T(1) / static_cast<T>(m);
            for (int64_t i = 0; i < m; ++i) {
                const T xhat = (src[i] - mu) * is;
                gx[i] += is * (go[i] - sum_dy * inv_m - xhat * sum_dy_xhat * inv_m);
            }
        }
    });
    return out;
}

// ---------------------------------------------------------------------------
// activations
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
    Tensor<T> out = Tensor<T>::zeros(x.shape());
    const T* px = x.data();
    T* po = out.data();
    // NaN propagates (framework convention) so numeric blowups stay visible.
    for (int64_t i = 0; i < x.numel(); ++i)
        po[i] = px[i] > T(0) || std::isnan(px[i]) ? px[i] : T(0);
    detail::attach_backward(out, "relu", {x}, [x](TensorImpl<T>& self) mutable {
        const T* g = self.grad.data();
        const T* px = x.data();
        T* gx = x.grad().data();
        for (int64_t i = 0; i < x.numel(); ++i)
            if (px[i] > T(0)) gx[i] += g[i];
    });
    return out;
}

// Clip to [-1, 1]; subgradient 1 on the closed interval, 0 outside.
template <typename T>
Tensor<T> hardtanh(const Tensor<T>& x) {
    return clamp(x, T(-1), T(1));
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
    Tensor<T> out = Tensor<T>::zeros(x.shape());
    const T* px = x.data();
    T* po = out.data();
    for (int64_t i = 0; i < x.numel(); ++i) po[i] = T(1) / (T(1) + std::exp(-px[i]));
    detail::attach_backward(out, "sigmoid", {x}, [x](TensorImpl<T>& self) mutable {
        const T* g = self.grad.data();
        const T* py = self.data.data();
        T* gx = x.grad().data();
        for (int64_t i = 0; i < x.numel(); ++i) gx[i] += g[i] * py[i] * (T(1) - py[i]);
    });
    return out;
}

// Softmax over the channel axis, per (n, h, w) position.
template <typename T>
Tensor<T> softmax_channels(const Tensor<T>& x) {
    const Shape4 xs = x.shape();
    Tensor<T> out = Tensor<T>::zeros(xs);
    const int64_t plane = xs.h * xs.w;
    for (int64_t n = 0; n < xs.n; ++n) {
        const T* src = x.data() + n * xs.c * plane;
        T* dst = out.data() + n * xs.c * plane;
        for (int64_t i = 0; i < plane; ++i) {
            T mx = src[i];
            for (int64_t c = 1; c < xs.c; ++c) mx = std::max(mx, src[c * plane + i]);
            T denom = T(0);
            for (int64_t c = 0; c < xs.c; ++c) {
                const T e = std::exp(src[c * plane + i] - mx);
                dst[c * plane + i] = e;
                denom += e;
            }
            for (int64_t c = 0; c < xs.c; ++c) dst[c * plane + i] /= denom;
        }
    }
    detail::attach_backward(out, "softmax_channels", {x}, [x, plane](TensorImpl<T>& self) mutable {
        const Shape4 xs = x.shape();
        const T* g = self.grad.data();
        const T* y = self.data.data();
        T* gx = x.grad().data();
        for (int64_t n = 0; n < xs.n; ++n) {
            const T* yb = y + n * xs.c * plane;
            const T* gb = g + n * xs.c * plane;
            T* gxb = gx + n * xs.c * plane;
            for (int64_t i = 0; i < plane; ++i) {
                T dot = T(0);
                for (int64_t c = 0; c < xs.c; ++c) dot += gb[c * plane + i] * yb[c * plane + i];
                for (int64_t c = 0; c < xs.c; ++c)
                    gxb[c * plane + i] += yb[c * plane + i] * (gb[c * plane + i] - dot);
            }
        }
    });
    return out;
}

// ---------------------------------------------------------------------------
// concat over channels
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& xs) {
    if (xs.empty()) throw UsageError("concat_channels: empty input list");
    const Shape4 s0 = xs[0].shape();
    int64_t ctotal = 0;
    for (const auto& t : xs) {
        const Shape4 s = t.shape();
        if (s.n != s0.n || s.h != s0.h || s.w != s0.w)
            throw DimensionError("concat_channels: N/H/W mismatch " + s.str() + " vs " + s0.str());
        ctotal += s.c;
    }
    Tensor<T> out = Tensor<T>::zeros({s0.n, ctotal, s0.h, s0.w});
    const int64_t plane = s0.h * s0.w;
    for (int64_t n = 0; n < s0.n; ++n) {
        int64_t coff = 0;
        for (const auto& t : xs) {
            const int64_t tc = t.shape().c;
            std::copy_n(t.data() + n * tc * plane, tc * plane,
                        out.data() + (n * ctotal + coff) * plane);
            coff += tc;
        }
    }
    bool any = false;
    for (const auto& t : xs)
        if (t.requires_grad()) any = true;
    out.impl()->op_name = "concat_channels";
    if (any) {
        out.impl()->requires_grad = true;
        for (const auto& t : xs) out.impl()->parents.push_back(t.impl_ptr());
        TensorImpl<T>* self = out.impl();
        auto inputs = xs;
        out.impl()->backward_fn = [self, inputs, s0, ctotal, plane]() mutable {
            const T* g = self->grad.data();
            for (int64_t n = 0; n < s0.n; ++n) {
                int64_t coff = 0;
                for (auto& t : inputs) {
                    const int64_t tc = t.shape().c;
                    if (t.requires_grad()) {
                        T* gx = t.grad().data() + n * tc * plane;
                        const T* src = g + (n * ctotal + coff) * plane;
                        for (int64_t i = 0; i < tc * plane; ++i) gx[i] += src[i];
                    }
                    coff += tc;
                }
            }
        };
    }
    return out;
}

// ---------------------------------------------------------------------------
// edge-replicate padding
// ---------------------------------------------------------------------------

// Pads by repeating the border pixels. Same-size convolutions that must keep
// uniform regions uniform (attention-style fusion blocks) use this instead of
// zero padding, which would dent the borders of a constant map.
template <typename T>
Tensor<T> pad_replicate(const Tensor<T>& x, int64_t pad) {
    if (pad < 0) throw ConfigError("pad_replicate: pad must be non-negative");
    const Shape4 xs = x.shape();
    const Shape4 os{xs.n, xs.c, xs.h + 2 * pad, xs.w + 2 * pad};
    Tensor<T> out = Tensor<T>::zeros(os);
    for (int64_t n = 0; n < xs.n; ++n)
        for (int64_t c = 0; c < xs.c; ++c) {
            const T* src = x.data() + (n * xs.c + c) * xs.h * xs.w;
            T* dst = out.data() + (n * os.c + c) * os.h * os.w;
            for (int64_t oh = 0; oh < os.h; ++oh) {
                const int64_t ih = std::clamp(oh - pad, int64_t{0}, xs.h - 1);
                for (int64_t ow = 0; ow < os.w; ++ow) {
                    const int64_t iw = std::clamp(ow - pad, int64_t{0}, xs.w - 1);
                    dst[oh * os.w + ow] = src[ih * xs.w + iw];
                }
            }
        }
    detail::attach_backward(out, "pad_replicate", {x}, [x, pad, os](TensorImpl<T>& self) mutable {
        const Shape4 xs = x.shape();
        const T* g = self.grad.data();
        T* gx = x.grad().data();
        for (int64_t n = 0; n < xs.n; ++n)
            for (int64_t c = 0; c < xs.c; ++c) {
                const T* gsrc = g + (n * os.c + c) * os.h * os.w;
                T* gdst = gx + (n * xs.c + c) * xs.h * xs.w;
                for (int64_t oh = 0; oh < os.h; ++oh) {
                    const int64_t ih = std::clamp(oh - pad, int64_t{0}, xs.h - 1);
                    for (int64_t ow = 0; ow < os.w; ++ow) {
                        const int64_t iw = std::clamp(ow - pad, int64_t{0}, xs.w - 1);
                        gdst[ih * xs.w + iw] += gsrc[oh * os.w + ow];
                    }
                }
            }
    });
    return out;
}

} // namespace deeppyram
