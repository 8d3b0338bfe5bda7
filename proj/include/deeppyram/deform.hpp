#pragma once

#include <cmath>
#include <vector>

#include "deeppyram/ops.hpp"

namespace deeppyram {

// Deformable dilated convolution. Offsets are a learned field of shape
// (N, 2*Kh*Kw, H, W): channel pair (2i, 2i+1) holds the (vertical,
// horizontal) displacement of kernel element i, shared across input
// channels. Sampling at fractional coordinates is bilinear; reads outside
// the image are zero.

namespace detail {

// Precomputed sampling geometry for one image's offset field. The sample
// coordinates depend only on the kernel element and output position — not on
// the input channel — so corner indices and bilinear weights are derived once
// and reused across all channels. Corners outside the image carry index -1
// and weight 0 (a fully out-of-range sample leaves all four at -1).
template <typename T>
struct DeformTable {
    int64_t elems = 0, plane = 0;
    std::vector<int32_t> idx;  // 4 per (elem, position)
    std::vector<T> wgt;        // matching bilinear weights
    std::vector<T> lh, lw;     // fractional parts, for coordinate gradients

    void build(const T* off, int64_t H, int64_t W, int64_t kh, int64_t kw,
               int64_t dilation) {
        elems = kh * kw;
        plane = H * W;
        idx.assign(static_cast<size_t>(4 * elems * plane), -1);
        wgt.assign(static_cast<size_t>(4 * elems * plane), T(0));
        lh.assign(static_cast<size_t>(elems * plane), T(0));
        lw.assign(static_cast<size_t>(elems * plane), T(0));
        for (int64_t i = 0; i < kh; ++i)
            for (int64_t j = 0; j < kw; ++j) {
                const int64_t elem = i * kw + j;
                const T* dy = off + (2 * elem) * plane;
                const T* dx = off + (2 * elem + 1) * plane;
                for (int64_t ho = 0; ho < H; ++ho)
                    for (int64_t wo = 0; wo < W; ++wo) {
                        const int64_t p = ho * W + wo;
                        const T y = static_cast<T>(ho - dilation + i * dilation) + dy[p];
                        const T x = static_cast<T>(wo - dilation + j * dilation) + dx[p];
                        if (y <= T(-1) || y >= T(H) || x <= T(-1) || x >= T(W)) continue;
                        const int64_t h_low = static_cast<int64_t>(std::floor(y));
                        const int64_t w_low = static_cast<int64_t>(std::floor(x));
                        const T fh = y - static_cast<T>(h_low);
                        const T fw = x - static_cast<T>(w_low);
                        const T gh = T(1) - fh, gw = T(1) - fw;
                        const size_t at = static_cast<size_t>(elem * plane + p);
                        lh[at] = fh;
                        lw[at] = fw;
                        int32_t* id = idx.data() + 4 * at;
                        T* wg = wgt.data() + 4 * at;
                        const bool top = h_low >= 0, bot = h_low + 1 < H;
                        const bool left = w_low >= 0, right = w_low + 1 < W;
                        if (top && left) {
                            id[0] = static_cast<int32_t>(h_low * W + w_low);
                            wg[0] = gh * gw;
                        }
                        if (top && right) {
                            id[1] = static_cast<int32_t>(h_low * W + w_low + 1);
                            wg[1] = gh * fw;
                        }
                        if (bot && left) {
                            id[2] = static_cast<int32_t>((h_low + 1) * W + w_low);
                            wg[2] = fh * gw;
                        }
                        if (bot && right) {
                            id[3] = static_cast<int32_t>((h_low + 1) * W + w_low + 1);
                            wg[3] = fh * fw;
                        }
                    }
            }
    }
};

// columns layout matches im2col: row = (c, i, j), col = (ho, wo)
template <typename T>
void deform_gather(const T* x, const DeformTable<T>& tb, int64_t C, T* col) {
    const int64_t rows = tb.elems * tb.plane;
    for (int64_t c = 0; c < C; ++c) {
        const T* im = x + c * tb.plane;
        const int32_t* id = tb.idx.data();
        const T* wg = tb.wgt.data();
        T* __restrict dst = col + c * rows;
        for (int64_t q = 0; q < rows; ++q, id += 4, wg += 4) {
            const T v0 = id[0] >= 0 ? im[id[0]] : T(0);
            const T v1 = id[1] >= 0 ? im[id[1]] : T(0);
            const T v2 = id[2] >= 0 ? im[id[2]] : T(0);
            const T v3 = id[3] >= 0 ? im[id[3]] : T(0);
            dst[q] = wg[0] * v0 + wg[1] * v1 + wg[2] * v2 + wg[3] * v3;
        }
    }
}

// Scatter column gradients back through the sampling: input gradient via the
// adjoint of the bilinear read, offset gradients via the coordinate
// derivatives. Either destination may be null. goff layout: (2*elems, plane).
template <typename T>
void deform_scatter(const T* x, const T* gcol, const DeformTable<T>& tb, int64_t C,
                    T* gx, T* goff) {
    for (int64_t c = 0; c < C; ++c) {
        const T* im = x + c * tb.plane;
        T* gim = gx ? gx + c * tb.plane : nullptr;
        for (int64_t e = 0; e < tb.elems; ++e) {
            const T* gc = gcol + (c * tb.elems + e) * tb.plane;
            T* gdy = goff ? goff + (2 * e) * tb.plane : nullptr;
            T* gdx = goff ? goff + (2 * e + 1) * tb.plane : nullptr;
            const size_t row = static_cast<size_t>(e * tb.plane);
            for (int64_t p = 0; p < tb.plane; ++p) {
                const T g = gc[p];
                if (g == T(0)) continue;
                const size_t at = row + static_cast<size_t>(p);
                const int32_t* id = tb.idx.data() + 4 * at;
                const T* wg = tb.wgt.data() + 4 * at;
                const T v0 = id[0] >= 0 ? im[id[0]] : T(0);
                const T v1 = id[1] >= 0 ? im[id[1]] : T(0);
                const T v2 = id[2] >= 0 ? im[id[2]] : T(0);
                const T v3 = id[3] >= 0 ? im[id[3]] : T(0);
                if (gim) {
                    if (id[0] >= 0) gim[id[0]] += wg[0] * g;
                    if (id[1] >= 0) gim[id[1]] += wg[1] * g;
                    if (id[2] >= 0) gim[id[2]] += wg[2] * g;
                    if (id[3] >= 0) gim[id[3]] += wg[3] * g;
                }
                if (gdy) {
                    const T fh = tb.lh[at], fw = tb.lw[at];
                    gdy[p] += g * ((T(1) - fw) * (v2 - v0) + fw * (v3 - v1));
                    gdx[p] += g * ((T(1) - fh) * (v1 - v0) + fh * (v3 - v2));
                }
            }
        }
    }
}

} // namespace detail

// Offset field: hardtanh(conv2d(x, offset_w, pad 1)) -> values in [-1, 1].
template <typename T>
Tensor<T> compute_offsets(const Tensor<T>& x, const Tensor<T>& offset_w) {
    if (offset_w.shape().c != x.shape().c)
        throw DimensionError("compute_offsets: offset conv expects " +
                             std::to_string(offset_w.shape().c) + " channels, got " +
                             std::to_string(x.shape().c));
    return hardtanh(conv2d(x, offset_w, {}, 1, 1, 1, 1));
}

// Same-size deformable dilated convolution (stride 1, padding = dilation).
template <typename T>
Tensor<T> deformable_conv2d(const Tensor<T>& x, const Tensor<T>& offsets, const Tensor<T>& w,
                            const Tensor<T>& b, int64_t dilation) {
    const Shape4 xs = x.shape();
    const Shape4 ws = w.shape();
    const Shape4 os = offsets.shape();
    if (ws.c != xs.c) throw DimensionError("deformable_conv2d: weight channel mismatch");
    if (os.n != xs.n || os.h != xs.h || os.w != xs.w)
        throw DimensionError("deformable_conv2d: offsets spatial size " + os.str() +
                             " does not match input " + xs.str());
    if (os.c != 2 * ws.h * ws.w)
        throw DimensionError("deformable_conv2d: offsets need 2*Kh*Kw channels");
    if (b.defined() && b.numel() != ws.n)
        throw DimensionError("deformable_conv2d: bias length must equal output channels");
    if (dilation < 1) throw ConfigError("deformable_conv2d: dilation must be >= 1");

    const int64_t plane = xs.h * xs.w;
    const int64_t K = xs.c * ws.h * ws.w;
    Tensor<T> out = Tensor<T>::zeros({xs.n, ws.n, xs.h, xs.w});
    std::vector<T> col(static_cast<size_t>(K * plane));
    detail::DeformTable<T> table;
    for (int64_t n = 0; n < xs.n; ++n) {
        table.build(offsets.data() + n * os.c * plane, xs.h, xs.w, ws.h, ws.w, dilation);
        detail::deform_gather(x.data() + n * xs.c * plane, table, xs.c, col.data());
        detail::gemm_nn(ws.n, plane, K, w.data(), col.data(), out.data() + n * ws.n * plane);
        if (b.defined())
            for (int64_t co = 0; co < ws.n; ++co) {
                T* dst = out.data() + (n * ws.n + co) * plane;
                for (int64_t i = 0; i < plane; ++i) dst[i] += b.data()[co];
            }
    }

    detail::attach_backward(out, "deformable_conv2d",
        b.defined() ? std::initializer_list<Tensor<T>>{x, offsets, w, b}
                    : std::initializer_list<Tensor<T>>{x, offsets, w},
        [x, offsets, w, b, dilation](TensorImpl<T>& self) mutable {
            const Shape4 xs = x.shape();
            const Shape4 ws = w.shape();
            const Shape4 os = offsets.shape();
            const int64_t plane = xs.h * xs.w;
            const int64_t K = xs.c * ws.h * ws.w;
            const T* gout = self.grad.data();

            std::vector<T> col(static_cast<size_t>(K * plane));
            std::vector<T> gcol(static_cast<size_t>(K * plane));
            detail::DeformTable<T> table;
            for (int64_t n = 0; n < xs.n; ++n) {
                const T* xn = x.data() + n * xs.c * plane;
                const T* go = gout + n * ws.n * plane;
                table.build(offsets.data() + n * os.c * plane, xs.h, xs.w, ws.h, ws.w,
                            dilation);

                if (w.requires_grad()) {
                    detail::deform_gather(xn, table, xs.c, col.data());
                    detail::gemm_nt_acc(ws.n, K, plane, go, col.data(), w.grad().data());
                }
                if (!x.requires_grad() && !offsets.requires_grad()) continue;
                detail::gemm_tn(K, plane, ws.n, w.data(), go, gcol.data());
                detail::deform_scatter(
                    xn, gcol.data(), table, xs.c,
                    x.requires_grad() ? x.grad().data() + n * xs.c * plane : nullptr,
                    offsets.requires_grad() ? offsets.grad().data() + n * os.c * plane
                                            : nullptr);
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

template <typename T>
struct DeformableConvSpec {
    int64_t dilation = 3;
    Tensor<T> weight;        // (Cout, Cin, 3, 3)
    Tensor<T> bias;          // optional, (1, Cout, 1, 1)
    Tensor<T> offset_weight; // (2*Kh*Kw, Cin, 3, 3); zero-init -> plain dilated conv
};

// Deformable Block: offset field from a regular conv, then the deformable
// dilated convolution driven by it.
template <typename T>
Tensor<T> deformable_block(const Tensor<T>& x, const DeformableConvSpec<T>& spec) {
    Tensor<T> off = compute_offsets(x, spec.offset_weight);
    return deformable_conv2d(x, off, spec.weight, spec.bias, spec.dilation);
}

} // namespace deeppyram
