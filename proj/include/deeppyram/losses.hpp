#pragma once

#include <array>
#include <vector>

#include "deeppyram/tensor.hpp"

namespace deeppyram {

struct LossConfig {
    double lambda = 0.8;  // CE weight; (1-lambda) weighs the log-dice term
    double sigma = 1.0;   // Laplacian smoothing of the dice ratio
    double alpha = 0.75;  // pyramid weight at 1/2 scale
    double beta = 0.5;    // pyramid weight at 1/4 scale
    double gamma = 0.25;  // pyramid weight at 1/8 scale
    bool binary_mode = false;

    void validate() const {
        for (double v : {lambda, alpha, beta, gamma})
            if (v < 0.0 || v > 1.0) throw ConfigError("loss weights must lie in [0,1]");
        if (sigma <= 0.0) throw ConfigError("sigma must be positive");
    }
};

inline std::array<double, 4> pl_scale_weights(const LossConfig& cfg) {
    return {1.0, cfg.alpha, cfg.beta, cfg.gamma};
}

// Integer class masks travel as (N,1,H,W) int32 tensors.
using Mask = Tensor<int32_t>;

// ---------------------------------------------------------------------------
// mask utilities
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> one_hot(const Mask& mask, int64_t num_classes) {
    const Shape4 s = mask.shape();
    Tensor<T> out = Tensor<T>::zeros({s.n, num_classes, s.h, s.w});
    const int64_t plane = s.h * s.w;
    for (int64_t n = 0; n < s.n; ++n)
        for (int64_t i = 0; i < plane; ++i) {
            const int32_t cls = mask.data()[n * plane + i];
            if (cls < 0 || cls >= num_classes)
                throw DataError("one_hot: label " + std::to_string(cls) + " outside [0," +
                                std::to_string(num_classes) + ")");
            out.data()[(n * num_classes + cls) * plane + i] = T(1);
        }
    return out;
}

enum class DownsampleMode { kNearest, kMaxpool };

// Nearest keeps the top-left representative of each block (multi-class);
// maxpool ORs the block (binary masks only).
inline Mask downsample_gt(const Mask& mask, int64_t factor, DownsampleMode mode) {
    const Shape4 s = mask.shape();
    if (factor < 1 || s.h % factor != 0 || s.w % factor != 0)
        throw DimensionError("downsample_gt: extent not divisible by factor");
    const int64_t Ho = s.h / factor, Wo = s.w / factor;
    Mask out = Mask::zeros({s.n, 1, Ho, Wo});
    for (int64_t n = 0; n < s.n; ++n) {
        const int32_t* src = mask.data() + n * s.h * s.w;
        int32_t* dst = out.data() + n * Ho * Wo;
        for (int64_t ho = 0; ho < Ho; ++ho)
            for (int64_t wo = 0; wo < Wo; ++wo) {
                if (mode == DownsampleMode::kNearest) {
                    dst[ho * Wo + wo] = src[(ho * factor) * s.w + wo * factor];
                } else {
                    int32_t any = 0;
                    for (int64_t i = 0; i < factor && !any; ++i)
                        for (int64_t j = 0; j < factor; ++j) {
                            const int32_t v = src[(ho * factor + i) * s.w + (wo * factor + j)];
                            if (v < 0 || v > 1)
                                throw DataError("downsample_gt: maxpool mode expects a binary mask");
                            if (v) { any = 1; break; }
                        }
                    dst[ho * Wo + wo] = any;
                }
            }
    }
    return out;
}

// argmax over channels -> class mask; ties resolve to the lowest class index
template <typename T>
Mask argmax_channels(const Tensor<T>& probs) {
    const Shape4 s = probs.shape();
    Mask out = Mask::zeros({s.n, 1, s.h, s.w});
    const int64_t plane = s.h * s.w;
    for (int64_t n = 0; n < s.n; ++n)
        for (int64_t i = 0; i < plane; ++i) {
            const T* base = probs.data() + n * s.c * plane + i;
            int32_t best = 0;
            T best_v = base[0];
            for (int64_t c = 1; c < s.c; ++c)
                if (base[c * plane] > best_v) {
                    best_v = base[c * plane];
                    best = static_cast<int32_t>(c);
                }
            out.data()[n * plane + i] = best;
        }
    return out;
}

template <typename T>
Mask binarize(const Tensor<T>& probs, T threshold = T(0.5)) {
    const Shape4 s = probs.shape();
    Mask out = Mask::zeros({s.n, 1, s.h, s.w});
    for (int64_t i = 0; i < probs.numel(); ++i)
        out.data()[i] = probs.data()[i] > threshold ? 1 : 0;
    return out;
}

// ---------------------------------------------------------------------------
// cross-entropy + log-dice composite
// ---------------------------------------------------------------------------

namespace detail {

// binary form on single-channel prob/target pairs
template <typename T>
Tensor<T> ce_log_dice_single(const Tensor<T>& p, const Tensor<T>& t, const LossConfig& cfg) {
    const T eps = T(1e-7);
    Tensor<T> p_hat = clamp(p, eps, T(1) - eps);
    Tensor<T> one_minus = affine(p_hat, T(-1), T(1));
    // BCE with mean reduction
    Tensor<T> ce_terms = add(mul(t, log_op(p_hat)), mul(affine(t, T(-1), T(1)), log_op(one_minus)));
    Tensor<T> bce = scale(mean(ce_terms), T(-1));
    // log of the smoothed dice ratio, split as log(num) - log(den)
    T sum_t = T(0);
    for (int64_t i = 0; i < t.numel(); ++i) sum_t += t.data()[i];
    Tensor<T> s_tp = sum(mul(t, p));
    Tensor<T> s_p = sum(p);
    Tensor<T> log_num = log_op(affine(s_tp, T(2), static_cast<T>(cfg.sigma)));
    Tensor<T> log_den = log_op(affine(s_p, T(1), sum_t + static_cast<T>(cfg.sigma)));
    Tensor<T> log_dice = sub(log_num, log_den);
    return sub(scale(bce, static_cast<T>(cfg.lambda)),
               scale(log_dice, T(1) - static_cast<T>(cfg.lambda)));
}

} // namespace detail

// pred: probabilities (N,C,H,W); target: one-hot / binary of the same shape.
// Multi-class averages the per-class binary value over channels.
template <typename T>
Tensor<T> ce_log_dice(const Tensor<T>& pred, const Tensor<T>& target, const LossConfig& cfg) {
    cfg.validate();
    if (!(pred.shape() == target.shape()))
        throw DimensionError("ce_log_dice: pred " + pred.shape().str() + " vs target " +
                             target.shape().str());
    for (int64_t i = 0; i < pred.numel(); ++i)
        if (!(pred.data()[i] >= T(0) && pred.data()[i] <= T(1)))
            throw DataError("ce_log_dice: pred value outside [0,1]");
    const int64_t C = pred.shape().c;
    if (C == 1) return detail::ce_log_dice_single(pred, target, cfg);
    Tensor<T> total;
    for (int64_t c = 0; c < C; ++c) {
        Tensor<T> lc = detail::ce_log_dice_single(select_channel(pred, c),
                                                  select_channel(target, c), cfg);
        total = c == 0 ? lc : add(total, lc);
    }
    return scale(total, T(1) / static_cast<T>(C));
}

// Deep-supervision aggregation: outputs[i] is the prediction at scale 1/2^i
// (full, 1/2, 1/4, 1/8), weighted (1, alpha, beta, gamma). A single output
// means deep supervision is off and the full-scale loss is returned alone.
template <typename T>
Tensor<T> pyramid_loss(const std::vector<Tensor<T>>& outputs, const Mask& gt,
                       const LossConfig& cfg, int64_t num_classes) {
    if (outputs.empty() || outputs.size() > 4)
        throw UsageError("pyramid_loss: expected 1 to 4 scale outputs");
    const auto weights = pl_scale_weights(cfg);
    const DownsampleMode mode =
        cfg.binary_mode ? DownsampleMode::kMaxpool : DownsampleMode::kNearest;
    Tensor<T> total;
    for (size_t i = 0; i < outputs.size(); ++i) {
        const int64_t factor = int64_t(1) << i;
        const Mask gt_i = factor == 1 ? gt : downsample_gt(gt, factor, mode);
        Tensor<T> tgt = cfg.binary_mode ? cast_values<T>(gt_i) : one_hot<T>(gt_i, num_classes);
        Tensor<T> li = scale(ce_log_dice(outputs[i], tgt, cfg), static_cast<T>(weights[i]));
        total = i == 0 ? li : add(total, li);
    }
    return total;
}

} // namespace deeppyram
