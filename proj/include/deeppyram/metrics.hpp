#pragma once

#include <algorithm>
#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include "deeppyram/losses.hpp"

namespace deeppyram {

// Binary-mask overlap metrics. The undefined 0/0 case (both masks empty) is
// defined as perfect agreement, 1.0.

inline double iou(const Mask& pred, const Mask& truth) {
    if (!(pred.shape() == truth.shape())) throw DimensionError("iou: mask shape mismatch");
    int64_t inter = 0, uni = 0;
    for (int64_t i = 0; i < pred.numel(); ++i) {
        const bool a = pred.data()[i] != 0, b = truth.data()[i] != 0;
        inter += a && b;
        uni += a || b;
    }
    return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

inline double dice(const Mask& pred, const Mask& truth) {
    if (!(pred.shape() == truth.shape())) throw DimensionError("dice: mask shape mismatch");
    int64_t inter = 0, total = 0;
    for (int64_t i = 0; i < pred.numel(); ++i) {
        const bool a = pred.data()[i] != 0, b = truth.data()[i] != 0;
        inter += a && b;
        total += a;
        total += b;
    }
    return total == 0 ? 1.0 : 2.0 * static_cast<double>(inter) / static_cast<double>(total);
}

struct MetricStats {
    double mean = 0, stddev = 0, min = 0, max = 0;
};

struct MetricReport {
    std::vector<double> per_image_iou;
    std::vector<double> per_image_dice;
    MetricStats iou;
    MetricStats dice;
};

inline MetricStats aggregate_stats(const std::vector<double>& xs) {
    MetricStats s;
    if (xs.empty()) return s;
    s.min = *std::min_element(xs.begin(), xs.end());
    s.max = *std::max_element(xs.begin(), xs.end());
    double acc = 0;
    for (double v : xs) acc += v;
    s.mean = acc / static_cast<double>(xs.size());
    double var = 0;
    for (double v : xs) var += (v - s.mean) * (v - s.mean);
    s.stddev = std::sqrt(var / static_cast<double>(xs.size()));
    return s;
}

inline MetricReport aggregate(std::vector<double> ious, std::vector<double> dices) {
    MetricReport r;
    r.per_image_iou = std::move(ious);
    r.per_image_dice = std::move(dices);
    r.iou = aggregate_stats(r.per_image_iou);
    r.dice = aggregate_stats(r.per_image_dice);
    return r;
}

namespace detail {
inline Mask class_mask(const Mask& m, int32_t cls, int64_t n) {
    const Shape4 s = m.shape();
    Mask out = Mask::zeros({1, 1, s.h, s.w});
    const int64_t plane = s.h * s.w;
    for (int64_t i = 0; i < plane; ++i)
        out.data()[i] = m.data()[n * plane + i] == cls ? 1 : 0;
    return out;
}
} // namespace detail

// Per-image scores for multi-class masks: mean over foreground classes
// (1..num_classes-1) of the per-class binary metric.
inline MetricReport evaluate_masks(const Mask& pred, const Mask& truth, int64_t num_classes) {
    if (!(pred.shape() == truth.shape()))
        throw DimensionError("evaluate_masks: mask shape mismatch");
    if (num_classes < 2) throw ConfigError("evaluate_masks: need at least one foreground class");
    std::vector<double> ious, dices;
    for (int64_t n = 0; n < pred.shape().n; ++n) {
        double si = 0, sd = 0;
        for (int32_t c = 1; c < num_classes; ++c) {
            const Mask pm = detail::class_mask(pred, c, n);
            const Mask tm = detail::class_mask(truth, c, n);
            si += iou(pm, tm);
            sd += dice(pm, tm);
        }
        ious.push_back(si / static_cast<double>(num_classes - 1));
        dices.push_back(sd / static_cast<double>(num_classes - 1));
    }
    return aggregate(std::move(ious), std::move(dices));
}

inline std::string report_to_text(const MetricReport& r) {
    std::ostringstream os;
    os.precision(6);
    os << std::fixed;
    os << "images: " << r.per_image_iou.size() << "\n";
    os << "iou  mean " << r.iou.mean << "  std " << r.iou.stddev << "  min " << r.iou.min
       << "  max " << r.iou.max << "\n";
    os << "dice mean " << r.dice.mean << "  std " << r.dice.stddev << "  min " << r.dice.min
       << "  max " << r.dice.max << "\n";
    return os.str();
}

inline std::string report_to_csv(const MetricReport& r) {
    std::ostringstream os;
    os.precision(6);
    os << std::fixed;
    os << "image,iou,dice\n";
    for (size_t i = 0; i < r.per_image_iou.size(); ++i)
        os << i << "," << r.per_image_iou[i] << "," << r.per_image_dice[i] << "\n";
    os << "mean," << r.iou.mean << "," << r.dice.mean << "\n";
    os << "std," << r.iou.stddev << "," << r.dice.stddev << "\n";
    os << "min," << r.iou.min << "," << r.dice.min << "\n";
    os << "max," << r.iou.max << "," << r.dice.max << "\n";
    return os.str();
}

} // namespace deeppyram
