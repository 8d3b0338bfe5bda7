#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "deeppyram/common.hpp"
#include "deeppyram/png_io.hpp"
#include "deeppyram/tensor.hpp"

namespace deeppyram {

// One segmentation sample: an RGB image in [0,1] and integer labels per pixel.
struct SegSample {
    Tensor<float> image;        // (1, 3, H, W)
    std::vector<int32_t> mask;  // H*W row-major labels
    std::string id;

    int64_t height() const { return image.shape().h; }
    int64_t width() const { return image.shape().w; }
};

// Class ids for the synthetic scenes.  The four foreground families each proxy
// one segmentation difficulty: blunt blurred boundaries (cornea), strong
// texture and color variation (pupil), transparency (lens), and thin
// reflective structures at arbitrary orientation (instrument).
enum SynthClass : int32_t {
    kBackground = 0,
    kCornea = 1,
    kPupil = 2,
    kLens = 3,
    kInstrument = 4,
};

inline constexpr int64_t kSynthNumClasses = 5;

// Mean fraction of pixels per class id, measured over a large calibration run
// of the generator below.  Frozen so dataset statistics are testable: a fresh
// run over >=100 samples must land within +/-20% (relative) of each entry.
inline constexpr std::array<double, kSynthNumClasses> kSynthClassFractions = {
    0.588,  // background
    0.277,  // cornea ring (disk minus occluders)
    0.054,  // pupil
    0.022,  // lens
    0.059,  // instruments
};

struct SynthSpec {
    int64_t count = 16;
    int64_t height = 64;
    int64_t width = 64;
    int64_t num_classes = kSynthNumClasses;

    void validate() const {
        if (height < 64 || width < 64)
            throw ConfigError("SynthSpec: height and width must be >= 64, got " +
                              std::to_string(height) + "x" + std::to_string(width));
        if (count < 1) throw ConfigError("SynthSpec: count must be >= 1");
        if (num_classes != kSynthNumClasses)
            throw ConfigError("SynthSpec: generator renders exactly " +
                              std::to_string(kSynthNumClasses) +
                              " classes (background + 4 families)");
    }
};

namespace detail {

struct Vec2 {
    double x = 0.0, y = 0.0;
};

inline double dist2_point_segment(double px, double py, Vec2 a, Vec2 b) {
    const double vx = b.x - a.x, vy = b.y - a.y;
    const double wx = px - a.x, wy = py - a.y;
    const double vv = vx * vx + vy * vy;
    double t = vv > 0.0 ? (wx * vx + wy * vy) / vv : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    const double dx = px - (a.x + t * vx), dy = py - (a.y + t * vy);
    return dx * dx + dy * dy;
}

inline bool point_in_polygon(double px, double py, const std::vector<Vec2>& poly) {
    bool inside = false;
    const size_t n = poly.size();
    for (size_t i = 0, j = n - 1; i < n; j = i++) {
        const bool crosses = (poly[i].y > py) != (poly[j].y > py);
        if (crosses) {
            const double xint = (poly[j].x - poly[i].x) * (py - poly[i].y) /
                                    (poly[j].y - poly[i].y) +
                                poly[i].x;
            if (px < xint) inside = !inside;
        }
    }
    return inside;
}

// All random scene parameters, drawn up-front in a fixed order so rendering
// itself is a pure function of this struct.
struct SceneParams {
    double cx, cy;                      // eye center (pixels)
    double r_cornea, soft;              // cornea radius and edge ramp half-width
    std::array<double, 3> bg_jitter;    // per-image background tint
    std::array<double, 3> cornea_tint;  // per-image cornea tint
    double r_pupil, px, py;             // pupil radius and center
    double tex_phase;                   // pupil texture phase
    double tex_freq;                    // pupil angular texture frequency
    std::array<double, 3> pupil_tint;
    std::vector<Vec2> lens_poly;  // polygon vertices (pixels)
    double lens_alpha;            // lens transparency
    struct Bar {
        Vec2 a, b;
        double half_width;
        double base;   // body brightness
        double boost;  // specular stripe brightness lift
    };
    std::vector<Bar> bars;
};

inline SceneParams draw_scene(Rng& rng, int64_t H, int64_t W) {
    SceneParams s;
    const double m = static_cast<double>(std::min(H, W));
    s.cx = static_cast<double>(W) * rng.uniform(0.46, 0.54);
    s.cy = static_cast<double>(H) * rng.uniform(0.46, 0.54);
    s.r_cornea = rng.uniform(0.32, 0.38) * m;
    s.soft = rng.uniform(0.05, 0.09) * s.r_cornea;
    for (auto& v : s.bg_jitter) v = rng.uniform(-0.03, 0.03);
    for (auto& v : s.cornea_tint) v = rng.uniform(-0.03, 0.03);

    s.r_pupil = rng.uniform(0.12, 0.17) * m;
    s.px = s.cx + rng.uniform(-0.02, 0.02) * m;
    s.py = s.cy + rng.uniform(-0.02, 0.02) * m;
    s.tex_phase = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
    s.tex_freq = rng.uniform(5.0, 8.0);
    for (auto& v : s.pupil_tint) v = rng.uniform(-0.05, 0.05);

    // Lens: a rotated 12-gon around an ellipse, centered in the iris zone so
    // it can never swallow the pupil whole.
    const double a = rng.uniform(0.10, 0.14) * m;
    const double b = rng.uniform(0.055, 0.08) * m;
    const double psi = rng.uniform(0.0, 3.14159265358979323846);
    const double beta = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
    const double rho = rng.uniform(0.55, 0.85) * s.r_cornea;
    const double lx = s.cx + rho * std::cos(beta);
    const double ly = s.cy + rho * std::sin(beta);
    const double cpsi = std::cos(psi), spsi = std::sin(psi);
    for (int k = 0; k < 12; ++k) {
        const double ang = 2.0 * 3.14159265358979323846 * k / 12.0;
        const double jit = rng.uniform(0.92, 1.08);
        const double ex = a * jit * std::cos(ang);
        const double ey = b * jit * std::sin(ang);
        s.lens_poly.push_back({lx + ex * cpsi - ey * spsi, ly + ex * spsi + ey * cpsi});
    }
    s.lens_alpha = rng.uniform(0.25, 0.40);

    const int64_t n_bars = rng.uniform_int(1, 3);
    for (int64_t k = 0; k < n_bars; ++k) {
        SceneParams::Bar bar;
        // Enter from a random border point, aim near the eye center.
        const int64_t side = rng.uniform_int(0, 3);
        const double t = rng.uniform(0.1, 0.9);
        switch (side) {
            case 0: bar.a = {t * (W - 1.0), 0.0}; break;
            case 1: bar.a = {t * (W - 1.0), H - 1.0}; break;
            case 2: bar.a = {0.0, t * (H - 1.0)}; break;
            default: bar.a = {W - 1.0, t * (H - 1.0)}; break;
        }
        const double reach = rng.uniform(0.0, 0.25) * m;
        const double dir = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
        bar.b = {s.cx + reach * std::cos(dir), s.cy + reach * std::sin(dir)};
        bar.half_width = rng.uniform(0.02, 0.035) * m;
        bar.base = rng.uniform(0.50, 0.62);
        bar.boost = rng.uniform(0.20, 0.30);
        s.bars.push_back(bar);
    }
    return s;
}

inline SegSample render_scene(const SceneParams& s, Rng& rng, int64_t H, int64_t W,
                              const std::string& id) {
    SegSample out;
    out.image = Tensor<float>::zeros({1, 3, H, W});
    out.mask.assign(static_cast<size_t>(H * W), kBackground);
    out.id = id;
    float* img = out.image.data();
    const int64_t plane = H * W;

    for (int64_t y = 0; y < H; ++y) {
        const double g = static_cast<double>(y) / std::max<int64_t>(H - 1, 1);
        for (int64_t x = 0; x < W; ++x) {
            const int64_t at = y * W + x;
            double r = 0.42 + 0.06 * g + s.bg_jitter[0];
            double gc = 0.30 + 0.04 * g + s.bg_jitter[1];
            double b = 0.26 + 0.02 * g + s.bg_jitter[2];
            int32_t label = kBackground;

            // Cornea: low-contrast disk with a soft (ramped) boundary whose
            // midpoint sits exactly on the mask radius.
            const double dc = std::hypot(x - s.cx, y - s.cy);
            const double ac =
                std::clamp((s.r_cornea + s.soft - dc) / (2.0 * s.soft), 0.0, 1.0);
            if (ac > 0.0) {
                r += ac * (0.58 + s.cornea_tint[0] - r);
                gc += ac * (0.52 + s.cornea_tint[1] - gc);
                b += ac * (0.48 + s.cornea_tint[2] - b);
            }
            if (dc <= s.r_cornea) label = kCornea;

            // Pupil: dark textured disk with per-image color jitter.
            const double dp = std::hypot(x - s.px, y - s.py);
            const double ap = std::clamp((s.r_pupil + 1.5 - dp) / 3.0, 0.0, 1.0);
            if (ap > 0.0) {
                const double theta = std::atan2(y - s.py, x - s.px);
                const double tex = 0.05 * std::sin(s.tex_freq * theta + s.tex_phase) +
                                   0.04 * std::sin(9.0 * dp / std::max(s.r_pupil, 1.0));
                const double pr = 0.10 + s.pupil_tint[0] + tex;
                const double pg = 0.08 + s.pupil_tint[1] + tex;
                const double pb = 0.10 + s.pupil_tint[2] + tex;
                r += ap * (pr - r);
                gc += ap * (pg - gc);
                b += ap * (pb - b);
            }
            if (dp <= s.r_pupil) label = kPupil;

            // Lens: semi-transparent polygon; the underlying texture stays
            // partially visible.
            if (point_in_polygon(x, y, s.lens_poly)) {
                r = (1.0 - s.lens_alpha) * r + s.lens_alpha * 0.72;
                gc = (1.0 - s.lens_alpha) * gc + s.lens_alpha * 0.76;
                b = (1.0 - s.lens_alpha) * b + s.lens_alpha * 0.82;
                label = kLens;
            }

            // Instruments: thin bright capsules with a specular stripe.
            for (const auto& bar : s.bars) {
                const double d2 = dist2_point_segment(x, y, bar.a, bar.b);
                if (d2 <= bar.half_width * bar.half_width) {
                    double v = bar.base;
                    if (d2 <= (bar.half_width / 3.0) * (bar.half_width / 3.0))
                        v += bar.boost;
                    r = v;
                    gc = v + 0.02;
                    b = v + 0.08;  // cool metallic cast
                    label = kInstrument;
                }
            }

            img[0 * plane + at] = static_cast<float>(r);
            img[1 * plane + at] = static_cast<float>(gc);
            img[2 * plane + at] = static_cast<float>(b);
            out.mask[static_cast<size_t>(at)] = label;
        }
    }

    // Sensor noise over the finished scene, then clamp to the valid range.
    for (int64_t at = 0; at < plane; ++at) {
        const float n = static_cast<float>(rng.normal() * 0.02);
        for (int64_t c = 0; c < 3; ++c) {
            float& v = img[c * plane + at];
            v = std::clamp(v + n, 0.0f, 1.0f);
        }
    }
    return out;
}

inline bool all_classes_present(const SegSample& s) {
    std::array<int64_t, kSynthNumClasses> counts{};
    for (int32_t v : s.mask) counts[static_cast<size_t>(v)]++;
    for (int64_t c : counts)
        if (c == 0) return false;
    return true;
}

} // namespace detail

// Deterministic synthetic dataset: each sample is drawn from an independent
// sub-stream of `seed`, so generation is order-independent per sample.
inline std::vector<SegSample> synth_generate(const SynthSpec& spec, uint64_t seed) {
    spec.validate();
    std::vector<SegSample> out;
    out.reserve(static_cast<size_t>(spec.count));
    for (int64_t i = 0; i < spec.count; ++i) {
        Rng rng(mix_seed(seed, static_cast<uint64_t>(i)));
        char buf[32];
        std::snprintf(buf, sizeof(buf), "sample_%05lld", static_cast<long long>(i));
        SegSample sample;
        // Geometry makes an empty class all but impossible; retry from the
        // same stream keeps the result deterministic if it ever happens.
        for (int attempt = 0; attempt < 8; ++attempt) {
            const auto params = detail::draw_scene(rng, spec.height, spec.width);
            sample = detail::render_scene(params, rng, spec.height, spec.width, buf);
            if (detail::all_classes_present(sample)) break;
            if (attempt == 7)
                throw DataError("synth_generate: could not place all classes in " +
                                std::string(buf));
        }
        out.push_back(std::move(sample));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Augmentation
// ---------------------------------------------------------------------------

struct AugmentConfig {
    double probability = 0.5;  // independent chance for each transform
    double bc_lo = -0.2, bc_hi = 0.2;  // brightness and contrast factor range
    double shift_scale_pct = 0.10;     // shift +/-10% per axis, scale in [0.9, 1.1]
    double rot_deg = 10.0;             // rotation in [-10, 10] degrees
    int64_t blur_k_lo = 3, blur_k_hi = 7;  // odd motion-blur kernel sizes

    void validate() const {
        if (probability < 0.0 || probability > 1.0)
            throw ConfigError("AugmentConfig: probability must be in [0,1]");
        if (bc_lo > bc_hi) throw ConfigError("AugmentConfig: factor range inverted");
        if (shift_scale_pct < 0.0 || shift_scale_pct >= 1.0)
            throw ConfigError("AugmentConfig: shift/scale percentage must be in [0,1)");
        if (rot_deg < 0.0) throw ConfigError("AugmentConfig: rotation range negative");
        if (blur_k_lo < 3 || blur_k_hi < blur_k_lo || blur_k_lo % 2 == 0 ||
            blur_k_hi % 2 == 0)
            throw ConfigError("AugmentConfig: blur kernel bounds must be odd and >= 3");
    }
};

namespace detail {

// Applies the same affine map (inverse warp) to image (bilinear, zero fill)
// and mask (nearest, background fill).  src = A * (dst - center) + center + t.
inline void warp_affine(SegSample& s, double a00, double a01, double a10, double a11,
                        double tx, double ty) {
    const int64_t H = s.height(), W = s.width(), plane = H * W;
    const double cx = (W - 1) / 2.0, cy = (H - 1) / 2.0;
    Tensor<float> warped = Tensor<float>::zeros(s.image.shape());
    std::vector<int32_t> wmask(static_cast<size_t>(plane), kBackground);
    const float* src = s.image.data();
    float* dst = warped.data();
    for (int64_t y = 0; y < H; ++y) {
        for (int64_t x = 0; x < W; ++x) {
            const double rx = x - cx, ry = y - cy;
            const double sx = a00 * rx + a01 * ry + cx + tx;
            const double sy = a10 * rx + a11 * ry + cy + ty;
            const int64_t at = y * W + x;
            // bilinear with zero outside the frame
            const int64_t x0 = static_cast<int64_t>(std::floor(sx));
            const int64_t y0 = static_cast<int64_t>(std::floor(sy));
            const double fx = sx - x0, fy = sy - y0;
            for (int64_t c = 0; c < 3; ++c) {
                double acc = 0.0;
                for (int dy = 0; dy <= 1; ++dy) {
                    for (int dx = 0; dx <= 1; ++dx) {
                        const int64_t xx = x0 + dx, yy = y0 + dy;
                        if (xx < 0 || xx >= W || yy < 0 || yy >= H) continue;
                        const double wgt = (dx ? fx : 1.0 - fx) * (dy ? fy : 1.0 - fy);
                        acc += wgt * src[c * plane + yy * W + xx];
                    }
                }
                dst[c * plane + at] = static_cast<float>(acc);
            }
            // nearest for the mask
            const int64_t nx = static_cast<int64_t>(std::lround(sx));
            const int64_t ny = static_cast<int64_t>(std::lround(sy));
            if (nx >= 0 && nx < W && ny >= 0 && ny < H)
                wmask[static_cast<size_t>(at)] = s.mask[static_cast<size_t>(ny * W + nx)];
        }
    }
    s.image = warped;
    s.mask = std::move(wmask);
}

// Normalized linear motion-blur kernel at the given angle.
inline std::vector<double> motion_kernel(int64_t k, double angle) {
    std::vector<double> ker(static_cast<size_t>(k * k), 0.0);
    const double c = std::cos(angle), sn = std::sin(angle);
    const double half = (k - 1) / 2.0;
    for (int64_t i = 0; i < k; ++i) {
        const double t = i - half;
        const double x = half + t * c, y = half + t * sn;
        const int64_t x0 = static_cast<int64_t>(std::floor(x));
        const int64_t y0 = static_cast<int64_t>(std::floor(y));
        const double fx = x - x0, fy = y - y0;
        for (int dy = 0; dy <= 1; ++dy) {
            for (int dx = 0; dx <= 1; ++dx) {
                const int64_t xx = x0 + dx, yy = y0 + dy;
                if (xx < 0 || xx >= k || yy < 0 || yy >= k) continue;
                ker[static_cast<size_t>(yy * k + xx)] +=
                    (dx ? fx : 1.0 - fx) * (dy ? fy : 1.0 - fy);
            }
        }
    }
    double total = 0.0;
    for (double v : ker) total += v;
    for (double& v : ker) v /= total;
    return ker;
}

} // namespace detail

// Fixed transform order: brightness/contrast, shift&scale, rotation, motion
// blur; each fires independently with `cfg.probability`.
inline SegSample augment(const SegSample& sample, const AugmentConfig& cfg, Rng& rng) {
    cfg.validate();
    SegSample out = sample;
    out.image = Tensor<float>::from_data(sample.image.shape(), sample.image.vec());
    const int64_t H = out.height(), W = out.width(), plane = H * W;

    if (rng.bernoulli(cfg.probability)) {  // brightness + contrast, image only
        const double bright = rng.uniform(cfg.bc_lo, cfg.bc_hi);
        const double contrast = 1.0 + rng.uniform(cfg.bc_lo, cfg.bc_hi);
        float* img = out.image.data();
        for (int64_t i = 0; i < 3 * plane; ++i) {
            const double v = (img[i] - 0.5) * contrast + 0.5 + bright;
            img[i] = static_cast<float>(std::clamp(v, 0.0, 1.0));
        }
    }

    if (rng.bernoulli(cfg.probability)) {  // shift & scale
        const double dx = rng.uniform(-cfg.shift_scale_pct, cfg.shift_scale_pct) * W;
        const double dy = rng.uniform(-cfg.shift_scale_pct, cfg.shift_scale_pct) * H;
        const double s = 1.0 + rng.uniform(-cfg.shift_scale_pct, cfg.shift_scale_pct);
        // inverse map: divide by scale, undo the shift
        detail::warp_affine(out, 1.0 / s, 0.0, 0.0, 1.0 / s, -dx / s, -dy / s);
    }

    if (rng.bernoulli(cfg.probability)) {  // rotation about the image center
        const double th =
            rng.uniform(-cfg.rot_deg, cfg.rot_deg) * 3.14159265358979323846 / 180.0;
        const double c = std::cos(th), sn = std::sin(th);
        // inverse rotation
        detail::warp_affine(out, c, sn, -sn, c, 0.0, 0.0);
    }

    if (rng.bernoulli(cfg.probability)) {  // motion blur, image only
        const int64_t n_odd = (cfg.blur_k_hi - cfg.blur_k_lo) / 2 + 1;
        const int64_t k = cfg.blur_k_lo + 2 * rng.uniform_int(0, n_odd - 1);
        const double angle = rng.uniform(0.0, 3.14159265358979323846);
        const auto ker = detail::motion_kernel(k, angle);
        const int64_t r = k / 2;
        Tensor<float> blurred = Tensor<float>::zeros(out.image.shape());
        const float* src = out.image.data();
        float* dst = blurred.data();
        for (int64_t c = 0; c < 3; ++c) {
            for (int64_t y = 0; y < H; ++y) {
                for (int64_t x = 0; x < W; ++x) {
                    double acc = 0.0;
                    for (int64_t ky = 0; ky < k; ++ky) {
                        const int64_t yy = std::clamp<int64_t>(y + ky - r, 0, H - 1);
                        for (int64_t kx = 0; kx < k; ++kx) {
                            const int64_t xx = std::clamp<int64_t>(x + kx - r, 0, W - 1);
                            acc += ker[static_cast<size_t>(ky * k + kx)] *
                                   src[c * plane + yy * W + xx];
                        }
                    }
                    dst[c * plane + y * W + x] = static_cast<float>(acc);
                }
            }
        }
        out.image = blurred;
    }
    return out;
}

// One-hot target planes from integer labels; labels must be < num_classes.
inline Tensor<float> mask_to_onehot(const SegSample& s, int64_t num_classes) {
    const int64_t H = s.height(), W = s.width(), plane = H * W;
    Tensor<float> t = Tensor<float>::zeros({1, num_classes, H, W});
    float* d = t.data();
    for (int64_t at = 0; at < plane; ++at) {
        const int32_t v = s.mask[static_cast<size_t>(at)];
        if (v < 0 || v >= num_classes)
            throw DataError("mask_to_onehot: label " + std::to_string(v) +
                            " out of range for " + std::to_string(num_classes) +
                            " classes");
        d[v * plane + at] = 1.0f;
    }
    return t;
}

// ---------------------------------------------------------------------------
// Dataset I/O: images/ and masks/ with matching stems + a manifest file.
// ---------------------------------------------------------------------------

inline void save_dataset(const std::vector<SegSample>& samples, const std::string& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(fs::path(dir) / "images");
    fs::create_directories(fs::path(dir) / "masks");
    std::ofstream manifest(fs::path(dir) / "manifest.txt");
    if (!manifest) throw DataError("save_dataset: cannot write manifest in " + dir);
    for (const auto& s : samples) {
        const int64_t H = s.height(), W = s.width(), plane = H * W;
        ImageU8 img;
        img.width = static_cast<int>(W);
        img.height = static_cast<int>(H);
        img.channels = 3;
        img.pixels.resize(static_cast<size_t>(3 * plane));
        const float* src = s.image.data();
        for (int64_t at = 0; at < plane; ++at)
            for (int64_t c = 0; c < 3; ++c)
                img.pixels[static_cast<size_t>(at * 3 + c)] = static_cast<uint8_t>(
                    std::lround(std::clamp(src[c * plane + at], 0.0f, 1.0f) * 255.0f));
        write_png((fs::path(dir) / "images" / (s.id + ".png")).string(), img);

        ImageU8 msk;
        msk.width = img.width;
        msk.height = img.height;
        msk.channels = 1;
        msk.pixels.resize(static_cast<size_t>(plane));
        for (int64_t at = 0; at < plane; ++at) {
            const int32_t v = s.mask[static_cast<size_t>(at)];
            if (v < 0 || v > 255)
                throw DataError("save_dataset: label " + std::to_string(v) +
                                " does not fit 8-bit mask");
            msk.pixels[static_cast<size_t>(at)] = static_cast<uint8_t>(v);
        }
        write_png((fs::path(dir) / "masks" / (s.id + ".png")).string(), msk);
        manifest << s.id << "\n";
    }
}

inline std::vector<SegSample> load_dataset(const std::string& dir) {
    namespace fs = std::filesystem;
    std::vector<std::string> ids;
    const fs::path manifest_path = fs::path(dir) / "manifest.txt";
    if (fs::exists(manifest_path)) {
        std::ifstream manifest(manifest_path);
        std::string line;
        while (std::getline(manifest, line)) {
            while (!line.empty() && (line.back() == '\r' || line.back() == ' '))
                line.pop_back();
            if (!line.empty()) ids.push_back(line);
        }
    } else {
        const fs::path img_dir = fs::path(dir) / "images";
        if (!fs::is_directory(img_dir))
            throw DataError("load_dataset: no manifest and no images/ in " + dir);
        for (const auto& e : fs::directory_iterator(img_dir))
            if (e.path().extension() == ".png") ids.push_back(e.path().stem().string());
        std::sort(ids.begin(), ids.end());
    }
    if (ids.empty()) throw DataError("load_dataset: no samples listed in " + dir);

    std::vector<SegSample> out;
    out.reserve(ids.size());
    for (const auto& id : ids) {
        const fs::path img_path = fs::path(dir) / "images" / (id + ".png");
        const fs::path msk_path = fs::path(dir) / "masks" / (id + ".png");
        if (!fs::exists(img_path))
            throw DataError("load_dataset: missing image for stem '" + id + "'");
        if (!fs::exists(msk_path))
            throw DataError("load_dataset: missing mask for stem '" + id + "'");
        const ImageU8 img = read_png(img_path.string());
        const ImageU8 msk = read_png(msk_path.string());
        if (img.channels != 3)
            throw DataError("load_dataset: image '" + id + "' is not RGB");
        if (msk.channels != 1)
            throw DataError("load_dataset: mask '" + id + "' is not single-channel");
        if (img.width != msk.width || img.height != msk.height)
            throw DataError("load_dataset: image/mask size mismatch for '" + id + "'");

        SegSample s;
        s.id = id;
        const int64_t H = img.height, W = img.width, plane = H * W;
        s.image = Tensor<float>::zeros({1, 3, H, W});
        float* dst = s.image.data();
        for (int64_t at = 0; at < plane; ++at)
            for (int64_t c = 0; c < 3; ++c)
                dst[c * plane + at] =
                    static_cast<float>(img.pixels[static_cast<size_t>(at * 3 + c)]) /
                    255.0f;
        s.mask.resize(static_cast<size_t>(plane));
        for (int64_t at = 0; at < plane; ++at)
            s.mask[static_cast<size_t>(at)] =
                static_cast<int32_t>(msk.pixels[static_cast<size_t>(at)]);
        out.push_back(std::move(s));
    }
    return out;
}

} // namespace deeppyram
