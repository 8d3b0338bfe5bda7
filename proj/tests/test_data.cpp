// Synthetic data generator, augmentation pipeline, and PNG dataset I/O.
#include <gtest/gtest.h>

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include "deeppyram/data.hpp"

namespace fs = std::filesystem;
using namespace deeppyram;

namespace {

// Fresh scratch directory per test; removed on destruction.
struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& tag) {
        path = fs::temp_directory_path() / ("dp_data_" + tag);
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

bool samples_bitwise_equal(const SegSample& a, const SegSample& b) {
    return a.id == b.id && a.image.vec() == b.image.vec() && a.mask == b.mask;
}

} // namespace

TEST(Synth, DeterministicPerSeed) {
    SynthSpec spec;
    spec.count = 3;
    const auto a = synth_generate(spec, 42);
    const auto b = synth_generate(spec, 42);
    const auto c = synth_generate(spec, 43);
    ASSERT_EQ(a.size(), 3u);
    for (size_t i = 0; i < a.size(); ++i)
        EXPECT_TRUE(samples_bitwise_equal(a[i], b[i])) << "sample " << i;
    EXPECT_NE(a[0].image.vec(), c[0].image.vec());
}

TEST(Synth, RejectsBadSpecs) {
    SynthSpec small_h;
    small_h.height = 48;
    EXPECT_THROW(synth_generate(small_h, 1), ConfigError);
    SynthSpec small_w;
    small_w.width = 32;
    EXPECT_THROW(synth_generate(small_w, 1), ConfigError);
    SynthSpec no_count;
    no_count.count = 0;
    EXPECT_THROW(synth_generate(no_count, 1), ConfigError);
    SynthSpec wrong_classes;
    wrong_classes.num_classes = 4;
    EXPECT_THROW(synth_generate(wrong_classes, 1), ConfigError);
}

TEST(Synth, EveryClassPresentAndValuesValid) {
    SynthSpec spec;
    spec.count = 100;
    const auto samples = synth_generate(spec, 7);
    for (const auto& s : samples) {
        std::array<int64_t, kSynthNumClasses> counts{};
        for (int32_t v : s.mask) {
            ASSERT_GE(v, 0);
            ASSERT_LT(v, kSynthNumClasses);
            counts[static_cast<size_t>(v)]++;
        }
        for (int64_t c = 0; c < kSynthNumClasses; ++c)
            EXPECT_GT(counts[static_cast<size_t>(c)], 0)
                << "class " << c << " missing in " << s.id;
        for (float v : s.image.vec()) {
            ASSERT_TRUE(std::isfinite(v));
            ASSERT_GE(v, 0.0f);
            ASSERT_LE(v, 1.0f);
        }
    }
}

TEST(Synth, ClassFrequenciesMatchCalibratedTargets) {
    SynthSpec spec;
    spec.count = 100;
    const auto samples = synth_generate(spec, 777);  // independent of calibration seed
    std::array<double, kSynthNumClasses> counts{};
    double total = 0.0;
    for (const auto& s : samples) {
        for (int32_t v : s.mask) counts[static_cast<size_t>(v)] += 1.0;
        total += static_cast<double>(s.mask.size());
    }
    for (int64_t c = 0; c < kSynthNumClasses; ++c) {
        const double measured = counts[static_cast<size_t>(c)] / total;
        const double target = kSynthClassFractions[static_cast<size_t>(c)];
        EXPECT_NEAR(measured, target, 0.20 * target)
            << "class " << c << " fraction drifted from calibration";
    }
}

TEST(Synth, LargerCanvasWorks) {
    SynthSpec spec;
    spec.count = 1;
    spec.height = 96;
    spec.width = 128;
    const auto samples = synth_generate(spec, 5);
    EXPECT_EQ(samples[0].image.shape(), (Shape4{1, 3, 96, 128}));
    EXPECT_EQ(samples[0].mask.size(), 96u * 128u);
}

TEST(Augment, ProbabilityZeroIsIdentity) {
    SynthSpec spec;
    spec.count = 1;
    const auto samples = synth_generate(spec, 11);
    AugmentConfig cfg;
    cfg.probability = 0.0;
    Rng rng(99);
    const SegSample out = augment(samples[0], cfg, rng);
    EXPECT_TRUE(samples_bitwise_equal(out, samples[0]));
}

TEST(Augment, DeterministicGivenRngState) {
    SynthSpec spec;
    spec.count = 1;
    const auto samples = synth_generate(spec, 12);
    AugmentConfig cfg;
    Rng rng_a(123), rng_b(123);
    const SegSample a = augment(samples[0], cfg, rng_a);
    const SegSample b = augment(samples[0], cfg, rng_b);
    EXPECT_TRUE(samples_bitwise_equal(a, b));
}

TEST(Augment, MaskLabelsStaySubsetOfOriginal) {
    SynthSpec spec;
    spec.count = 10;
    const auto samples = synth_generate(spec, 13);
    AugmentConfig cfg;
    cfg.probability = 1.0;  // every transform fires
    Rng rng(77);
    for (const auto& s : samples) {
        std::set<int32_t> before(s.mask.begin(), s.mask.end());
        before.insert(kBackground);  // out-of-frame fill
        const SegSample out = augment(s, cfg, rng);
        for (int32_t v : out.mask)
            ASSERT_TRUE(before.count(v)) << "new label " << v << " appeared";
        EXPECT_EQ(out.image.shape(), s.image.shape());
        for (float v : out.image.vec()) {
            ASSERT_TRUE(std::isfinite(v));
            ASSERT_GE(v, 0.0f);
            ASSERT_LE(v, 1.0f + 1e-6f);
        }
    }
}

TEST(Augment, BlurKernelIsNormalized) {
    for (int64_t k : {int64_t{3}, int64_t{5}, int64_t{7}}) {
        for (double angle : {0.0, 0.3, 1.5707963, 2.6}) {
            const auto ker = detail::motion_kernel(k, angle);
            ASSERT_EQ(ker.size(), static_cast<size_t>(k * k));
            double total = 0.0;
            for (double v : ker) {
                ASSERT_GE(v, 0.0);
                total += v;
            }
            EXPECT_NEAR(total, 1.0, 1e-12) << "k=" << k << " angle=" << angle;
        }
    }
}

TEST(Augment, ConstantImageIsBlurFixedPoint) {
    // Neutralize every transform except motion blur: zero-width jitter ranges
    // make brightness/contrast and the warps exact identities.
    SegSample s;
    s.id = "flat";
    s.image = Tensor<float>::full({1, 3, 64, 64}, 0.37f);
    s.mask.assign(64 * 64, kBackground);
    s.mask[0] = kCornea;  // keep the label set non-trivial
    AugmentConfig cfg;
    cfg.probability = 1.0;
    cfg.bc_lo = cfg.bc_hi = 0.0;
    cfg.shift_scale_pct = 0.0;
    cfg.rot_deg = 0.0;
    Rng rng(5);
    const SegSample out = augment(s, cfg, rng);
    for (float v : out.image.vec()) ASSERT_NEAR(v, 0.37f, 1e-6f);
}

TEST(Augment, ImageAndMaskMoveTogether) {
    // Encode the labels into the image; after warping, any pixel whose warped
    // mask is locally uniform must still carry its label's intensity.
    SynthSpec spec;
    spec.count = 1;
    const auto base = synth_generate(spec, 21);
    SegSample s = base[0];
    const int64_t H = s.height(), W = s.width(), plane = H * W;
    s.image = Tensor<float>::zeros({1, 3, H, W});
    float* img = s.image.data();
    for (int64_t at = 0; at < plane; ++at) {
        const float v = static_cast<float>(s.mask[static_cast<size_t>(at)]) / 4.0f;
        img[at] = v;
        img[plane + at] = v;
        img[2 * plane + at] = v;
    }
    AugmentConfig cfg;
    cfg.probability = 1.0;
    cfg.bc_lo = cfg.bc_hi = 0.0;            // neutral photometry
    cfg.blur_k_lo = cfg.blur_k_hi = 3;      // minimal smear
    Rng rng(31);
    const SegSample out = augment(s, cfg, rng);

    int64_t checked = 0, agree = 0;
    const float* oimg = out.image.data();
    for (int64_t y = 3; y < H - 3; ++y) {
        for (int64_t x = 3; x < W - 3; ++x) {
            const int32_t label = out.mask[static_cast<size_t>(y * W + x)];
            bool uniform = true;
            for (int64_t dy = -3; dy <= 3 && uniform; ++dy)
                for (int64_t dx = -3; dx <= 3 && uniform; ++dx)
                    uniform = out.mask[static_cast<size_t>((y + dy) * W + x + dx)] == label;
            if (!uniform) continue;
            ++checked;
            const float expect = static_cast<float>(label) / 4.0f;
            if (std::abs(oimg[y * W + x] - expect) < 0.02f) ++agree;
        }
    }
    ASSERT_GT(checked, 500) << "degenerate warp left too few uniform regions";
    EXPECT_EQ(agree, checked) << "image and mask were warped by different maps";
}

TEST(Augment, RejectsBadConfig) {
    SynthSpec spec;
    spec.count = 1;
    const auto samples = synth_generate(spec, 14);
    Rng rng(1);
    AugmentConfig bad_p;
    bad_p.probability = 1.5;
    EXPECT_THROW(augment(samples[0], bad_p, rng), ConfigError);
    AugmentConfig bad_k;
    bad_k.blur_k_lo = 4;
    EXPECT_THROW(augment(samples[0], bad_k, rng), ConfigError);
    AugmentConfig bad_range;
    bad_range.bc_lo = 0.3;
    bad_range.bc_hi = -0.3;
    EXPECT_THROW(augment(samples[0], bad_range, rng), ConfigError);
}

TEST(OneHot, EncodesLabelsAndRejectsOutOfRange) {
    SegSample s;
    s.id = "tiny";
    s.image = Tensor<float>::zeros({1, 3, 64, 64});
    s.mask.assign(64 * 64, 0);
    s.mask[5] = 3;
    s.mask[64 * 64 - 1] = 4;
    const Tensor<float> t = mask_to_onehot(s, 5);
    EXPECT_EQ(t.shape(), (Shape4{1, 5, 64, 64}));
    EXPECT_FLOAT_EQ(t.at(0, 3, 0, 5), 1.0f);
    EXPECT_FLOAT_EQ(t.at(0, 0, 0, 5), 0.0f);
    EXPECT_FLOAT_EQ(t.at(0, 4, 63, 63), 1.0f);
    const float* d = t.data();
    for (int64_t at = 0; at < 64 * 64; ++at) {
        float sum = 0.0f;
        for (int64_t c = 0; c < 5; ++c) sum += d[c * 64 * 64 + at];
        ASSERT_FLOAT_EQ(sum, 1.0f);
    }
    s.mask[9] = 7;
    EXPECT_THROW(mask_to_onehot(s, 5), DataError);
}

TEST(DatasetIO, SaveThenLoadRoundTripsBitwise) {
    TempDir dir("roundtrip");
    SynthSpec spec;
    spec.count = 4;
    auto samples = synth_generate(spec, 15);
    // Snap images onto the 8-bit grid so the round trip is exactly lossless.
    for (auto& s : samples)
        for (float& v : s.image.vec())
            v = std::round(v * 255.0f) / 255.0f;
    save_dataset(samples, dir.path.string());
    const auto loaded = load_dataset(dir.path.string());
    ASSERT_EQ(loaded.size(), samples.size());
    for (size_t i = 0; i < samples.size(); ++i)
        EXPECT_TRUE(samples_bitwise_equal(loaded[i], samples[i])) << "sample " << i;
}

TEST(DatasetIO, QuantizationErrorBounded) {
    TempDir dir("quant");
    SynthSpec spec;
    spec.count = 2;
    const auto samples = synth_generate(spec, 16);
    save_dataset(samples, dir.path.string());
    const auto loaded = load_dataset(dir.path.string());
    ASSERT_EQ(loaded.size(), samples.size());
    for (size_t i = 0; i < samples.size(); ++i) {
        const auto& a = samples[i].image.vec();
        const auto& b = loaded[i].image.vec();
        ASSERT_EQ(a.size(), b.size());
        for (size_t j = 0; j < a.size(); ++j)
            ASSERT_LE(std::abs(a[j] - b[j]), 1.0f / 255.0f + 1e-6f);
        EXPECT_EQ(loaded[i].mask, samples[i].mask);  // labels survive exactly
    }
}

TEST(DatasetIO, MissingMaskIsPairingError) {
    TempDir dir("pairing");
    SynthSpec spec;
    spec.count = 2;
    const auto samples = synth_generate(spec, 17);
    save_dataset(samples, dir.path.string());
    fs::remove(dir.path / "masks" / (samples[1].id + ".png"));
    try {
        load_dataset(dir.path.string());
        FAIL() << "expected DataError";
    } catch (const DataError& e) {
        EXPECT_NE(std::string(e.what()).find("missing mask"), std::string::npos);
        EXPECT_NE(std::string(e.what()).find(samples[1].id), std::string::npos);
    }
}

TEST(DatasetIO, LoadsWithoutManifestByScanningImages) {
    TempDir dir("scan");
    SynthSpec spec;
    spec.count = 3;
    const auto samples = synth_generate(spec, 18);
    save_dataset(samples, dir.path.string());
    fs::remove(dir.path / "manifest.txt");
    const auto loaded = load_dataset(dir.path.string());
    ASSERT_EQ(loaded.size(), 3u);
    for (size_t i = 0; i < loaded.size(); ++i) EXPECT_EQ(loaded[i].id, samples[i].id);
}

TEST(DatasetIO, EmptyDirectoryIsError) {
    TempDir dir("empty");
    EXPECT_THROW(load_dataset(dir.path.string()), DataError);
}
