#include <gtest/gtest.h>

#include "deeppyram/deform.hpp"
#include "deeppyram/gradcheck_suite.hpp"

using namespace deeppyram;

namespace {

Tensor<float> rand_f(Shape4 s, Rng& rng, float lo = -1.f, float hi = 1.f) {
    auto t = Tensor<float>::zeros(s);
    for (auto& v : t.vec()) v = static_cast<float>(rng.uniform(lo, hi));
    return t;
}

// single-tap kernel: 1 at element (ti, tj), zero elsewhere
Tensor<float> tap_kernel(int64_t cin, int64_t ti, int64_t tj) {
    auto w = Tensor<float>::zeros({1, cin, 3, 3});
    for (int64_t c = 0; c < cin; ++c) w.at(0, c, ti, tj) = 1.f;
    return w;
}

} // namespace

TEST(DeformableConv, ZeroOffsetsMatchDilatedConv) {
    Rng rng(17);
    for (int64_t dilation : {3, 6}) {
        for (int rep = 0; rep < 3; ++rep) {
            auto x = rand_f({1, 3, 16, 16}, rng);
            auto w = rand_f({4, 3, 3, 3}, rng);
            auto b = rand_f({1, 4, 1, 1}, rng);
            auto off = Tensor<float>::zeros({1, 18, 16, 16});
            auto yd = deformable_conv2d(x, off, w, b, dilation);
            auto yc = conv2d(x, w, b, 1, dilation, dilation, 1);
            ASSERT_EQ(yd.shape(), yc.shape());
            for (int64_t i = 0; i < yd.numel(); ++i)
                ASSERT_NEAR(yd.data()[i], yc.data()[i], 1e-6)
                    << "dilation " << dilation << " rep " << rep << " i " << i;
        }
    }
}

TEST(DeformableConv, IntegerDisplacementShiftsSamples) {
    // center tap only; +1 vertical offset everywhere => y(h,w) = x(h+1, w)
    Rng rng(23);
    auto x = rand_f({1, 1, 8, 8}, rng);
    auto w = tap_kernel(1, 1, 1);
    auto off = Tensor<float>::zeros({1, 18, 8, 8});
    const int64_t elem = 1 * 3 + 1;
    for (int64_t p = 0; p < 64; ++p) off.data()[2 * elem * 64 + p] = 1.f;
    auto y = deformable_conv2d(x, off, w, {}, 1);
    for (int64_t h = 0; h < 8; ++h)
        for (int64_t wd = 0; wd < 8; ++wd) {
            const float expect = h + 1 < 8 ? x.at(0, 0, h + 1, wd) : 0.f;
            ASSERT_FLOAT_EQ(y.at(0, 0, h, wd), expect);
        }
}

TEST(DeformableConv, BilinearIsLinearBetweenPixels) {
    // fractional 0.5 horizontal offset on a single-tap kernel averages neighbors
    auto x = Tensor<float>::from_data({1, 1, 1, 4}, {1.f, 3.f, 5.f, 7.f});
    auto w = tap_kernel(1, 1, 1);
    for (float frac : {0.25f, 0.5f, 0.75f}) {
        auto off = Tensor<float>::zeros({1, 18, 1, 4});
        const int64_t elem = 4; // center
        for (int64_t p = 0; p < 4; ++p) off.data()[(2 * elem + 1) * 4 + p] = frac;
        auto y = deformable_conv2d(x, off, w, {}, 1);
        for (int64_t p = 0; p < 3; ++p) {
            const float expect = (1.f - frac) * x.data()[p] + frac * x.data()[p + 1];
            ASSERT_NEAR(y.data()[p], expect, 1e-6) << "frac " << frac << " p " << p;
        }
    }
}

TEST(DeformableConv, SamplingReachSevenPixels) {
    // dilation 6, corner tap (2,2), offset +1 in both axes: sample sits
    // exactly 7 pixels down-right of the output position.
    const int64_t H = 16;
    auto x = Tensor<float>::zeros({1, 1, H, H});
    x.at(0, 0, 11, 11) = 1.f;
    auto w = tap_kernel(1, 2, 2);
    auto off = Tensor<float>::zeros({1, 18, H, H});
    const int64_t elem = 2 * 3 + 2;
    for (int64_t p = 0; p < H * H; ++p) {
        off.data()[(2 * elem) * H * H + p] = 1.f;
        off.data()[(2 * elem + 1) * H * H + p] = 1.f;
    }
    auto y = deformable_conv2d(x, off, w, {}, 6);
    EXPECT_FLOAT_EQ(y.at(0, 0, 4, 4), 1.f); // 11 - 7 = 4
    // and with the maximum-magnitude offset the displacement can never exceed 7
    for (int64_t i : {0, 1, 2}) {
        const int64_t base = (i - 1) * 6;
        EXPECT_LE(std::abs(base) + 1, 7);
    }
}

TEST(DeformableConv, Dilation3ReachBetweenTwoAndFour) {
    const int64_t H = 12;
    auto w = tap_kernel(1, 2, 1); // vertical outer tap, base +3
    for (float delta : {-1.f, 1.f}) {
        auto x = Tensor<float>::zeros({1, 1, H, H});
        const int64_t reach = 3 + static_cast<int64_t>(delta);
        x.at(0, 0, 5 + reach, 5) = 1.f;
        auto off = Tensor<float>::zeros({1, 18, H, H});
        const int64_t elem = 2 * 3 + 1;
        for (int64_t p = 0; p < H * H; ++p) off.data()[(2 * elem) * H * H + p] = delta;
        auto y = deformable_conv2d(x, off, w, {}, 3);
        EXPECT_FLOAT_EQ(y.at(0, 0, 5, 5), 1.f) << "delta " << delta;
        EXPECT_GE(reach, 2);
        EXPECT_LE(reach, 4);
    }
}

TEST(ComputeOffsets, ZeroWeightGivesZeroFieldAndClipHolds) {
    Rng rng(31);
    auto x = rand_f({2, 4, 8, 8}, rng, -5.f, 5.f);
    auto zero_w = Tensor<float>::zeros({18, 4, 3, 3});
    auto off = compute_offsets(x, zero_w);
    EXPECT_EQ(off.shape(), (Shape4{2, 18, 8, 8}));
    for (int64_t i = 0; i < off.numel(); ++i) ASSERT_FLOAT_EQ(off.data()[i], 0.f);

    auto big_w = rand_f({18, 4, 3, 3}, rng, -3.f, 3.f);
    auto off2 = compute_offsets(x, big_w);
    float mx = 0.f;
    bool saturated = false;
    for (int64_t i = 0; i < off2.numel(); ++i) {
        mx = std::max(mx, std::abs(off2.data()[i]));
        saturated = saturated || std::abs(off2.data()[i]) == 1.f;
    }
    EXPECT_LE(mx, 1.f);
    EXPECT_TRUE(saturated); // large weights must actually hit the clip
}

TEST(DeformableBlock, ZeroOffsetWeightReducesToDilatedConv) {
    Rng rng(37);
    for (int64_t dilation : {3, 6}) {
        auto x = rand_f({1, 3, 16, 16}, rng);
        DeformableConvSpec<float> spec;
        spec.dilation = dilation;
        spec.weight = rand_f({5, 3, 3, 3}, rng);
        spec.bias = rand_f({1, 5, 1, 1}, rng);
        spec.offset_weight = Tensor<float>::zeros({18, 3, 3, 3});
        auto y = deformable_block(x, spec);
        auto ref = conv2d(x, spec.weight, spec.bias, 1, dilation, dilation, 1);
        ASSERT_EQ(y.shape(), (Shape4{1, 5, 16, 16})); // shape preserved
        for (int64_t i = 0; i < y.numel(); ++i) ASSERT_NEAR(y.data()[i], ref.data()[i], 1e-6);
    }
}

TEST(DeformableConv, ShapeAndConfigErrors) {
    auto x = Tensor<float>::zeros({1, 3, 8, 8});
    auto w = Tensor<float>::zeros({2, 3, 3, 3});
    EXPECT_THROW(deformable_conv2d(x, Tensor<float>::zeros({1, 18, 4, 4}), w, {}, 1),
                 DimensionError);
    EXPECT_THROW(deformable_conv2d(x, Tensor<float>::zeros({1, 16, 8, 8}), w, {}, 1),
                 DimensionError);
    EXPECT_THROW(deformable_conv2d(x, Tensor<float>::zeros({1, 18, 8, 8}),
                                   Tensor<float>::zeros({2, 4, 3, 3}), {}, 1),
                 DimensionError);
    EXPECT_THROW(compute_offsets(x, Tensor<float>::zeros({18, 5, 3, 3})), DimensionError);
    EXPECT_THROW(deformable_conv2d(x, Tensor<float>::zeros({1, 18, 8, 8}), w, {}, 0), ConfigError);
}

TEST(DeformableConv, GradSuitePassesOnFiveSeeds) {
    for (uint64_t seed : {1ull, 2ull, 3ull, 4ull, 5ull}) {
        auto cases = run_gradcheck_suite("deform", seed);
        ASSERT_FALSE(cases.empty());
        for (const auto& c : cases) {
            EXPECT_TRUE(c.pass()) << c.name << " seed " << seed
                                  << " max_rel_err " << c.report.max_rel_err
                                  << " skipped_frac " << c.report.skipped_fraction()
                                  << " worst: " << c.report.worst_site;
        }
    }
}
