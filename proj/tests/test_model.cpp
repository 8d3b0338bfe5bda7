#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "deeppyram/gradcheck_suite.hpp"
#include "deeppyram/losses.hpp"
#include "deeppyram/model.hpp"

using namespace deeppyram;

namespace {

ModelConfig tiny_config() {
    ModelConfig cfg;
    cfg.in_channels = 3;
    cfg.num_classes = 3;
    cfg.widths = {8, 8, 16, 16, 16};
    return cfg;
}

Tensor<float> rand_f(Shape4 s, Rng& rng, float lo = -1.f, float hi = 1.f) {
    auto t = Tensor<float>::zeros(s);
    for (auto& v : t.vec()) v = static_cast<float>(rng.uniform(lo, hi));
    return t;
}

} // namespace

TEST(Model, OutputShapesWithDeepSupervision) {
    DeepPyram<float> model(tiny_config());
    model.init_parameters(11);
    Rng rng(3);
    auto x = rand_f({2, 3, 32, 32}, rng, 0.f, 1.f);
    auto out = model.forward(x, false);

    ASSERT_EQ(out.outputs.size(), 4u);
    EXPECT_EQ(out.outputs[0].shape(), (Shape4{2, 3, 32, 32}));
    EXPECT_EQ(out.outputs[1].shape(), (Shape4{2, 3, 16, 16}));
    EXPECT_EQ(out.outputs[2].shape(), (Shape4{2, 3, 8, 8}));
    EXPECT_EQ(out.outputs[3].shape(), (Shape4{2, 3, 4, 4}));

    // every head emits a per-pixel distribution
    for (const auto& y : out.outputs) {
        const Shape4 s = y.shape();
        for (int64_t n = 0; n < s.n; ++n)
            for (int64_t h = 0; h < s.h; ++h)
                for (int64_t w = 0; w < s.w; ++w) {
                    float total = 0.f;
                    for (int64_t c = 0; c < s.c; ++c) total += y.at(n, c, h, w);
                    ASSERT_NEAR(total, 1.f, 1e-5f);
                }
    }
}

TEST(Model, MasterBranchOnlyWithoutDeepSupervision) {
    ModelConfig cfg = tiny_config();
    cfg.enable_pl = false;
    DeepPyram<float> model(cfg);
    model.init_parameters(11);
    Rng rng(3);
    auto x = rand_f({1, 3, 32, 32}, rng, 0.f, 1.f);
    auto out = model.forward(x, false);
    ASSERT_EQ(out.outputs.size(), 1u);
    EXPECT_EQ(out.outputs[0].shape(), (Shape4{1, 3, 32, 32}));
}

TEST(Model, DeepSupervisionDoesNotChangeMasterBranch) {
    ModelConfig with_pl = tiny_config();
    ModelConfig without_pl = tiny_config();
    without_pl.enable_pl = false;

    DeepPyram<float> a(with_pl);
    DeepPyram<float> b(without_pl);
    a.init_parameters(42);
    b.init_parameters(42);

    Rng rng(9);
    auto x = rand_f({1, 3, 32, 32}, rng, 0.f, 1.f);
    auto ya = a.forward(x, false).master();
    auto yb = b.forward(x, false).master();
    ASSERT_EQ(ya.shape(), yb.shape());
    for (int64_t i = 0; i < ya.numel(); ++i)
        ASSERT_EQ(ya.data()[i], yb.data()[i]) << "element " << i;
}

TEST(Model, BaselineReducesToPlainterNetwork) {
    ModelConfig cfg = tiny_config();
    cfg.enable_pvf = false;
    cfg.enable_dpr = false;
    cfg.enable_pl = false;
    DeepPyram<float> model(cfg);
    // 10 encoder convs + 2 per decoder stage + the master head
    EXPECT_EQ(model.conv_layer_count(), 19);

    std::set<std::string> names;
    model.visit_parameters([&](const std::string& name, Tensor<float>) { names.insert(name); });
    EXPECT_TRUE(names.count("dec4.blk.conv0.w") == 1);
    EXPECT_TRUE(names.count("head.w") == 1);
    for (const auto& name : names) {
        EXPECT_EQ(name.find("pvf"), std::string::npos) << name;
        EXPECT_EQ(name.find("dpr"), std::string::npos) << name;
        EXPECT_EQ(name.find("pl"), std::string::npos) << name;
    }
}

TEST(Model, ParameterCountOrdering) {
    ModelConfig base;  // desk widths
    base.enable_pvf = false;
    base.enable_dpr = false;
    base.enable_pl = false;

    ModelConfig pvf = base;
    pvf.enable_pvf = true;
    ModelConfig pvf_dpr = pvf;
    pvf_dpr.enable_dpr = true;
    ModelConfig full = pvf_dpr;
    full.enable_pl = true;

    const int64_t p_base = count_parameters(base);
    const int64_t p_pvf = count_parameters(pvf);
    const int64_t p_pvf_dpr = count_parameters(pvf_dpr);
    const int64_t p_full = count_parameters(full);

    EXPECT_LT(p_base, p_pvf);
    EXPECT_LT(p_pvf, p_pvf_dpr);

    // deep supervision adds exactly the three 1x1 side heads
    int64_t head_params = 0;
    for (int i = 1; i <= 3; ++i)
        head_params += (base.widths[i] + 1) * static_cast<int64_t>(base.num_classes);
    EXPECT_EQ(p_full - p_pvf_dpr, head_params);
}

TEST(Model, FullWidthConfigBuilds) {
    const ModelConfig desk;
    const ModelConfig full = full_width_config();
    const int64_t p_desk = count_parameters(desk);
    const int64_t p_full = count_parameters(full);
    EXPECT_GT(p_desk, 0);
    EXPECT_GT(p_full, 10 * p_desk);
}

TEST(PVF, BottleneckWidthRule) {
    EXPECT_EQ(pvf_bottleneck_width(8), 4);
    EXPECT_EQ(pvf_bottleneck_width(16), 8);
    EXPECT_EQ(pvf_bottleneck_width(32), 16);
    EXPECT_EQ(pvf_bottleneck_width(64), 32);
    EXPECT_EQ(pvf_bottleneck_width(128), 64);
}

TEST(PVF, ConstantInputStaysUniformAndNormalizesToZero) {
    auto spec = make_pvf<float>(8, {3, 5, 7});
    Rng rng(5);
    for (auto& v : spec.bottleneck.w.vec()) v = static_cast<float>(rng.normal()) * 0.3f;
    for (auto& v : spec.group.w.vec()) v = static_cast<float>(rng.normal()) * 0.3f;
    for (auto& v : spec.fuse.w.vec()) v = static_cast<float>(rng.normal()) * 0.3f;
    for (auto& v : spec.bottleneck.b.vec()) v = static_cast<float>(rng.normal()) * 0.1f;
    for (auto& v : spec.group.b.vec()) v = static_cast<float>(rng.normal()) * 0.1f;
    for (auto& v : spec.fuse.b.vec()) v = static_cast<float>(rng.normal()) * 0.1f;

    auto x = Tensor<float>::full({1, 8, 12, 12}, 0.7f);

    // pre-normalization pipeline: every stage preserves uniform maps
    auto z = conv2d(x, spec.bottleneck.w, spec.bottleneck.b);
    std::vector<Tensor<float>> views;
    views.push_back(bilinear_upsample(global_avg_pool(z), 12, 12));
    for (int k : {3, 5, 7}) views.push_back(avg_pool2d(z, k, 1, k / 2));
    auto cat = concat_channels(views);
    auto g = conv2d(pad_replicate(cat, 1), spec.group.w, spec.group.b, 1, 0, 1, 4);
    auto f = conv2d(pad_replicate(g, 1), spec.fuse.w, spec.fuse.b);
    const Shape4 fs = f.shape();
    for (int64_t c = 0; c < fs.c; ++c) {
        const float ref = f.at(0, c, 0, 0);
        for (int64_t h = 0; h < fs.h; ++h)
            for (int64_t w = 0; w < fs.w; ++w)
                ASSERT_NEAR(f.at(0, c, h, w), ref, 1e-4f) << "channel " << c;
    }

    // the layer norm recenters the whole map to zero mean and cannot break
    // the per-channel uniformity (its statistics are scalars per sample)
    auto y = pvf_forward(x, spec);
    ASSERT_EQ(y.shape(), x.shape());
    double total = 0.0;
    for (int64_t i = 0; i < y.numel(); ++i) total += y.data()[i];
    EXPECT_NEAR(total / static_cast<double>(y.numel()), 0.0, 1e-5);
    const Shape4 ys = y.shape();
    for (int64_t c = 0; c < ys.c; ++c) {
        const float ref = y.at(0, c, 0, 0);
        for (int64_t h = 0; h < ys.h; ++h)
            for (int64_t w = 0; w < ys.w; ++w)
                ASSERT_NEAR(y.at(0, c, h, w), ref, 2e-3f) << "channel " << c;
    }
}

TEST(PVF, PreservesSpatialShape) {
    auto spec = make_pvf<float>(8, {3, 5, 7});
    Rng rng(6);
    for (auto& v : spec.bottleneck.w.vec()) v = static_cast<float>(rng.normal()) * 0.2f;
    for (auto& v : spec.group.w.vec()) v = static_cast<float>(rng.normal()) * 0.2f;
    for (auto& v : spec.fuse.w.vec()) v = static_cast<float>(rng.normal()) * 0.2f;
    for (Shape4 s : {Shape4{1, 8, 7, 9}, Shape4{2, 8, 16, 12}}) {
        auto x = rand_f(s, rng);
        auto y = pvf_forward(x, spec);
        EXPECT_EQ(y.shape(), s);
    }
}

TEST(PVF, RejectsBadBottleneckAndChannelMismatch) {
    PVFSpec<float> bad;
    bad.bottleneck = {Tensor<float>::zeros({6, 8, 1, 1}), Tensor<float>::zeros({1, 6, 1, 1})};
    bad.group = {Tensor<float>::zeros({6, 6, 3, 3}), Tensor<float>::zeros({1, 6, 1, 1})};
    bad.fuse = {Tensor<float>::zeros({8, 6, 3, 3}), Tensor<float>::zeros({1, 8, 1, 1})};
    auto x = Tensor<float>::zeros({1, 8, 8, 8});
    EXPECT_THROW(pvf_forward(x, bad), ConfigError);

    auto good = make_pvf<float>(16, {3, 5, 7});
    EXPECT_THROW(pvf_forward(x, good), DimensionError);
}

TEST(PPM, RegionBinsForwardAndShape) {
    auto spec = make_ppm<float>(8);
    Rng rng(7);
    for (auto& v : spec.bottleneck.w.vec()) v = static_cast<float>(rng.normal()) * 0.2f;
    for (auto& v : spec.group.w.vec()) v = static_cast<float>(rng.normal()) * 0.2f;
    for (auto& v : spec.fuse.w.vec()) v = static_cast<float>(rng.normal()) * 0.2f;
    auto x = rand_f({1, 8, 12, 12}, rng);
    auto y = ppm_forward(x, spec);
    EXPECT_EQ(y.shape(), x.shape());
    // bins of size one still work on tiny maps
    auto x4 = rand_f({1, 8, 4, 4}, rng);
    EXPECT_EQ(ppm_forward(x4, spec).shape(), x4.shape());
}

TEST(DPR, ZeroOffsetsMatchPlainDilatedBranches) {
    Rng rng(13);
    auto spec = make_dpr<float>(6, 4, {3, 6});
    for (auto& v : spec.stat.w.vec()) v = static_cast<float>(rng.normal()) * 0.3f;
    for (auto& v : spec.d3.weight.vec()) v = static_cast<float>(rng.normal()) * 0.3f;
    for (auto& v : spec.d6.weight.vec()) v = static_cast<float>(rng.normal()) * 0.3f;
    for (auto& v : spec.fuse0.w.vec()) v = static_cast<float>(rng.normal()) * 0.3f;
    for (auto& v : spec.fuse1.w.vec()) v = static_cast<float>(rng.normal()) * 0.3f;
    // offset weights stay zero: the deformable branches must degenerate to
    // plain dilated convolutions

    auto enc = rand_f({1, 3, 16, 16}, rng);
    auto dec = rand_f({1, 3, 16, 16}, rng);
    auto y1 = dpr_forward(enc, dec, spec, false);

    auto cat = concat_channels<float>({enc, dec});
    auto b0 = conv2d(cat, spec.stat.w, spec.stat.b, 1, 1);
    auto b1 = conv2d(cat, spec.d3.weight, spec.d3.bias, 1, 3, 3);
    auto b2 = conv2d(cat, spec.d6.weight, spec.d6.bias, 1, 6, 6);
    auto z = concat_channels<float>({b0, b1, b2});
    z = conv_bn_relu(z, spec.fuse0, spec.n0, false);
    auto y2 = conv_bn_relu(z, spec.fuse1, spec.n1, false);

    ASSERT_EQ(y1.shape(), y2.shape());
    EXPECT_EQ(y1.shape(), (Shape4{1, 4, 16, 16}));
    for (int64_t i = 0; i < y1.numel(); ++i) ASSERT_NEAR(y1.data()[i], y2.data()[i], 1e-6f);
}

TEST(DPR, RejectsSpatialMismatch) {
    auto spec = make_dpr<float>(6, 4, {3, 6});
    auto enc = Tensor<float>::zeros({1, 3, 16, 16});
    auto dec = Tensor<float>::zeros({1, 3, 8, 8});
    EXPECT_THROW(dpr_forward(enc, dec, spec, false), DimensionError);
}

TEST(PLHead, ZeroWeightsGiveUniformDistribution) {
    auto head = make_conv<float>(4, 8, 1);
    auto x = Tensor<float>::full({1, 8, 4, 4}, 0.3f);
    auto y = pl_head(x, head);
    for (int64_t i = 0; i < y.numel(); ++i) ASSERT_FLOAT_EQ(y.data()[i], 0.25f);

    auto head1 = make_conv<float>(1, 8, 1);
    auto y1 = pl_head(x, head1);
    for (int64_t i = 0; i < y1.numel(); ++i) ASSERT_FLOAT_EQ(y1.data()[i], 0.5f);
}

TEST(Model, AlternativeModulesBuildAndRun) {
    Rng rng(21);
    auto x = rand_f({1, 3, 32, 32}, rng, 0.f, 1.f);

    ModelConfig ppm_cfg = tiny_config();
    ppm_cfg.decoder_alternative = DecoderAlternative::kPpm;
    DeepPyram<float> ppm_model(ppm_cfg);
    ppm_model.init_parameters(1);
    EXPECT_EQ(ppm_model.forward(x, false).master().shape(), (Shape4{1, 3, 32, 32}));
    std::set<std::string> ppm_names;
    ppm_model.visit_parameters(
        [&](const std::string& name, Tensor<float>) { ppm_names.insert(name); });
    EXPECT_EQ(ppm_names.count("dec4.ppm.bottleneck.w"), 1u);
    EXPECT_EQ(ppm_names.count("dec4.pvf.bottleneck.w"), 0u);

    ModelConfig aspp_cfg = tiny_config();
    aspp_cfg.decoder_alternative = DecoderAlternative::kAsppPlus;
    DeepPyram<float> aspp_model(aspp_cfg);
    aspp_model.init_parameters(1);
    EXPECT_EQ(aspp_model.forward(x, false).master().shape(), (Shape4{1, 3, 32, 32}));
    std::set<std::string> aspp_names;
    aspp_model.visit_parameters(
        [&](const std::string& name, Tensor<float>) { aspp_names.insert(name); });
    EXPECT_EQ(aspp_names.count("dec4.aspp.d3.w"), 1u);
    EXPECT_EQ(aspp_names.count("dec4.dpr.d3.w"), 0u);
}

TEST(Model, UpsampleModesProduceSameShapes) {
    Rng rng(22);
    auto x = rand_f({1, 3, 32, 32}, rng, 0.f, 1.f);
    for (UpsampleMode mode :
         {UpsampleMode::kBilinear, UpsampleMode::kTransposed, UpsampleMode::kPixelShuffle}) {
        ModelConfig cfg = tiny_config();
        cfg.upsample_mode = mode;
        DeepPyram<float> model(cfg);
        model.init_parameters(4);
        auto out = model.forward(x, false);
        ASSERT_EQ(out.outputs.size(), 4u) << to_string(mode);
        EXPECT_EQ(out.master().shape(), (Shape4{1, 3, 32, 32})) << to_string(mode);
        if (mode != UpsampleMode::kBilinear) {
            std::set<std::string> names;
            model.visit_parameters(
                [&](const std::string& name, Tensor<float>) { names.insert(name); });
            EXPECT_EQ(names.count("dec4.up.w"), 1u) << to_string(mode);
        }
    }
}

TEST(Model, InitIsPerNameDeterministicAcrossVariants) {
    ModelConfig baseline = tiny_config();
    baseline.enable_pvf = false;
    baseline.enable_dpr = false;
    baseline.enable_pl = false;
    DeepPyram<float> base_model(baseline);
    DeepPyram<float> full_model(tiny_config());
    base_model.init_parameters(123);
    full_model.init_parameters(123);

    std::map<std::string, Tensor<float>> base_params, full_params;
    base_model.visit_parameters(
        [&](const std::string& name, Tensor<float> t) { base_params.emplace(name, t); });
    full_model.visit_parameters(
        [&](const std::string& name, Tensor<float> t) { full_params.emplace(name, t); });

    // shared names get identical values no matter which modules surround them
    int shared = 0;
    for (const auto& [name, tensor] : base_params) {
        auto it = full_params.find(name);
        if (it == full_params.end()) continue;
        ++shared;
        ASSERT_EQ(tensor.numel(), it->second.numel()) << name;
        for (int64_t i = 0; i < tensor.numel(); ++i)
            ASSERT_EQ(tensor.data()[i], it->second.data()[i]) << name << " element " << i;
    }
    EXPECT_GE(shared, 21);  // encoder stack and master head overlap

    // learned offset fields start at exactly zero
    auto off = full_params.find("dec4.dpr.d3.offset.w");
    ASSERT_NE(off, full_params.end());
    for (int64_t i = 0; i < off->second.numel(); ++i)
        ASSERT_EQ(off->second.data()[i], 0.f);
}

TEST(Model, ForwardIsDeterministic) {
    DeepPyram<float> a(tiny_config());
    DeepPyram<float> b(tiny_config());
    a.init_parameters(77);
    b.init_parameters(77);
    Rng rng(8);
    auto x = rand_f({1, 3, 32, 32}, rng, 0.f, 1.f);
    auto ya = a.forward(x, true);
    auto yb = b.forward(x, true);
    for (size_t j = 0; j < ya.outputs.size(); ++j)
        for (int64_t i = 0; i < ya.outputs[j].numel(); ++i)
            ASSERT_EQ(ya.outputs[j].data()[i], yb.outputs[j].data()[i]);
}

TEST(Model, RejectsBadConfigsAndInputs) {
    ModelConfig four_stages = tiny_config();
    four_stages.widths = {8, 16, 16, 16};
    four_stages.stage_convs = {2, 2, 2, 2};
    EXPECT_THROW(DeepPyram<float>{four_stages}, ConfigError);

    ModelConfig even_pool = tiny_config();
    even_pool.pvf_pool_sizes = {3, 4, 7};
    EXPECT_THROW(DeepPyram<float>{even_pool}, ConfigError);

    ModelConfig no_classes = tiny_config();
    no_classes.num_classes = 0;
    EXPECT_THROW(DeepPyram<float>{no_classes}, ConfigError);

    DeepPyram<float> model(tiny_config());
    model.init_parameters(1);
    EXPECT_THROW(model.forward(Tensor<float>::zeros({1, 3, 24, 24}), false), DimensionError);
    EXPECT_THROW(model.forward(Tensor<float>::zeros({1, 1, 32, 32}), false), DimensionError);
}

TEST(Model, MemorizesASingleSample) {
    DeepPyram<float> model(tiny_config());
    model.init_parameters(31);

    Rng rng(31);
    auto x = rand_f({1, 3, 32, 32}, rng, 0.f, 1.f);
    Mask gt = Mask::zeros({1, 1, 32, 32});
    for (int64_t h = 8; h < 24; ++h)
        for (int64_t w = 8; w < 24; ++w) gt.at(0, 0, h, w) = 1;  // square of class 1
    for (int64_t h = 2; h < 30; ++h) gt.at(0, 0, h, 16) = 2;     // bar of class 2

    std::vector<Tensor<float>> params;
    model.visit_parameters(
        [&](const std::string&, Tensor<float> t) { params.push_back(t); });

    LossConfig loss_cfg;
    const float lr = 0.05f;
    float first = 0.f, last = 0.f;
    for (int step = 0; step < 20; ++step) {
        auto out = model.forward(x, true);
        auto loss = pyramid_loss(out.outputs, gt, loss_cfg, 3);
        const float value = loss.item();
        ASSERT_TRUE(std::isfinite(value)) << "step " << step;
        if (step == 0) first = value;
        last = value;
        for (auto& p : params) p.zero_grad();
        loss.backward();
        for (auto& p : params) {
            const auto& g = p.grad();
            auto& v = p.vec();
            for (size_t i = 0; i < v.size(); ++i) v[i] -= lr * g[i];
        }
    }
    EXPECT_LT(last, first) << "first " << first << " last " << last;
}

TEST(GradSuite, PvfAndDprPassOnFiveSeeds) {
    for (const char* group : {"pvf", "dpr"}) {
        for (uint64_t seed : {1ull, 2ull, 3ull, 4ull, 5ull}) {
            auto cases = run_gradcheck_suite(group, seed);
            ASSERT_FALSE(cases.empty());
            for (const auto& c : cases) {
                EXPECT_TRUE(c.pass()) << c.name << " seed " << seed
                                      << " max_rel_err " << c.report.max_rel_err
                                      << " skipped_frac " << c.report.skipped_fraction()
                                      << " worst: " << c.report.worst_site;
            }
        }
    }
}
