#pragma once

#include <string>
#include <vector>

#include "deeppyram/deform.hpp"
#include "deeppyram/gradcheck.hpp"
#include "deeppyram/losses.hpp"
#include "deeppyram/model.hpp"
#include "deeppyram/ops.hpp"

namespace deeppyram {

struct SuiteCase {
    std::string group; // conv | deform | pvf | dpr | loss
    std::string name;
    GradCheckReport report;
    double tol = 1e-3;
    bool pass() const { return report.pass(tol); }
};

namespace detail {

inline Tensor<double> rand_tensor(Shape4 s, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor<double> t = Tensor<double>::zeros(s);
    for (auto& v : t.vec()) v = rng.uniform(lo, hi);
    return t;
}

// scalar probe: sum(y * k) with a fixed random cotangent k
template <typename T>
Tensor<T> probe(const Tensor<T>& y, const Tensor<T>& k) {
    return sum(mul(y, k));
}

} // namespace detail

// Gradient checks for every differentiable primitive (group "conv" covers
// convolution plus pooling/upsampling/normalization/activations).
inline void gradcheck_primitives(std::vector<SuiteCase>& out, uint64_t seed) {
    using detail::probe;
    using detail::rand_tensor;
    auto add_case = [&out](const char* name, GradCheckReport rep) {
        out.push_back({"conv", name, rep, 1e-3});
    };

    { // plain conv2d, stride 1, pad 1
        Rng r(mix_seed(seed, 1));
        auto x = rand_tensor({2, 3, 8, 8}, r);
        auto w = rand_tensor({4, 3, 3, 3}, r);
        auto b = rand_tensor({1, 4, 1, 1}, r);
        auto k = rand_tensor({2, 4, 8, 8}, r);
        add_case("conv2d_s1p1", numeric_grad_check_multi(
            [](const auto& in) { return probe(conv2d(in[0], in[1], in[2], 1, 1, 1, 1), in[3]); },
            {x, w, b, k}, {true, true, true, false}));
    }
    { // strided + grouped
        Rng r(mix_seed(seed, 2));
        auto x = rand_tensor({2, 4, 8, 8}, r);
        auto w = rand_tensor({6, 2, 3, 3}, r);
        auto k = rand_tensor({2, 6, 4, 4}, r);
        add_case("conv2d_s2_groups2", numeric_grad_check_multi(
            [](const auto& in) { return probe(conv2d(in[0], in[1], {}, 2, 1, 1, 2), in[2]); },
            {x, w, k}, {true, true, false}));
    }
    { // dilation 2 and 3 (same-size padding)
        Rng r(mix_seed(seed, 3));
        auto x = rand_tensor({2, 3, 8, 8}, r);
        auto w = rand_tensor({2, 3, 3, 3}, r);
        auto k2 = rand_tensor({2, 2, 8, 8}, r);
        add_case("conv2d_dilation2", numeric_grad_check_multi(
            [](const auto& in) { return probe(conv2d(in[0], in[1], {}, 1, 2, 2, 1), in[2]); },
            {x, w, k2}, {true, true, false}));
        add_case("conv2d_dilation3", numeric_grad_check_multi(
            [](const auto& in) { return probe(conv2d(in[0], in[1], {}, 1, 3, 3, 1), in[2]); },
            {x, w, k2}, {true, true, false}));
    }
    { // transposed conv k2 s2
        Rng r(mix_seed(seed, 4));
        auto x = rand_tensor({2, 3, 4, 4}, r);
        auto w = rand_tensor({3, 4, 2, 2}, r);
        auto b = rand_tensor({1, 4, 1, 1}, r);
        auto k = rand_tensor({2, 4, 8, 8}, r);
        add_case("transposed_conv2d_k2s2", numeric_grad_check_multi(
            [](const auto& in) { return probe(transposed_conv2d(in[0], in[1], 2, in[2]), in[3]); },
            {x, w, b, k}, {true, true, true, false}));
    }
    { // pixel shuffle x2
        Rng r(mix_seed(seed, 5));
        auto x = rand_tensor({1, 8, 4, 4}, r);
        auto k = rand_tensor({1, 2, 8, 8}, r);
        add_case("pixel_shuffle_x2", numeric_grad_check_multi(
            [](const auto& in) { return probe(pixel_shuffle(in[0], 2), in[1]); },
            {x, k}, {true, false}));
    }
    { // avg pool: same-size k3 s1 p1, downscale k2 s2
        Rng r(mix_seed(seed, 6));
        auto x = rand_tensor({2, 3, 8, 8}, r);
        auto k1 = rand_tensor({2, 3, 8, 8}, r);
        auto k2 = rand_tensor({2, 3, 4, 4}, r);
        add_case("avg_pool2d_k3s1p1", numeric_grad_check_multi(
            [](const auto& in) { return probe(avg_pool2d(in[0], 3, 1, 1), in[1]); },
            {x, k1}, {true, false}));
        add_case("avg_pool2d_k2s2", numeric_grad_check_multi(
            [](const auto& in) { return probe(avg_pool2d(in[0], 2, 2, 0), in[1]); },
            {x, k2}, {true, false}));
    }
    { // max pool k2 s2
        Rng r(mix_seed(seed, 7));
        auto x = rand_tensor({2, 3, 8, 8}, r);
        auto k = rand_tensor({2, 3, 4, 4}, r);
        add_case("max_pool2d_k2s2", numeric_grad_check_multi(
            [](const auto& in) { return probe(max_pool2d(in[0], 2, 2), in[1]); },
            {x, k}, {true, false}));
    }
    { // global average pool
        Rng r(mix_seed(seed, 8));
        auto x = rand_tensor({2, 4, 6, 6}, r);
        auto k = rand_tensor({2, 4, 1, 1}, r);
        add_case("global_avg_pool", numeric_grad_check_multi(
            [](const auto& in) { return probe(global_avg_pool(in[0]), in[1]); },
            {x, k}, {true, false}));
    }
    { // adaptive pooling (pyramid bin sizes)
        Rng r(mix_seed(seed, 9));
        auto x = rand_tensor({1, 3, 8, 8}, r);
        auto k = rand_tensor({1, 3, 3, 3}, r);
        add_case("adaptive_avg_pool2d_3x3", numeric_grad_check_multi(
            [](const auto& in) { return probe(adaptive_avg_pool2d(in[0], 3, 3), in[1]); },
            {x, k}, {true, false}));
    }
    { // bilinear upsample x2
        Rng r(mix_seed(seed, 10));
        auto x = rand_tensor({2, 3, 4, 4}, r);
        auto k = rand_tensor({2, 3, 8, 8}, r);
        add_case("bilinear_upsample_x2", numeric_grad_check_multi(
            [](const auto& in) { return probe(bilinear_upsample(in[0], 8, 8), in[1]); },
            {x, k}, {true, false}));
    }
    { // batch norm (training statistics) and layer norm
        Rng r(mix_seed(seed, 11));
        auto x = rand_tensor({2, 3, 6, 6}, r);
        auto gm = rand_tensor({1, 3, 1, 1}, r, 0.5, 1.5);
        auto bt = rand_tensor({1, 3, 1, 1}, r);
        auto k = rand_tensor({2, 3, 6, 6}, r);
        add_case("batch_norm_training", numeric_grad_check_multi(
            [](const auto& in) {
                using Sc = typename std::decay_t<decltype(in[0])>::scalar_type;
                auto rm = Tensor<Sc>::zeros({1, 3, 1, 1});
                auto rv = Tensor<Sc>::full({1, 3, 1, 1}, Sc(1));
                return probe(batch_norm(in[0], in[1], in[2], rm, rv, true), in[3]);
            },
            {x, gm, bt, k}, {true, true, true, false}));
        add_case("layer_norm", numeric_grad_check_multi(
            [](const auto& in) { return probe(layer_norm(in[0]), in[1]); },
            {x, k}, {true, false}));
    }
    { // activations
        Rng r(mix_seed(seed, 12));
        auto x = rand_tensor({2, 4, 6, 6}, r);
        auto x2 = rand_tensor({2, 4, 6, 6}, r, -2.0, 2.0);
        auto k = rand_tensor({2, 4, 6, 6}, r);
        add_case("relu", numeric_grad_check_multi(
            [](const auto& in) { return probe(relu(in[0]), in[1]); }, {x, k}, {true, false}));
        add_case("hardtanh", numeric_grad_check_multi(
            [](const auto& in) { return probe(hardtanh(in[0]), in[1]); }, {x2, k}, {true, false}));
        add_case("sigmoid", numeric_grad_check_multi(
            [](const auto& in) { return probe(sigmoid(in[0]), in[1]); }, {x, k}, {true, false}));
        add_case("softmax_channels", numeric_grad_check_multi(
            [](const auto& in) { return probe(softmax_channels(in[0]), in[1]); }, {x, k}, {true, false}));
    }
}

// Deformable-convolution gradients: the offset conv, the sampler (w.r.t.
// input, weights, and offsets), and the composed block.
inline void gradcheck_deform(std::vector<SuiteCase>& out, uint64_t seed) {
    using detail::probe;
    using detail::rand_tensor;
    auto add_case = [&out](const char* name, GradCheckReport rep) {
        out.push_back({"deform", name, rep, 1e-3});
    };

    { // offset field wrt x and the offset-conv weight
        Rng r(mix_seed(seed, 21));
        auto x = rand_tensor({1, 3, 6, 6}, r);
        auto ow = rand_tensor({18, 3, 3, 3}, r, -0.2, 0.2);
        auto k = rand_tensor({1, 18, 6, 6}, r);
        add_case("compute_offsets", numeric_grad_check_multi(
            [](const auto& in) { return probe(compute_offsets(in[0], in[1]), in[2]); },
            {x, ow, k}, {true, true, false}));
    }
    { // deformable conv wrt x, offsets, w, b — dilation 1 and 3
        Rng r(mix_seed(seed, 22));
        auto x = rand_tensor({1, 3, 6, 6}, r);
        auto off = rand_tensor({1, 18, 6, 6}, r, -0.9, 0.9);
        auto w = rand_tensor({2, 3, 3, 3}, r);
        auto b = rand_tensor({1, 2, 1, 1}, r);
        auto k = rand_tensor({1, 2, 6, 6}, r);
        add_case("deformable_conv2d_d1", numeric_grad_check_multi(
            [](const auto& in) {
                return probe(deformable_conv2d(in[0], in[1], in[2], in[3], 1), in[4]);
            },
            {x, off, w, b, k}, {true, true, true, true, false}));

        auto x3 = rand_tensor({1, 2, 8, 8}, r);
        auto off3 = rand_tensor({1, 18, 8, 8}, r, -0.9, 0.9);
        auto w3 = rand_tensor({2, 2, 3, 3}, r);
        auto k3 = rand_tensor({1, 2, 8, 8}, r);
        add_case("deformable_conv2d_d3", numeric_grad_check_multi(
            [](const auto& in) {
                using Sc = typename std::decay_t<decltype(in[0])>::scalar_type;
                return probe(deformable_conv2d(in[0], in[1], in[2], Tensor<Sc>{}, 3), in[3]);
            },
            {x3, off3, w3, k3}, {true, true, true, false}));
    }
    { // composed deformable block, dilation 3. The offset field clusters
      // around 0, exactly where the sampler kinks; a smaller step keeps the
      // finite-difference windows inside single bilinear cells.
        Rng r(mix_seed(seed, 23));
        GradCheckOptions block_opt;
        block_opt.step = 1e-3;
        auto x = rand_tensor({1, 2, 8, 8}, r);
        auto ow = rand_tensor({18, 2, 3, 3}, r, -0.3, 0.3);
        auto w = rand_tensor({2, 2, 3, 3}, r);
        auto b = rand_tensor({1, 2, 1, 1}, r);
        auto k = rand_tensor({1, 2, 8, 8}, r);
        add_case("deformable_block_d3", numeric_grad_check_multi(
            [](const auto& in) {
                using Sc = typename std::decay_t<decltype(in[0])>::scalar_type;
                DeformableConvSpec<Sc> spec;
                spec.dilation = 3;
                spec.weight = in[2];
                spec.bias = in[3];
                spec.offset_weight = in[1];
                return probe(deformable_block(in[0], spec), in[4]);
            },
            {x, ow, w, b, k}, {true, true, true, true, false}, block_opt));
    }
}

// End-to-end gradients through the pyramid-fusion block: input plus all
// three convolution stages. Every op inside is smooth, so the default
// finite-difference step applies.
inline void gradcheck_pvf(std::vector<SuiteCase>& out, uint64_t seed) {
    using detail::probe;
    using detail::rand_tensor;
    Rng r(mix_seed(seed, 41));
    auto x = rand_tensor({1, 8, 7, 7}, r);
    auto bw = rand_tensor({4, 8, 1, 1}, r);
    auto bb = rand_tensor({1, 4, 1, 1}, r);
    auto gw = rand_tensor({4, 4, 3, 3}, r);
    auto gb = rand_tensor({1, 4, 1, 1}, r);
    auto fw = rand_tensor({8, 4, 3, 3}, r);
    auto fb = rand_tensor({1, 8, 1, 1}, r);
    auto k = rand_tensor({1, 8, 7, 7}, r);
    out.push_back({"pvf", "pvf_forward",
                   numeric_grad_check_multi(
                       [](const auto& in) {
                           using Sc = typename std::decay_t<decltype(in[0])>::scalar_type;
                           PVFSpec<Sc> spec;
                           spec.bottleneck = {in[1], in[2]};
                           spec.group = {in[3], in[4]};
                           spec.fuse = {in[5], in[6]};
                           return probe(pvf_forward(in[0], spec), in[7]);
                       },
                       {x, bw, bb, gw, gb, fw, fb, k},
                       {true, true, true, true, true, true, true, false}),
                   1e-3});
}

// End-to-end gradients through the reception block: skip and decoder
// features plus every branch and fusion parameter. As in the deform group,
// the sampler kinks call for the smaller step.
inline void gradcheck_dpr(std::vector<SuiteCase>& out, uint64_t seed) {
    using detail::probe;
    using detail::rand_tensor;
    Rng r(mix_seed(seed, 51));
    GradCheckOptions opt;
    opt.step = 1e-3;
    auto enc = rand_tensor({1, 3, 8, 8}, r);
    auto dec = rand_tensor({1, 3, 8, 8}, r);
    auto sw = rand_tensor({4, 6, 3, 3}, r);
    auto sb = rand_tensor({1, 4, 1, 1}, r);
    auto o3 = rand_tensor({18, 6, 3, 3}, r, -0.2, 0.2);
    auto w3 = rand_tensor({4, 6, 3, 3}, r);
    auto b3 = rand_tensor({1, 4, 1, 1}, r);
    auto o6 = rand_tensor({18, 6, 3, 3}, r, -0.2, 0.2);
    auto w6 = rand_tensor({4, 6, 3, 3}, r);
    auto b6 = rand_tensor({1, 4, 1, 1}, r);
    auto f0w = rand_tensor({4, 12, 3, 3}, r);
    auto f0b = rand_tensor({1, 4, 1, 1}, r);
    auto g0 = rand_tensor({1, 4, 1, 1}, r, 0.5, 1.5);
    auto e0 = rand_tensor({1, 4, 1, 1}, r);
    auto f1w = rand_tensor({4, 4, 3, 3}, r);
    auto f1b = rand_tensor({1, 4, 1, 1}, r);
    auto g1 = rand_tensor({1, 4, 1, 1}, r, 0.5, 1.5);
    auto e1 = rand_tensor({1, 4, 1, 1}, r);
    auto k = rand_tensor({1, 4, 8, 8}, r);
    out.push_back({"dpr", "dpr_forward",
                   numeric_grad_check_multi(
                       [](const auto& in) {
                           using Sc = typename std::decay_t<decltype(in[0])>::scalar_type;
                           DPRSpec<Sc> spec;
                           spec.stat = {in[2], in[3]};
                           spec.d3.dilation = 3;
                           spec.d3.offset_weight = in[4];
                           spec.d3.weight = in[5];
                           spec.d3.bias = in[6];
                           spec.d6.dilation = 6;
                           spec.d6.offset_weight = in[7];
                           spec.d6.weight = in[8];
                           spec.d6.bias = in[9];
                           spec.fuse0 = {in[10], in[11]};
                           spec.n0 = {in[12], in[13], Tensor<Sc>::zeros({1, 4, 1, 1}),
                                      Tensor<Sc>::full({1, 4, 1, 1}, Sc(1))};
                           spec.fuse1 = {in[14], in[15]};
                           spec.n1 = {in[16], in[17], Tensor<Sc>::zeros({1, 4, 1, 1}),
                                      Tensor<Sc>::full({1, 4, 1, 1}, Sc(1))};
                           return probe(dpr_forward(in[0], in[1], spec, true), in[18]);
                       },
                       {enc, dec, sw, sb, o3, w3, b3, o6, w6, b6, f0w, f0b, g0, e0, f1w, f1b,
                        g1, e1, k},
                       {true, true, true, true, true, true, true, true, true, true, true, true,
                        true, true, true, true, true, true, false},
                       opt),
                   1e-3});
}

// Loss gradients w.r.t. predictions (binary, multi-class, and the pyramid
// aggregation). Probabilities stay in (0.05, 0.95) so finite-difference
// probes never leave the valid domain or touch the clamp.
inline void gradcheck_loss(std::vector<SuiteCase>& out, uint64_t seed) {
    using detail::rand_tensor;
    auto add_case = [&out](const char* name, GradCheckReport rep) {
        out.push_back({"loss", name, rep, 1e-3});
    };
    LossConfig cfg;

    Rng r(mix_seed(seed, 31));
    auto make_binary_target = [&r](Shape4 s) {
        Tensor<double> t = Tensor<double>::zeros(s);
        for (auto& v : t.vec()) v = r.bernoulli(0.5) ? 1.0 : 0.0;
        return t;
    };

    {
        auto p = rand_tensor({1, 1, 4, 4}, r, 0.05, 0.95);
        auto t = make_binary_target({1, 1, 4, 4});
        add_case("ce_log_dice_binary", numeric_grad_check_multi(
            [cfg](const auto& in) { return ce_log_dice(in[0], in[1], cfg); },
            {p, t}, {true, false}));
    }
    {
        auto p = rand_tensor({2, 3, 4, 4}, r, 0.05, 0.95);
        Mask m = Mask::zeros({2, 1, 4, 4});
        for (auto& v : m.vec()) v = static_cast<int32_t>(r.uniform_int(0, 2));
        auto t = cast_values<double>(one_hot<float>(m, 3));
        add_case("ce_log_dice_multiclass", numeric_grad_check_multi(
            [cfg](const auto& in) { return ce_log_dice(in[0], in[1], cfg); },
            {p, t}, {true, false}));
    }
    {
        Mask m = Mask::zeros({1, 1, 8, 8});
        for (auto& v : m.vec()) v = static_cast<int32_t>(r.uniform_int(0, 2));
        auto p1 = rand_tensor({1, 3, 8, 8}, r, 0.05, 0.95);
        auto p2 = rand_tensor({1, 3, 4, 4}, r, 0.05, 0.95);
        auto p4 = rand_tensor({1, 3, 2, 2}, r, 0.05, 0.95);
        auto p8 = rand_tensor({1, 3, 1, 1}, r, 0.05, 0.95);
        add_case("pyramid_loss_4scale", numeric_grad_check_multi(
            [cfg, m](const auto& in) {
                using Sc = typename std::decay_t<decltype(in[0])>::scalar_type;
                return pyramid_loss(std::vector<Tensor<Sc>>{in[0], in[1], in[2], in[3]}, m,
                                    cfg, 3);
            },
            {p1, p2, p4, p8}, {true, true, true, true}));
    }
}

inline std::vector<SuiteCase> run_gradcheck_suite(const std::string& group, uint64_t seed) {
    std::vector<SuiteCase> all;
    if (group == "all" || group == "conv") gradcheck_primitives(all, seed);
    if (group == "all" || group == "deform") gradcheck_deform(all, seed);
    if (group == "all" || group == "pvf") gradcheck_pvf(all, seed);
    if (group == "all" || group == "dpr") gradcheck_dpr(all, seed);
    if (group == "all" || group == "loss") gradcheck_loss(all, seed);
    return all;
}

} // namespace deeppyram
