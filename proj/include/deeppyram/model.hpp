#pragma once

#include <array>
#include <cmath>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "deeppyram/common.hpp"
#include "deeppyram/deform.hpp"
#include "deeppyram/ops.hpp"
#include "deeppyram/tensor.hpp"

namespace deeppyram {

// ---------------------------------------------------------------------------
// configuration
// ---------------------------------------------------------------------------

enum class DecoderAlternative { kNone, kAsppPlus, kPpm };
enum class UpsampleMode { kBilinear, kTransposed, kPixelShuffle };

inline const char* to_string(DecoderAlternative a) {
    switch (a) {
        case DecoderAlternative::kAsppPlus: return "aspp_plus";
        case DecoderAlternative::kPpm: return "ppm";
        default: return "none";
    }
}

inline const char* to_string(UpsampleMode m) {
    switch (m) {
        case UpsampleMode::kTransposed: return "transposed";
        case UpsampleMode::kPixelShuffle: return "pixel_shuffle";
        default: return "bilinear";
    }
}

inline DecoderAlternative alternative_from_string(const std::string& s) {
    if (s == "none") return DecoderAlternative::kNone;
    if (s == "aspp_plus") return DecoderAlternative::kAsppPlus;
    if (s == "ppm") return DecoderAlternative::kPpm;
    throw ConfigError("unknown decoder alternative '" + s + "' (none|aspp_plus|ppm)");
}

inline UpsampleMode upsample_from_string(const std::string& s) {
    if (s == "bilinear") return UpsampleMode::kBilinear;
    if (s == "transposed") return UpsampleMode::kTransposed;
    if (s == "pixel_shuffle") return UpsampleMode::kPixelShuffle;
    throw ConfigError("unknown upsample mode '" + s + "' (bilinear|transposed|pixel_shuffle)");
}

struct ModelConfig {
    int in_channels = 3;
    int num_classes = 5;
    // Five encoder stages; scaled-down widths by default, full widths via
    // full_width_config(). stage_convs holds the conv count per stage.
    std::vector<int> widths = {16, 32, 64, 128, 128};
    std::vector<int> stage_convs = {2, 2, 2, 2, 2};
    bool enable_pvf = true;
    bool enable_dpr = true;
    bool enable_pl = true;
    // When set, the alternative occupies its slot regardless of the toggle:
    // ppm replaces the pyramid-fusion stage, aspp_plus the reception block.
    DecoderAlternative decoder_alternative = DecoderAlternative::kNone;
    UpsampleMode upsample_mode = UpsampleMode::kBilinear;
    std::vector<int> pvf_pool_sizes = {3, 5, 7};
    std::vector<int> dpr_dilations = {3, 6};

    void validate() const {
        if (in_channels < 1) throw ConfigError("model: in_channels must be >= 1");
        if (num_classes < 1) throw ConfigError("model: num_classes must be >= 1");
        if (widths.size() != 5 || stage_convs.size() != 5)
            throw ConfigError("model: encoder must have exactly 5 stages");
        for (int w : widths)
            if (w < 8) throw ConfigError("model: stage widths must be >= 8");
        for (int c : stage_convs)
            if (c < 1) throw ConfigError("model: stage conv counts must be >= 1");
        if (pvf_pool_sizes.size() != 3)
            throw ConfigError("model: exactly 3 pyramid pool sizes expected");
        for (int k : pvf_pool_sizes)
            if (k < 3 || k % 2 == 0)
                throw ConfigError("model: pyramid pool sizes must be odd and >= 3");
        if (dpr_dilations.size() != 2)
            throw ConfigError("model: exactly 2 reception dilations expected");
        for (int d : dpr_dilations)
            if (d < 1) throw ConfigError("model: dilations must be >= 1");
    }
};

inline ModelConfig full_width_config() {
    ModelConfig cfg;
    cfg.widths = {64, 128, 256, 512, 512};
    cfg.stage_convs = {2, 2, 3, 3, 3};
    return cfg;
}

// ---------------------------------------------------------------------------
// layer bundles
// ---------------------------------------------------------------------------

template <typename T>
struct ConvLayer {
    Tensor<T> w, b;
};

template <typename T>
ConvLayer<T> make_conv(int64_t out_c, int64_t in_c, int64_t k) {
    return {Tensor<T>::zeros({out_c, in_c, k, k}), Tensor<T>::zeros({1, out_c, 1, 1})};
}

template <typename T>
struct NormLayer {
    Tensor<T> gamma, beta;   // trainable
    Tensor<T> rmean, rvar;   // running statistics (buffers)
};

template <typename T>
NormLayer<T> make_norm(int64_t c) {
    return {Tensor<T>::full({1, c, 1, 1}, T(1)), Tensor<T>::zeros({1, c, 1, 1}),
            Tensor<T>::zeros({1, c, 1, 1}), Tensor<T>::full({1, c, 1, 1}, T(1))};
}

// conv(3x3, pad 1) + batch norm + relu
template <typename T>
Tensor<T> conv_bn_relu(const Tensor<T>& x, const ConvLayer<T>& conv, const NormLayer<T>& norm,
                       bool training) {
    Tensor<T> rm = norm.rmean;  // handle copies share the underlying buffers
    Tensor<T> rv = norm.rvar;
    return relu(batch_norm(conv2d(x, conv.w, conv.b, 1, 1), norm.gamma, norm.beta, rm, rv,
                           training));
}

// ---------------------------------------------------------------------------
// pyramid view fusion: 1x1 bottleneck, four stride-1 pooling views
// (global + three progressive kernels), grouped fusion, 3x3 mix, layer norm
// ---------------------------------------------------------------------------

// Half the input width, rounded to a multiple of four so the grouped
// fusion conv can split its output evenly across the four views.
inline int64_t pvf_bottleneck_width(int64_t c) {
    return std::max<int64_t>(4, 4 * ((c / 2 + 2) / 4));
}

template <typename T>
struct PVFSpec {
    ConvLayer<T> bottleneck;  // 1x1, C -> B
    ConvLayer<T> group;       // 3x3 grouped (4), 4B -> B
    ConvLayer<T> fuse;        // 3x3, B -> C
    std::vector<int> pool_sizes = {3, 5, 7};
};

template <typename T>
PVFSpec<T> make_pvf(int64_t c, const std::vector<int>& pool_sizes) {
    const int64_t b = pvf_bottleneck_width(c);
    PVFSpec<T> spec;
    spec.bottleneck = make_conv<T>(b, c, 1);
    spec.group = {Tensor<T>::zeros({b, b, 3, 3}), Tensor<T>::zeros({1, b, 1, 1})};
    spec.fuse = make_conv<T>(c, b, 3);
    spec.pool_sizes = pool_sizes;
    return spec;
}

template <typename T>
Tensor<T> pvf_forward(const Tensor<T>& x, const PVFSpec<T>& spec) {
    const Shape4 xs = x.shape();
    const int64_t b = spec.bottleneck.w.shape().n;
    if (spec.bottleneck.w.shape().c != xs.c)
        throw DimensionError("pvf_forward: bottleneck expects " +
                             std::to_string(spec.bottleneck.w.shape().c) + " channels, got " +
                             std::to_string(xs.c));
    if (b % 4 != 0)
        throw ConfigError("pvf_forward: bottleneck width " + std::to_string(b) +
                          " not divisible by 4");
    for (int k : spec.pool_sizes)
        if (k < 1 || k % 2 == 0)
            throw ConfigError("pvf_forward: pool sizes must be odd");

    Tensor<T> z = conv2d(x, spec.bottleneck.w, spec.bottleneck.b);
    std::vector<Tensor<T>> views;
    views.push_back(bilinear_upsample(global_avg_pool(z), xs.h, xs.w));
    for (int k : spec.pool_sizes) views.push_back(avg_pool2d(z, k, 1, k / 2));
    Tensor<T> cat = concat_channels(views);
    // Replicate padding keeps a uniform map exactly uniform end to end, so
    // the layer norm at the tail then maps it to (numerically) zero.
    Tensor<T> g = conv2d(pad_replicate(cat, 1), spec.group.w, spec.group.b, 1, 0, 1, 4);
    Tensor<T> f = conv2d(pad_replicate(g, 1), spec.fuse.w, spec.fuse.b);
    return layer_norm(f);
}

// ---------------------------------------------------------------------------
// region-pooling alternative to the fusion block (PSPNet-style bins);
// same bottleneck/fusion skeleton, but pooling over 1/3/4/6 sub-regions
// per axis instead of stride-1 sliding windows, and no layer norm
// ---------------------------------------------------------------------------

template <typename T>
struct PPMSpec {
    ConvLayer<T> bottleneck;  // 1x1, C -> B
    ConvLayer<T> group;       // 3x3 grouped (4), 4B -> B
    ConvLayer<T> fuse;        // 3x3, B -> C
    std::array<int, 4> bins = {1, 3, 4, 6};
};

template <typename T>
PPMSpec<T> make_ppm(int64_t c) {
    const int64_t b = pvf_bottleneck_width(c);
    PPMSpec<T> spec;
    spec.bottleneck = make_conv<T>(b, c, 1);
    spec.group = {Tensor<T>::zeros({b, b, 3, 3}), Tensor<T>::zeros({1, b, 1, 1})};
    spec.fuse = make_conv<T>(c, b, 3);
    return spec;
}

template <typename T>
Tensor<T> ppm_forward(const Tensor<T>& x, const PPMSpec<T>& spec) {
    const Shape4 xs = x.shape();
    if (spec.bottleneck.w.shape().c != xs.c)
        throw DimensionError("ppm_forward: bottleneck expects " +
                             std::to_string(spec.bottleneck.w.shape().c) + " channels, got " +
                             std::to_string(xs.c));
    Tensor<T> z = conv2d(x, spec.bottleneck.w, spec.bottleneck.b);
    std::vector<Tensor<T>> views;
    for (int bins : spec.bins)
        views.push_back(bilinear_upsample(adaptive_avg_pool2d(z, bins, bins), xs.h, xs.w));
    Tensor<T> cat = concat_channels(views);
    Tensor<T> g = conv2d(pad_replicate(cat, 1), spec.group.w, spec.group.b, 1, 0, 1, 4);
    return conv2d(pad_replicate(g, 1), spec.fuse.w, spec.fuse.b);
}

// ---------------------------------------------------------------------------
// deformable pyramid reception: concat skip + decoder features, three
// parallel branches (static 3x3, deformable dilation 3, deformable
// dilation 6), then two conv+norm+relu stages
// ---------------------------------------------------------------------------

template <typename T>
struct DPRSpec {
    ConvLayer<T> stat;           // 3x3 pad 1, C_cat -> C_b
    DeformableConvSpec<T> d3;    // C_cat -> C_b
    DeformableConvSpec<T> d6;    // C_cat -> C_b
    ConvLayer<T> fuse0;          // 3x3, 3*C_b -> C_out
    NormLayer<T> n0;
    ConvLayer<T> fuse1;          // 3x3, C_out -> C_out
    NormLayer<T> n1;
};

// Branch width: half the output width. The deformable branches are kept
// narrow; most of the block's reach comes from dilation, not width.
inline int64_t dpr_branch_width(int64_t out_c) { return std::max<int64_t>(4, out_c / 2); }

template <typename T>
DeformableConvSpec<T> make_deform(int64_t out_c, int64_t in_c, int64_t dilation) {
    DeformableConvSpec<T> d;
    d.dilation = dilation;
    d.weight = Tensor<T>::zeros({out_c, in_c, 3, 3});
    d.bias = Tensor<T>::zeros({1, out_c, 1, 1});
    d.offset_weight = Tensor<T>::zeros({18, in_c, 3, 3});
    return d;
}

template <typename T>
DPRSpec<T> make_dpr(int64_t cat_c, int64_t out_c, const std::vector<int>& dilations) {
    const int64_t cb = dpr_branch_width(out_c);
    DPRSpec<T> spec;
    spec.stat = make_conv<T>(cb, cat_c, 3);
    spec.d3 = make_deform<T>(cb, cat_c, dilations[0]);
    spec.d6 = make_deform<T>(cb, cat_c, dilations[1]);
    spec.fuse0 = make_conv<T>(out_c, 3 * cb, 3);
    spec.n0 = make_norm<T>(out_c);
    spec.fuse1 = make_conv<T>(out_c, out_c, 3);
    spec.n1 = make_norm<T>(out_c);
    return spec;
}

template <typename T>
Tensor<T> dpr_forward(const Tensor<T>& enc_feat, const Tensor<T>& dec_feat,
                      const DPRSpec<T>& spec, bool training) {
    const Shape4 es = enc_feat.shape();
    const Shape4 ds = dec_feat.shape();
    if (es.n != ds.n || es.h != ds.h || es.w != ds.w)
        throw DimensionError("dpr_forward: skip " + es.str() + " and decoder " + ds.str() +
                             " features disagree spatially");
    Tensor<T> cat = concat_channels<T>({enc_feat, dec_feat});
    Tensor<T> b0 = conv2d(cat, spec.stat.w, spec.stat.b, 1, 1);
    Tensor<T> b1 = deformable_block(cat, spec.d3);
    Tensor<T> b2 = deformable_block(cat, spec.d6);
    Tensor<T> z = concat_channels<T>({b0, b1, b2});
    z = conv_bn_relu(z, spec.fuse0, spec.n0, training);
    return conv_bn_relu(z, spec.fuse1, spec.n1, training);
}

// ---------------------------------------------------------------------------
// non-deformable alternative to the reception block: static 3x3 plus two
// plain dilated convs over the already-concatenated features, fused 3x3
// ---------------------------------------------------------------------------

template <typename T>
struct AsppPlusSpec {
    ConvLayer<T> stat;  // 3x3 pad 1, C_cat -> C_b
    ConvLayer<T> d3;    // 3x3 dilated, C_cat -> C_b
    ConvLayer<T> d6;    // 3x3 dilated, C_cat -> C_b
    int64_t dil3 = 3, dil6 = 6;
    ConvLayer<T> fuse;  // 3x3, 3*C_b -> C_out
    NormLayer<T> n;
};

template <typename T>
AsppPlusSpec<T> make_aspp_plus(int64_t cat_c, int64_t out_c, const std::vector<int>& dilations) {
    const int64_t cb = dpr_branch_width(out_c);
    AsppPlusSpec<T> spec;
    spec.stat = make_conv<T>(cb, cat_c, 3);
    spec.d3 = make_conv<T>(cb, cat_c, 3);
    spec.d6 = make_conv<T>(cb, cat_c, 3);
    spec.dil3 = dilations[0];
    spec.dil6 = dilations[1];
    spec.fuse = make_conv<T>(out_c, 3 * cb, 3);
    spec.n = make_norm<T>(out_c);
    return spec;
}

template <typename T>
Tensor<T> aspp_plus_forward(const Tensor<T>& x, const AsppPlusSpec<T>& spec, bool training) {
    Tensor<T> b0 = conv2d(x, spec.stat.w, spec.stat.b, 1, 1);
    Tensor<T> b1 = conv2d(x, spec.d3.w, spec.d3.b, 1, spec.dil3, spec.dil3);
    Tensor<T> b2 = conv2d(x, spec.d6.w, spec.d6.b, 1, spec.dil6, spec.dil6);
    Tensor<T> z = concat_channels<T>({b0, b1, b2});
    return conv_bn_relu(z, spec.fuse, spec.n, training);
}

// Baseline stage used when the reception block is disabled: two plain
// conv+norm+relu layers over the concatenated features.
template <typename T>
struct PlainBlock {
    ConvLayer<T> c0;
    NormLayer<T> n0;
    ConvLayer<T> c1;
    NormLayer<T> n1;
};

template <typename T>
PlainBlock<T> make_plain_block(int64_t cat_c, int64_t out_c) {
    return {make_conv<T>(out_c, cat_c, 3), make_norm<T>(out_c), make_conv<T>(out_c, out_c, 3),
            make_norm<T>(out_c)};
}

template <typename T>
Tensor<T> plain_block_forward(const Tensor<T>& enc_feat, const Tensor<T>& dec_feat,
                              const PlainBlock<T>& spec, bool training) {
    const Shape4 es = enc_feat.shape();
    const Shape4 ds = dec_feat.shape();
    if (es.n != ds.n || es.h != ds.h || es.w != ds.w)
        throw DimensionError("plain_block_forward: skip " + es.str() + " and decoder " +
                             ds.str() + " features disagree spatially");
    Tensor<T> z = concat_channels<T>({enc_feat, dec_feat});
    z = conv_bn_relu(z, spec.c0, spec.n0, training);
    return conv_bn_relu(z, spec.c1, spec.n1, training);
}

// Per-pixel classifier: 1x1 conv to class channels, softmax across them
// (sigmoid in single-channel binary mode).
template <typename T>
Tensor<T> pl_head(const Tensor<T>& x, const ConvLayer<T>& head) {
    Tensor<T> z = conv2d(x, head.w, head.b);
    return z.shape().c == 1 ? sigmoid(z) : softmax_channels(z);
}

// ---------------------------------------------------------------------------
// full network
// ---------------------------------------------------------------------------

template <typename T = float>
struct ModelOutput {
    // outputs[0] is the full-resolution master branch; with deep supervision
    // enabled, outputs[i] holds the 1/2^i-resolution side branch (i = 1..3).
    std::vector<Tensor<T>> outputs;
    const Tensor<T>& master() const { return outputs.front(); }
};

template <typename T = float>
class DeepPyram {
public:
    using ParamVisitor = std::function<void(const std::string&, Tensor<T>)>;

    explicit DeepPyram(ModelConfig cfg) : cfg_(std::move(cfg)) {
        cfg_.validate();
        build();
        visit_parameters([](const std::string&, Tensor<T> t) { t.set_requires_grad(true); });
    }

    const ModelConfig& config() const { return cfg_; }

    ModelOutput<T> forward(const Tensor<T>& image, bool training) {
        const Shape4 xs = image.shape();
        if (xs.c != cfg_.in_channels)
            throw DimensionError("forward: expected " + std::to_string(cfg_.in_channels) +
                                 " input channels, got " + std::to_string(xs.c));
        if (xs.h < 16 || xs.w < 16 || xs.h % 16 != 0 || xs.w % 16 != 0)
            throw DimensionError("forward: spatial size must be a positive multiple of 16, got " +
                                 xs.str());

        // encoder: five stages, 2x2 max-pool between them
        std::vector<Tensor<T>> feats;
        Tensor<T> h = image;
        for (int s = 0; s < 5; ++s) {
            if (s > 0) h = max_pool2d(h, 2, 2);
            for (size_t i = 0; i < enc_[s].convs.size(); ++i)
                h = conv_bn_relu(h, enc_[s].convs[i], enc_[s].norms[i], training);
            feats.push_back(h);
        }

        // decoder: coarse -> fine; stage k fuses skip feats[3-k]
        ModelOutput<T> out;
        std::array<Tensor<T>, 3> side;  // [0]=1/2, [1]=1/4, [2]=1/8
        Tensor<T> d = feats[4];
        for (int k = 0; k < 4; ++k) {
            DecoderStage& st = dec_[k];
            if (st.use_ppm)
                d = ppm_forward(d, st.ppm);
            else if (st.use_pvf)
                d = pvf_forward(d, st.pvf);
            d = upsample_x2(d, st);
            const Tensor<T>& skip = feats[3 - k];
            if (st.use_aspp)
                d = aspp_plus_forward(concat_channels<T>({skip, d}), st.aspp, training);
            else if (st.use_dpr)
                d = dpr_forward(skip, d, st.dpr, training);
            else
                d = plain_block_forward(skip, d, st.plain, training);
            if (cfg_.enable_pl && k < 3) side[2 - k] = pl_head(d, pl_[2 - k]);
        }

        out.outputs.push_back(pl_head(d, head_));
        if (cfg_.enable_pl)
            for (const Tensor<T>& s : side) out.outputs.push_back(s);
        return out;
    }

    // Visits every trainable parameter as (name, handle). Handles share
    // storage with the live layers, so callers may mutate through them.
    void visit_parameters(const ParamVisitor& fn) const { walk(fn, nullptr); }

    // Visits non-trainable state (running statistics of the norm layers).
    void visit_buffers(const ParamVisitor& fn) const { walk(nullptr, fn); }

    int64_t parameter_count() const {
        int64_t total = 0;
        visit_parameters([&](const std::string&, Tensor<T> t) { total += t.numel(); });
        return total;
    }

    int conv_layer_count() const {
        int count = 0;
        visit_parameters([&](const std::string& name, Tensor<T>) {
            if (name.size() >= 2 && name.compare(name.size() - 2, 2, ".w") == 0) ++count;
        });
        return count;
    }

    // Deterministic per-name initialization: each parameter draws from its
    // own stream keyed by (seed, name hash), so adding or removing side
    // modules never shifts the values of the surviving parameters.
    void init_parameters(uint64_t seed) {
        visit_parameters([&](const std::string& name, Tensor<T> t) {
            Rng rng(mix_seed(seed, fnv1a(name)));
            const bool weight = name.size() >= 2 && name.compare(name.size() - 2, 2, ".w") == 0;
            const bool offset = name.size() >= 9 &&
                                name.compare(name.size() - 9, 9, ".offset.w") == 0;
            const bool gamma = name.size() >= 6 && name.compare(name.size() - 6, 6, ".gamma") == 0;
            if (offset) {
                std::fill(t.vec().begin(), t.vec().end(), T(0));  // offsets start unbent
            } else if (weight) {
                // He fan-in scaling. For the stride-2 transposed kernels each
                // output pixel sees one tap per input channel, so the fan-in
                // is the input channel count alone.
                const Shape4 s = t.shape();
                const bool transposed = cfg_.upsample_mode == UpsampleMode::kTransposed &&
                                        name.find(".up.") != std::string::npos;
                const double fan_in = transposed ? static_cast<double>(s.n)
                                                 : static_cast<double>(s.c * s.h * s.w);
                const T stddev = static_cast<T>(std::sqrt(2.0 / fan_in));
                for (auto& v : t.vec()) v = static_cast<T>(rng.normal()) * stddev;
            } else if (gamma) {
                std::fill(t.vec().begin(), t.vec().end(), T(1));
            } else {
                std::fill(t.vec().begin(), t.vec().end(), T(0));  // biases, betas
            }
        });
        visit_buffers([&](const std::string& name, Tensor<T> t) {
            const bool var = name.size() >= 5 && name.compare(name.size() - 5, 5, ".rvar") == 0;
            std::fill(t.vec().begin(), t.vec().end(), var ? T(1) : T(0));
        });
    }

private:
    struct EncoderStage {
        std::vector<ConvLayer<T>> convs;
        std::vector<NormLayer<T>> norms;
    };

    struct DecoderStage {
        std::string name;
        bool use_pvf = false, use_ppm = false, use_dpr = false, use_aspp = false;
        PVFSpec<T> pvf;
        PPMSpec<T> ppm;
        ConvLayer<T> up;  // transposed / sub-pixel upsampling parameters
        DPRSpec<T> dpr;
        AsppPlusSpec<T> aspp;
        PlainBlock<T> plain;
    };

    void build() {
        int in_c = cfg_.in_channels;
        for (int s = 0; s < 5; ++s) {
            EncoderStage stage;
            for (int i = 0; i < cfg_.stage_convs[s]; ++i) {
                stage.convs.push_back(make_conv<T>(cfg_.widths[s], in_c, 3));
                stage.norms.push_back(make_norm<T>(cfg_.widths[s]));
                in_c = cfg_.widths[s];
            }
            enc_.push_back(std::move(stage));
        }

        int dec_in = cfg_.widths[4];
        for (int k = 0; k < 4; ++k) {
            DecoderStage st;
            st.name = "dec" + std::to_string(4 - k);
            const int skip_c = cfg_.widths[3 - k];
            const int out_c = skip_c;
            st.use_ppm = cfg_.decoder_alternative == DecoderAlternative::kPpm;
            st.use_pvf = !st.use_ppm && cfg_.enable_pvf;
            st.use_aspp = cfg_.decoder_alternative == DecoderAlternative::kAsppPlus;
            st.use_dpr = !st.use_aspp && cfg_.enable_dpr;
            if (st.use_pvf) st.pvf = make_pvf<T>(dec_in, cfg_.pvf_pool_sizes);
            if (st.use_ppm) st.ppm = make_ppm<T>(dec_in);
            if (cfg_.upsample_mode == UpsampleMode::kTransposed)
                st.up = {Tensor<T>::zeros({dec_in, dec_in, 2, 2}),
                         Tensor<T>::zeros({1, dec_in, 1, 1})};
            else if (cfg_.upsample_mode == UpsampleMode::kPixelShuffle)
                st.up = make_conv<T>(4 * dec_in, dec_in, 3);
            const int cat_c = skip_c + dec_in;
            if (st.use_dpr) st.dpr = make_dpr<T>(cat_c, out_c, cfg_.dpr_dilations);
            if (st.use_aspp) st.aspp = make_aspp_plus<T>(cat_c, out_c, cfg_.dpr_dilations);
            if (!st.use_dpr && !st.use_aspp) st.plain = make_plain_block<T>(cat_c, out_c);
            dec_.push_back(std::move(st));
            dec_in = out_c;
        }

        if (cfg_.enable_pl)
            for (int i = 0; i < 3; ++i)  // pl_[0] -> 1/2 res (dec2) ... pl_[2] -> 1/8 (dec4)
                pl_[i] = make_conv<T>(cfg_.num_classes, cfg_.widths[i + 1], 1);
        head_ = make_conv<T>(cfg_.num_classes, cfg_.widths[0], 1);
    }

    Tensor<T> upsample_x2(const Tensor<T>& x, const DecoderStage& st) {
        const Shape4 xs = x.shape();
        switch (cfg_.upsample_mode) {
            case UpsampleMode::kTransposed:
                return transposed_conv2d(x, st.up.w, 2, st.up.b);
            case UpsampleMode::kPixelShuffle:
                return pixel_shuffle(conv2d(x, st.up.w, st.up.b, 1, 1), 2);
            default:
                return bilinear_upsample(x, 2 * xs.h, 2 * xs.w);
        }
    }

    // Single traversal serving both parameter and buffer visitation; the
    // order is fixed and defines the checkpoint layout.
    void walk(const ParamVisitor& params, const ParamVisitor& buffers) const {
        auto conv = [&](const std::string& prefix, const ConvLayer<T>& c) {
            if (!params) return;
            params(prefix + ".w", c.w);
            params(prefix + ".b", c.b);
        };
        auto norm = [&](const std::string& prefix, const NormLayer<T>& n) {
            if (params) {
                params(prefix + ".gamma", n.gamma);
                params(prefix + ".beta", n.beta);
            }
            if (buffers) {
                buffers(prefix + ".rmean", n.rmean);
                buffers(prefix + ".rvar", n.rvar);
            }
        };
        auto deform = [&](const std::string& prefix, const DeformableConvSpec<T>& d) {
            if (!params) return;
            params(prefix + ".offset.w", d.offset_weight);
            params(prefix + ".w", d.weight);
            params(prefix + ".b", d.bias);
        };

        for (int s = 0; s < 5; ++s) {
            const std::string stage = "enc" + std::to_string(s + 1);
            for (size_t i = 0; i < enc_[s].convs.size(); ++i) {
                conv(stage + ".conv" + std::to_string(i), enc_[s].convs[i]);
                norm(stage + ".bn" + std::to_string(i), enc_[s].norms[i]);
            }
        }
        for (const DecoderStage& st : dec_) {
            if (st.use_pvf) {
                conv(st.name + ".pvf.bottleneck", st.pvf.bottleneck);
                conv(st.name + ".pvf.group", st.pvf.group);
                conv(st.name + ".pvf.fuse", st.pvf.fuse);
            }
            if (st.use_ppm) {
                conv(st.name + ".ppm.bottleneck", st.ppm.bottleneck);
                conv(st.name + ".ppm.group", st.ppm.group);
                conv(st.name + ".ppm.fuse", st.ppm.fuse);
            }
            if (cfg_.upsample_mode != UpsampleMode::kBilinear) conv(st.name + ".up", st.up);
            if (st.use_dpr) {
                conv(st.name + ".dpr.static", st.dpr.stat);
                deform(st.name + ".dpr.d" + std::to_string(st.dpr.d3.dilation), st.dpr.d3);
                deform(st.name + ".dpr.d" + std::to_string(st.dpr.d6.dilation), st.dpr.d6);
                conv(st.name + ".dpr.fuse0", st.dpr.fuse0);
                norm(st.name + ".dpr.bn0", st.dpr.n0);
                conv(st.name + ".dpr.fuse1", st.dpr.fuse1);
                norm(st.name + ".dpr.bn1", st.dpr.n1);
            }
            if (st.use_aspp) {
                conv(st.name + ".aspp.static", st.aspp.stat);
                conv(st.name + ".aspp.d" + std::to_string(st.aspp.dil3), st.aspp.d3);
                conv(st.name + ".aspp.d" + std::to_string(st.aspp.dil6), st.aspp.d6);
                conv(st.name + ".aspp.fuse", st.aspp.fuse);
                norm(st.name + ".aspp.bn", st.aspp.n);
            }
            if (!st.use_dpr && !st.use_aspp) {
                conv(st.name + ".blk.conv0", st.plain.c0);
                norm(st.name + ".blk.bn0", st.plain.n0);
                conv(st.name + ".blk.conv1", st.plain.c1);
                norm(st.name + ".blk.bn1", st.plain.n1);
            }
        }
        if (cfg_.enable_pl) {
            conv("pl2", pl_[0]);
            conv("pl4", pl_[1]);
            conv("pl8", pl_[2]);
        }
        conv("head", head_);
    }

    ModelConfig cfg_;
    std::vector<EncoderStage> enc_;
    std::vector<DecoderStage> dec_;
    std::array<ConvLayer<T>, 3> pl_;
    ConvLayer<T> head_;
};

// Builds the network for the given configuration and returns its trainable
// parameter count.
inline int64_t count_parameters(const ModelConfig& cfg) {
    DeepPyram<float> model(cfg);
    return model.parameter_count();
}

} // namespace deeppyram
