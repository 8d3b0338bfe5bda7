#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "deeppyram/checkpoint.hpp"
#include "deeppyram/config.hpp"
#include "deeppyram/data.hpp"
#include "deeppyram/losses.hpp"
#include "deeppyram/metrics.hpp"
#include "deeppyram/model.hpp"

namespace deeppyram {

// lr(epoch) = initial_lr * decay^floor(epoch / every)
inline double lr_for_epoch(const TrainConfig& cfg, int64_t epoch) {
    return cfg.initial_lr *
           std::pow(cfg.lr_decay, static_cast<double>(epoch / cfg.lr_decay_every));
}

// Element mode clamps every gradient value to [-threshold, threshold];
// norm mode rescales all gradients together onto the threshold sphere.
template <typename T>
void clip_gradients(std::vector<Tensor<T>>& params, double threshold,
                    ClipMode mode = ClipMode::kElement) {
    if (!(threshold > 0.0)) throw ConfigError("clip_gradients: threshold must be > 0");
    if (mode == ClipMode::kElement) {
        const T hi = static_cast<T>(threshold);
        for (auto& p : params)
            for (T& g : p.grad()) g = std::clamp(g, -hi, hi);
        return;
    }
    double sq = 0.0;
    for (auto& p : params)
        for (T g : p.grad()) sq += static_cast<double>(g) * static_cast<double>(g);
    const double norm = std::sqrt(sq);
    if (norm <= threshold) return;
    const T scale = static_cast<T>(threshold / norm);
    for (auto& p : params)
        for (T& g : p.grad()) g *= scale;
}

struct StepRecord {
    int64_t step = 0;
    double loss = 0.0;
    bool operator==(const StepRecord&) const = default;
};

struct EpochRecord {
    int64_t epoch = 0;
    double lr = 0.0;
    double train_loss = 0.0;
    double val_iou = 0.0;
    double val_dice = 0.0;
    bool operator==(const EpochRecord&) const = default;
};

// Wall time is reported separately (run manifest) so the serialized logs stay
// byte-identical across repeated runs of the same seed.
struct TrainLog {
    std::vector<StepRecord> steps;
    std::vector<EpochRecord> epochs;
    int64_t best_epoch = -1;
    double best_val_iou = 0.0;
    double best_val_dice = 0.0;
    double wall_seconds = 0.0;

    std::string steps_csv() const {
        std::ostringstream os;
        os << "step,loss\n";
        for (const auto& s : steps)
            os << s.step << "," << detail::fmt_double(s.loss) << "\n";
        return os.str();
    }

    std::string epochs_csv() const {
        std::ostringstream os;
        os << "epoch,lr,train_loss,val_iou,val_dice\n";
        for (const auto& e : epochs)
            os << e.epoch << "," << detail::fmt_double(e.lr) << ","
               << detail::fmt_double(e.train_loss) << "," << detail::fmt_double(e.val_iou)
               << "," << detail::fmt_double(e.val_dice) << "\n";
        return os.str();
    }

    bool same_trajectory(const TrainLog& other) const {
        return steps == other.steps && epochs == other.epochs &&
               best_epoch == other.best_epoch && best_val_iou == other.best_val_iou &&
               best_val_dice == other.best_val_dice;
    }
};

struct TrainResult {
    TrainLog log;
    Checkpoint best;  // highest validation IoU
    Checkpoint last;  // state after the final epoch
};

namespace detail {

inline Mask sample_mask_tensor(const SegSample& s) {
    Mask m = Mask::zeros({1, 1, s.height(), s.width()});
    for (size_t i = 0; i < s.mask.size(); ++i) m.data()[i] = s.mask[i];
    return m;
}

inline Tensor<float> stack_images(const std::vector<SegSample>& batch) {
    const Shape4 s0 = batch.front().image.shape();
    Tensor<float> out =
        Tensor<float>::zeros({static_cast<int64_t>(batch.size()), s0.c, s0.h, s0.w});
    const int64_t per = s0.c * s0.h * s0.w;
    for (size_t b = 0; b < batch.size(); ++b) {
        if (!(batch[b].image.shape() == s0))
            throw DimensionError("stack_images: mixed sample shapes in one batch");
        std::copy(batch[b].image.vec().begin(), batch[b].image.vec().end(),
                  out.data() + static_cast<int64_t>(b) * per);
    }
    return out;
}

inline Mask stack_masks(const std::vector<SegSample>& batch) {
    const int64_t H = batch.front().height(), W = batch.front().width();
    Mask out = Mask::zeros({static_cast<int64_t>(batch.size()), 1, H, W});
    for (size_t b = 0; b < batch.size(); ++b)
        std::copy(batch[b].mask.begin(), batch[b].mask.end(),
                  out.data() + static_cast<int64_t>(b) * H * W);
    return out;
}

inline void fisher_yates(std::vector<size_t>& order, Rng& rng) {
    for (size_t i = order.size(); i > 1; --i)
        std::swap(order[i - 1],
                  order[static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(i) - 1))]);
}

} // namespace detail

// Master-branch evaluation: argmax prediction per sample, per-image IoU/Dice
// averaged over foreground classes. Samples are processed one at a time, so
// the result cannot depend on any batch partitioning.
template <typename T>
MetricReport evaluate(DeepPyram<T>& model, const std::vector<SegSample>& data) {
    if (data.empty()) throw DataError("evaluate: empty dataset");
    std::vector<double> ious, dices;
    for (const auto& sample : data) {
        const ModelOutput<T> out = model.forward(sample.image, /*training=*/false);
        const Mask pred = argmax_channels(out.master());
        const Mask gt = detail::sample_mask_tensor(sample);
        const MetricReport r = evaluate_masks(pred, gt, model.config().num_classes);
        ious.push_back(r.per_image_iou[0]);
        dices.push_back(r.per_image_dice[0]);
    }
    return aggregate(std::move(ious), std::move(dices));
}

// Rebuilds the model recorded in the checkpoint and evaluates it.
inline MetricReport evaluate_checkpoint(const Checkpoint& ckpt,
                                        const std::vector<SegSample>& data) {
    const TrainConfig cfg = parse_config(ckpt.config_text);
    DeepPyram<float> model(cfg.model);
    restore_model(model, ckpt);
    return evaluate(model, data);
}

// SGD with momentum over shuffled mini-batches; per step: augment, forward,
// pyramid loss, backward, clip, update. Deterministic for a fixed seed.
// on_epoch, when set, observes each epoch record as it is produced.
inline TrainResult train(const TrainConfig& cfg, const std::vector<SegSample>& train_set,
                         const std::vector<SegSample>& val_set,
                         const std::function<void(const EpochRecord&)>& on_epoch = {}) {
    cfg.validate();
    if (train_set.empty()) throw DataError("train: empty training set");
    if (val_set.empty()) throw DataError("train: empty validation set");
    const auto t_start = std::chrono::steady_clock::now();

    DeepPyram<float> model(cfg.model);
    model.init_parameters(cfg.seed);
    const std::string cfg_text = serialize_config(cfg);

    std::vector<Tensor<float>> params;
    model.visit_parameters(
        [&](const std::string&, Tensor<float> t) { params.push_back(t); });
    std::vector<std::vector<float>> velocity(params.size());
    for (size_t i = 0; i < params.size(); ++i)
        velocity[i].assign(static_cast<size_t>(params[i].numel()), 0.0f);

    Rng shuffle_rng(mix_seed(cfg.seed, 0x53485546ULL));
    Rng aug_rng(mix_seed(cfg.seed, 0x41554746ULL));

    TrainResult res;
    int64_t gstep = 0;
    for (int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double lr = lr_for_epoch(cfg, epoch);
        std::vector<size_t> order(train_set.size());
        std::iota(order.begin(), order.end(), size_t{0});
        detail::fisher_yates(order, shuffle_rng);

        double epoch_loss = 0.0;
        int64_t n_batches = 0;
        for (size_t start = 0; start < order.size();
             start += static_cast<size_t>(cfg.batch_size)) {
            const size_t stop =
                std::min(order.size(), start + static_cast<size_t>(cfg.batch_size));
            std::vector<SegSample> batch;
            batch.reserve(stop - start);
            for (size_t i = start; i < stop; ++i)
                batch.push_back(augment(train_set[order[i]], cfg.augment, aug_rng));

            for (auto& p : params)
                std::fill(p.grad().begin(), p.grad().end(), 0.0f);

            const Tensor<float> images = detail::stack_images(batch);
            const Mask gt = detail::stack_masks(batch);
            ModelOutput<float> out = model.forward(images, /*training=*/true);
            const auto numeric_abort = [&](const char* what) {
                throw NumericError("training aborted: non-finite " + std::string(what) +
                                   " at step " + std::to_string(gstep) + " (epoch " +
                                   std::to_string(epoch) + ", lr " +
                                   detail::fmt_double(lr) + ")");
            };
            for (const Tensor<float>& o : out.outputs)
                for (float v : o.vec())
                    if (!std::isfinite(v)) numeric_abort("model output");
            Tensor<float> loss =
                pyramid_loss(out.outputs, gt, cfg.loss, cfg.model.num_classes);
            const double loss_value = static_cast<double>(loss.item());
            if (!std::isfinite(loss_value)) numeric_abort("loss");
            loss.backward();
            clip_gradients(params, cfg.grad_clip, cfg.clip_mode);
            const float mu = static_cast<float>(cfg.momentum);
            const float step_lr = static_cast<float>(lr);
            for (size_t i = 0; i < params.size(); ++i) {
                float* p = params[i].data();
                const std::vector<float>& g = params[i].grad();
                std::vector<float>& v = velocity[i];
                for (size_t j = 0; j < v.size(); ++j) {
                    v[j] = mu * v[j] + g[j];
                    p[j] -= step_lr * v[j];
                }
            }
            res.log.steps.push_back({gstep, loss_value});
            epoch_loss += loss_value;
            ++n_batches;
            ++gstep;
        }

        const MetricReport val = evaluate(model, val_set);
        res.log.epochs.push_back({epoch, lr, epoch_loss / static_cast<double>(n_batches),
                                  val.iou.mean, val.dice.mean});
        if (on_epoch) on_epoch(res.log.epochs.back());
        if (res.log.best_epoch < 0 || val.iou.mean > res.log.best_val_iou) {
            res.log.best_epoch = epoch;
            res.log.best_val_iou = val.iou.mean;
            res.log.best_val_dice = val.dice.mean;
            res.best = snapshot_model(model, cfg_text);
        }
        if (cfg.target_iou > 0.0 && val.iou.mean >= cfg.target_iou) break;
    }
    res.last = snapshot_model(model, cfg_text);
    res.log.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    return res;
}

// ---------------------------------------------------------------------------
// Ablation harness: module toggles, alternative modules, upsampling modes.
// ---------------------------------------------------------------------------

struct AblationRow {
    std::string name;
    bool pvf = false, dpr = false, pl = false;
    std::string alternative = "none";
    std::string upsample = "bilinear";
    int64_t params = 0;
    double mean_iou = 0.0;
    double mean_dice = 0.0;
};

// Trains every configuration on the shared seed set and reports mean metrics
// of each best-validation checkpoint, plus static parameter counts.
inline std::vector<AblationRow> ablate(const TrainConfig& base,
                                       const std::vector<SegSample>& train_set,
                                       const std::vector<SegSample>& val_set,
                                       const std::vector<uint64_t>& seeds) {
    if (seeds.empty()) throw ConfigError("ablate: need at least one seed");
    struct Variant {
        std::string name;
        bool pvf, dpr, pl;
        DecoderAlternative alt;
        UpsampleMode up;
    };
    const std::vector<Variant> variants = {
        // module toggles
        {"baseline", false, false, false, DecoderAlternative::kNone, UpsampleMode::kBilinear},
        {"+PVF", true, false, false, DecoderAlternative::kNone, UpsampleMode::kBilinear},
        {"+DPR", false, true, false, DecoderAlternative::kNone, UpsampleMode::kBilinear},
        {"+PVF+DPR", true, true, false, DecoderAlternative::kNone, UpsampleMode::kBilinear},
        {"+PVF+DPR+PL", true, true, true, DecoderAlternative::kNone, UpsampleMode::kBilinear},
        // alternative modules inside the full model
        {"aspp_plus for DPR", true, false, true, DecoderAlternative::kAsppPlus,
         UpsampleMode::kBilinear},
        {"ppm for PVF", false, true, true, DecoderAlternative::kPpm, UpsampleMode::kBilinear},
        // upsampling modes inside the full model
        {"up bilinear", true, true, true, DecoderAlternative::kNone, UpsampleMode::kBilinear},
        {"up transposed", true, true, true, DecoderAlternative::kNone,
         UpsampleMode::kTransposed},
        {"up pixel_shuffle", true, true, true, DecoderAlternative::kNone,
         UpsampleMode::kPixelShuffle},
    };

    std::vector<AblationRow> rows;
    for (const auto& v : variants) {
        TrainConfig cfg = base;
        cfg.model.enable_pvf = v.pvf;
        cfg.model.enable_dpr = v.dpr;
        cfg.model.enable_pl = v.pl;
        cfg.model.decoder_alternative = v.alt;
        cfg.model.upsample_mode = v.up;

        AblationRow row;
        row.name = v.name;
        row.pvf = v.pvf;
        row.dpr = v.dpr;
        row.pl = v.pl;
        row.alternative = to_string(v.alt);
        row.upsample = to_string(v.up);
        row.params = count_parameters(cfg.model);
        double iou_sum = 0.0, dice_sum = 0.0;
        for (uint64_t seed : seeds) {
            cfg.seed = seed;
            const TrainResult r = train(cfg, train_set, val_set);
            const MetricReport rep = evaluate_checkpoint(r.best, val_set);
            iou_sum += rep.iou.mean;
            dice_sum += rep.dice.mean;
        }
        row.mean_iou = iou_sum / static_cast<double>(seeds.size());
        row.mean_dice = dice_sum / static_cast<double>(seeds.size());
        rows.push_back(row);
    }
    return rows;
}

inline std::string ablation_to_csv(const std::vector<AblationRow>& rows) {
    std::ostringstream os;
    os << "name,pvf,dpr,pl,alternative,upsample,params,mean_iou,mean_dice\n";
    for (const auto& r : rows)
        os << r.name << "," << (r.pvf ? 1 : 0) << "," << (r.dpr ? 1 : 0) << ","
           << (r.pl ? 1 : 0) << "," << r.alternative << "," << r.upsample << ","
           << r.params << "," << detail::fmt_double(r.mean_iou) << ","
           << detail::fmt_double(r.mean_dice) << "\n";
    return os.str();
}

inline std::string ablation_to_text(const std::vector<AblationRow>& rows) {
    size_t name_w = 4;
    for (const auto& r : rows) name_w = std::max(name_w, r.name.size());
    std::ostringstream os;
    char line[160];
    std::snprintf(line, sizeof(line), "%-*s  %3s %3s %3s  %-10s %-13s %10s  %6s  %6s\n",
                  static_cast<int>(name_w), "name", "pvf", "dpr", "pl", "alt", "upsample",
                  "params", "iou%", "dice%");
    os << line;
    for (const auto& r : rows) {
        std::snprintf(line, sizeof(line),
                      "%-*s  %3s %3s %3s  %-10s %-13s %10lld  %6.2f  %6.2f\n",
                      static_cast<int>(name_w), r.name.c_str(), r.pvf ? "on" : "-",
                      r.dpr ? "on" : "-", r.pl ? "on" : "-", r.alternative.c_str(),
                      r.upsample.c_str(), static_cast<long long>(r.params),
                      100.0 * r.mean_iou, 100.0 * r.mean_dice);
        os << line;
    }
    return os.str();
}

} // namespace deeppyram
