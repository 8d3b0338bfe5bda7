#pragma once

#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "deeppyram/common.hpp"
#include "deeppyram/data.hpp"
#include "deeppyram/losses.hpp"
#include "deeppyram/model.hpp"

namespace deeppyram {

enum class ClipMode { kElement, kNorm };

inline std::string to_string(ClipMode m) {
    return m == ClipMode::kElement ? "element" : "norm";
}

inline ClipMode clip_mode_from_string(const std::string& s) {
    if (s == "element") return ClipMode::kElement;
    if (s == "norm") return ClipMode::kNorm;
    throw ConfigError("unknown clip_mode '" + s + "' (element|norm)");
}

// Everything a training run needs, including the sub-configs.  The learning
// rates used in practice come from the grid {0.0005, 0.0002, 0.001}; only
// positivity is enforced so the grid stays a recommendation.
struct TrainConfig {
    ModelConfig model;
    LossConfig loss;
    AugmentConfig augment;

    double initial_lr = 0.001;
    int64_t epochs = 20;
    double lr_decay = 0.8;
    int64_t lr_decay_every = 2;
    double grad_clip = 0.1;
    ClipMode clip_mode = ClipMode::kElement;
    double momentum = 0.9;
    int64_t batch_size = 4;
    uint64_t seed = 1;
    double target_iou = 0.0;  // early stop once validation IoU reaches this (0 = off)

    void validate() const {
        if (!(initial_lr > 0.0)) throw ConfigError("TrainConfig: initial_lr must be > 0");
        if (epochs < 1) throw ConfigError("TrainConfig: epochs must be >= 1");
        if (!(lr_decay > 0.0) || lr_decay > 1.0)
            throw ConfigError("TrainConfig: lr_decay must be in (0,1]");
        if (lr_decay_every < 1) throw ConfigError("TrainConfig: lr_decay_every must be >= 1");
        if (!(grad_clip > 0.0)) throw ConfigError("TrainConfig: grad_clip must be > 0");
        if (momentum < 0.0 || momentum >= 1.0)
            throw ConfigError("TrainConfig: momentum must be in [0,1)");
        if (batch_size < 1) throw ConfigError("TrainConfig: batch_size must be >= 1");
        if (target_iou < 0.0 || target_iou > 1.0)
            throw ConfigError("TrainConfig: target_iou must be in [0,1]");
        model.validate();
        loss.validate();
        augment.validate();
    }
};

namespace detail {

// Shortest decimal form that parses back to exactly the same double.
inline std::string fmt_double(double v) {
    char buf[64];
    for (int prec = 1; prec <= 17; ++prec) {
        std::snprintf(buf, sizeof(buf), "%.*g", prec, v);
        if (std::stod(buf) == v) return buf;
    }
    return buf;
}

template <typename Int>
std::string fmt_list(const std::vector<Int>& xs) {
    std::string out;
    for (size_t i = 0; i < xs.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(xs[i]);
    }
    return out;
}

inline std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

inline double parse_double(const std::string& key, const std::string& v) {
    size_t used = 0;
    double out;
    try {
        out = std::stod(v, &used);
    } catch (const std::exception&) {
        throw ConfigError("config: bad number for " + key + ": '" + v + "'");
    }
    if (used != v.size()) throw ConfigError("config: bad number for " + key + ": '" + v + "'");
    return out;
}

inline int64_t parse_int(const std::string& key, const std::string& v) {
    size_t used = 0;
    long long out;
    try {
        out = std::stoll(v, &used);
    } catch (const std::exception&) {
        throw ConfigError("config: bad integer for " + key + ": '" + v + "'");
    }
    if (used != v.size())
        throw ConfigError("config: bad integer for " + key + ": '" + v + "'");
    return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError("config: bad boolean for " + key + ": '" + v + "'");
}

inline std::vector<int> parse_list(const std::string& key, const std::string& v) {
    std::vector<int> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ','))
        out.push_back(static_cast<int>(parse_int(key, trim(item))));
    return out;
}

} // namespace detail

// Canonical INI-style text: [section] headers, key = value lines, # comments.
inline std::string serialize_config(const TrainConfig& cfg) {
    using detail::fmt_double;
    using detail::fmt_list;
    std::ostringstream os;
    os << "# deeppyram run configuration\n";
    os << "\n[model]\n";
    os << "in_channels = " << cfg.model.in_channels << "\n";
    os << "num_classes = " << cfg.model.num_classes << "\n";
    os << "widths = " << fmt_list(cfg.model.widths) << "\n";
    os << "stage_convs = " << fmt_list(cfg.model.stage_convs) << "\n";
    os << "enable_pvf = " << (cfg.model.enable_pvf ? "true" : "false") << "\n";
    os << "enable_dpr = " << (cfg.model.enable_dpr ? "true" : "false") << "\n";
    os << "enable_pl = " << (cfg.model.enable_pl ? "true" : "false") << "\n";
    os << "decoder_alternative = " << to_string(cfg.model.decoder_alternative) << "\n";
    os << "upsample_mode = " << to_string(cfg.model.upsample_mode) << "\n";
    os << "pvf_pool_sizes = " << fmt_list(cfg.model.pvf_pool_sizes) << "\n";
    os << "dpr_dilations = " << fmt_list(cfg.model.dpr_dilations) << "\n";
    os << "\n[loss]\n";
    os << "lambda = " << fmt_double(cfg.loss.lambda) << "\n";
    os << "sigma = " << fmt_double(cfg.loss.sigma) << "\n";
    os << "alpha = " << fmt_double(cfg.loss.alpha) << "\n";
    os << "beta = " << fmt_double(cfg.loss.beta) << "\n";
    os << "gamma = " << fmt_double(cfg.loss.gamma) << "\n";
    os << "binary_mode = " << (cfg.loss.binary_mode ? "true" : "false") << "\n";
    os << "\n[augment]\n";
    os << "probability = " << fmt_double(cfg.augment.probability) << "\n";
    os << "bc_lo = " << fmt_double(cfg.augment.bc_lo) << "\n";
    os << "bc_hi = " << fmt_double(cfg.augment.bc_hi) << "\n";
    os << "shift_scale_pct = " << fmt_double(cfg.augment.shift_scale_pct) << "\n";
    os << "rot_deg = " << fmt_double(cfg.augment.rot_deg) << "\n";
    os << "blur_k_lo = " << cfg.augment.blur_k_lo << "\n";
    os << "blur_k_hi = " << cfg.augment.blur_k_hi << "\n";
    os << "\n[train]\n";
    os << "initial_lr = " << fmt_double(cfg.initial_lr) << "\n";
    os << "epochs = " << cfg.epochs << "\n";
    os << "lr_decay = " << fmt_double(cfg.lr_decay) << "\n";
    os << "lr_decay_every = " << cfg.lr_decay_every << "\n";
    os << "grad_clip = " << fmt_double(cfg.grad_clip) << "\n";
    os << "clip_mode = " << to_string(cfg.clip_mode) << "\n";
    os << "momentum = " << fmt_double(cfg.momentum) << "\n";
    os << "batch_size = " << cfg.batch_size << "\n";
    os << "seed = " << cfg.seed << "\n";
    os << "target_iou = " << fmt_double(cfg.target_iou) << "\n";
    return os.str();
}

// Parses the INI text over a default-constructed config; unknown sections or
// keys are errors so typos cannot silently fall back to defaults.
inline TrainConfig parse_config(const std::string& text) {
    using namespace detail;
    TrainConfig cfg;
    std::istringstream is(text);
    std::string line, section;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']')
                throw ConfigError("config line " + std::to_string(lineno) +
                                  ": malformed section header");
            section = line.substr(1, line.size() - 2);
            if (section != "model" && section != "loss" && section != "augment" &&
                section != "train")
                throw ConfigError("config: unknown section [" + section + "]");
            continue;
        }
        const size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(lineno) +
                              ": expected key = value");
        const std::string key = trim(line.substr(0, eq));
        const std::string val = trim(line.substr(eq + 1));
        const std::string qual = section + "." + key;

        if (section == "model") {
            if (key == "in_channels") cfg.model.in_channels = parse_int(qual, val);
            else if (key == "num_classes") cfg.model.num_classes = parse_int(qual, val);
            else if (key == "widths") cfg.model.widths = parse_list(qual, val);
            else if (key == "stage_convs") cfg.model.stage_convs = parse_list(qual, val);
            else if (key == "enable_pvf") cfg.model.enable_pvf = parse_bool(qual, val);
            else if (key == "enable_dpr") cfg.model.enable_dpr = parse_bool(qual, val);
            else if (key == "enable_pl") cfg.model.enable_pl = parse_bool(qual, val);
            else if (key == "decoder_alternative")
                cfg.model.decoder_alternative = alternative_from_string(val);
            else if (key == "upsample_mode")
                cfg.model.upsample_mode = upsample_from_string(val);
            else if (key == "pvf_pool_sizes") cfg.model.pvf_pool_sizes = parse_list(qual, val);
            else if (key == "dpr_dilations") cfg.model.dpr_dilations = parse_list(qual, val);
            else throw ConfigError("config: unknown key " + qual);
        } else if (section == "loss") {
            if (key == "lambda") cfg.loss.lambda = parse_double(qual, val);
            else if (key == "sigma") cfg.loss.sigma = parse_double(qual, val);
            else if (key == "alpha") cfg.loss.alpha = parse_double(qual, val);
            else if (key == "beta") cfg.loss.beta = parse_double(qual, val);
            else if (key == "gamma") cfg.loss.gamma = parse_double(qual, val);
            else if (key == "binary_mode") cfg.loss.binary_mode = parse_bool(qual, val);
            else throw ConfigError("config: unknown key " + qual);
        } else if (section == "augment") {
            if (key == "probability") cfg.augment.probability = parse_double(qual, val);
            else if (key == "bc_lo") cfg.augment.bc_lo = parse_double(qual, val);
            else if (key == "bc_hi") cfg.augment.bc_hi = parse_double(qual, val);
            else if (key == "shift_scale_pct")
                cfg.augment.shift_scale_pct = parse_double(qual, val);
            else if (key == "rot_deg") cfg.augment.rot_deg = parse_double(qual, val);
            else if (key == "blur_k_lo") cfg.augment.blur_k_lo = parse_int(qual, val);
            else if (key == "blur_k_hi") cfg.augment.blur_k_hi = parse_int(qual, val);
            else throw ConfigError("config: unknown key " + qual);
        } else if (section == "train") {
            if (key == "initial_lr") cfg.initial_lr = parse_double(qual, val);
            else if (key == "epochs") cfg.epochs = parse_int(qual, val);
            else if (key == "lr_decay") cfg.lr_decay = parse_double(qual, val);
            else if (key == "lr_decay_every") cfg.lr_decay_every = parse_int(qual, val);
            else if (key == "grad_clip") cfg.grad_clip = parse_double(qual, val);
            else if (key == "clip_mode") cfg.clip_mode = clip_mode_from_string(val);
            else if (key == "momentum") cfg.momentum = parse_double(qual, val);
            else if (key == "batch_size") cfg.batch_size = parse_int(qual, val);
            else if (key == "seed")
                cfg.seed = static_cast<uint64_t>(parse_int(qual, val));
            else if (key == "target_iou") cfg.target_iou = parse_double(qual, val);
            else throw ConfigError("config: unknown key " + qual);
        } else {
            throw ConfigError("config line " + std::to_string(lineno) +
                              ": key outside any section");
        }
    }
    return cfg;
}

inline TrainConfig load_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open config file " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

} // namespace deeppyram
