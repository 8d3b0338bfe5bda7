// deeppyram command-line workbench: dataset synthesis, training, evaluation,
// ablation, gradient checking, and plot rendering. Exit codes: 0 success,
// 1 usage/config error, 2 data error, 3 numerical failure.
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "deeppyram/checkpoint.hpp"
#include "deeppyram/config.hpp"
#include "deeppyram/data.hpp"
#include "deeppyram/gradcheck_suite.hpp"
#include "deeppyram/metrics.hpp"
#include "deeppyram/model.hpp"
#include "deeppyram/plot.hpp"
#include "deeppyram/png_io.hpp"
#include "deeppyram/trainer.hpp"

namespace fs = std::filesystem;
using namespace deeppyram;

namespace {

class Stopwatch {
public:
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_)
            .count();
    }

private:
    std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

void write_text_file(const fs::path& path, const std::string& content) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path.string());
    out << content;
}

// One manifest per invocation, written alongside the command's outputs.
void write_manifest(const fs::path& dir, const std::string& command,
                    const std::string& config_path, const std::string& data_path,
                    const std::string& out_path, const std::string& seed,
                    double wall_seconds) {
    std::ostringstream os;
    os << "# deeppyram run manifest\n";
    os << "command = " << command << "\n";
    os << "version = " << kVersion << "\n";
    os << "config = " << config_path << "\n";
    os << "data = " << data_path << "\n";
    os << "out = " << out_path << "\n";
    os << "seed = " << seed << "\n";
    os << "wall_seconds = " << detail::fmt_double(wall_seconds) << "\n";
    fs::create_directories(dir);
    write_text_file(dir / "manifest.txt", os.str());
}

// Datasets written by `synth` live under <root>/train and <root>/test.
std::pair<std::vector<SegSample>, std::vector<SegSample>> load_split(
    const std::string& data_dir) {
    const fs::path root(data_dir);
    if (!fs::is_directory(root / "train") || !fs::is_directory(root / "test"))
        throw DataError("expected " + data_dir +
                        " to contain train/ and test/ dataset directories (as written "
                        "by the synth command)");
    return {load_dataset((root / "train").string()),
            load_dataset((root / "test").string())};
}

// Accepts either a dataset directory (images/ + masks/) or a synth root, in
// which case the test split is evaluated.
std::vector<SegSample> load_eval_set(const std::string& data_dir) {
    const fs::path root(data_dir);
    if (fs::is_directory(root / "images")) return load_dataset(data_dir);
    if (fs::is_directory(root / "test" / "images"))
        return load_dataset((root / "test").string());
    throw DataError("no dataset found at " + data_dir +
                    " (need images/ + masks/, or a synth root with test/)");
}

Color class_color(int32_t cls) {
    if (cls == 0) return {40, 40, 40};
    return kPalette[static_cast<size_t>(cls - 1) % kPalette.size()];
}

ImageU8 sample_to_rgb(const SegSample& s) {
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
    return img;
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

int cmd_synth(const std::string& out_dir, int64_t count, int64_t test_count,
              std::vector<int64_t> size, uint64_t seed) {
    Stopwatch watch;
    SynthSpec spec;
    spec.count = count;
    spec.height = size[0];
    spec.width = size[1];
    if (test_count < 0) test_count = std::max<int64_t>(1, count / 4);

    const auto train_samples = synth_generate(spec, seed);
    save_dataset(train_samples, (fs::path(out_dir) / "train").string());
    spec.count = test_count;
    const auto test_samples = synth_generate(spec, mix_seed(seed, 0x7e57));
    save_dataset(test_samples, (fs::path(out_dir) / "test").string());

    write_manifest(out_dir, "synth", "-", "-", out_dir, std::to_string(seed),
                   watch.seconds());
    std::cout << "wrote " << train_samples.size() << " train / " << test_samples.size()
              << " test samples (" << spec.height << "x" << spec.width << ") to "
              << out_dir << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

int cmd_train(const std::string& config_path, const std::string& data_dir,
              const std::string& out_dir) {
    Stopwatch watch;
    const TrainConfig cfg = load_config_file(config_path);
    const auto [train_set, val_set] = load_split(data_dir);

    const TrainResult result = train(cfg, train_set, val_set, [](const EpochRecord& e) {
        std::printf("epoch %3lld  lr %.6f  loss %.4f  val_iou %.4f  val_dice %.4f\n",
                    static_cast<long long>(e.epoch), e.lr, e.train_loss, e.val_iou,
                    e.val_dice);
        std::fflush(stdout);
    });

    fs::create_directories(out_dir);
    const fs::path out(out_dir);
    save_checkpoint((out / "best.ckpt").string(), result.best);
    save_checkpoint((out / "last.ckpt").string(), result.last);
    write_text_file(out / "train_steps.csv", result.log.steps_csv());
    write_text_file(out / "train_epochs.csv", result.log.epochs_csv());
    write_manifest(out, "train", config_path, data_dir, out_dir,
                   std::to_string(cfg.seed), watch.seconds());

    std::cout << "trained " << result.log.epochs.size() << " epochs, best val iou "
              << result.log.best_val_iou << " (epoch " << result.log.best_epoch
              << "), wall " << static_cast<int>(result.log.wall_seconds) << " s\n"
              << "checkpoints and logs in " << out_dir << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

int cmd_eval(const std::string& ckpt_path, const std::string& data_dir,
             const std::string& report_path, const std::string& dump_dir) {
    Stopwatch watch;
    const Checkpoint ckpt = load_checkpoint(ckpt_path);
    const std::vector<SegSample> data = load_eval_set(data_dir);
    const TrainConfig cfg = parse_config(ckpt.config_text);
    DeepPyram<float> model(cfg.model);
    restore_model(model, ckpt);

    const MetricReport report = evaluate(model, data);
    write_text_file(report_path, report_to_text(report));
    write_text_file(report_path + ".csv", report_to_csv(report));

    if (!dump_dir.empty()) {
        fs::create_directories(dump_dir);
        for (size_t i = 0; i < data.size(); ++i) {
            const SegSample& s = data[i];
            const ModelOutput<float> out = model.forward(s.image, false);
            const Mask pred = argmax_channels(out.master());
            const int64_t H = s.height(), W = s.width();

            ImageU8 pred_png;  // class ids, reloadable for offline checking
            pred_png.width = static_cast<int>(W);
            pred_png.height = static_cast<int>(H);
            pred_png.channels = 1;
            pred_png.pixels.resize(static_cast<size_t>(H * W));
            for (int64_t at = 0; at < H * W; ++at)
                pred_png.pixels[static_cast<size_t>(at)] =
                    static_cast<uint8_t>(pred.data()[at]);
            write_png((fs::path(dump_dir) / (s.id + "_pred.png")).string(), pred_png);

            // side-by-side panel: input | ground truth | prediction
            const int gap = 4, strip = 14;
            Canvas cv(static_cast<int>(3 * W + 2 * gap),
                      static_cast<int>(H) + strip, {255, 255, 255});
            const ImageU8 rgb = sample_to_rgb(s);
            for (int64_t y = 0; y < H; ++y)
                for (int64_t x = 0; x < W; ++x) {
                    const size_t at = static_cast<size_t>(3 * (y * W + x));
                    cv.set(static_cast<int>(x), static_cast<int>(y) + strip,
                           {rgb.pixels[at], rgb.pixels[at + 1], rgb.pixels[at + 2]});
                    cv.set(static_cast<int>(W + gap + x), static_cast<int>(y) + strip,
                           class_color(s.mask[static_cast<size_t>(y * W + x)]));
                    cv.set(static_cast<int>(2 * (W + gap) + x),
                           static_cast<int>(y) + strip,
                           class_color(pred.data()[y * W + x]));
                }
            char caption[64];
            std::snprintf(caption, sizeof(caption), "%s  DICE %.1f%%", s.id.c_str(),
                          100.0 * report.per_image_dice[i]);
            cv.text(2, 3, caption, {0, 0, 0});
            cv.save((fs::path(dump_dir) / (s.id + "_overlay.png")).string());
        }
    }

    write_manifest(fs::path(report_path).has_parent_path()
                       ? fs::path(report_path).parent_path()
                       : fs::path("."),
                   "eval", "-", data_dir, report_path, std::to_string(cfg.seed),
                   watch.seconds());
    std::cout << report_to_text(report);
    return 0;
}

// ---------------------------------------------------------------------------
// ablate
// ---------------------------------------------------------------------------

int cmd_ablate(const std::string& config_path, const std::string& data_dir,
               const std::string& out_dir, int64_t n_seeds) {
    Stopwatch watch;
    if (n_seeds < 1) throw ConfigError("--seeds must be >= 1");
    const TrainConfig cfg = load_config_file(config_path);
    const auto [train_set, val_set] = load_split(data_dir);

    std::vector<uint64_t> seeds;
    for (int64_t i = 0; i < n_seeds; ++i) seeds.push_back(cfg.seed + static_cast<uint64_t>(i));
    const auto rows = ablate(cfg, train_set, val_set, seeds);

    fs::create_directories(out_dir);
    write_text_file(fs::path(out_dir) / "ablation.csv", ablation_to_csv(rows));
    write_text_file(fs::path(out_dir) / "ablation.txt", ablation_to_text(rows));
    write_manifest(out_dir, "ablate", config_path, data_dir, out_dir,
                   std::to_string(cfg.seed) + "+" + std::to_string(n_seeds),
                   watch.seconds());
    std::cout << ablation_to_text(rows);
    return 0;
}

// ---------------------------------------------------------------------------
// gradcheck
// ---------------------------------------------------------------------------

int cmd_gradcheck(const std::string& group, uint64_t seed) {
    const auto cases = run_gradcheck_suite(group, seed);
    if (cases.empty()) throw ConfigError("gradcheck: no cases for group '" + group + "'");
    bool all_pass = true;
    for (const auto& c : cases) {
        const bool ok = c.pass();
        all_pass = all_pass && ok;
        std::printf("%-6s %-28s max_rel_err %.3e  skipped %4.1f%%  %s\n",
                    c.group.c_str(), c.name.c_str(), c.report.max_rel_err,
                    100.0 * c.report.skipped_fraction(), ok ? "PASS" : "FAIL");
        if (!ok && !c.report.worst_site.empty())
            std::printf("       worst: %s\n", c.report.worst_site.c_str());
    }
    std::printf("%zu case(s), %s\n", cases.size(), all_pass ? "all passed" : "FAILURES");
    return all_pass ? 0 : 3;
}

// ---------------------------------------------------------------------------
// plot
// ---------------------------------------------------------------------------

struct CsvTable {
    std::vector<std::string> columns;
    std::vector<std::vector<std::string>> rows;

    size_t col(const std::string& name) const {
        for (size_t i = 0; i < columns.size(); ++i)
            if (columns[i] == name) return i;
        throw DataError("csv: missing column '" + name + "'");
    }

    std::vector<double> numbers(const std::string& name) const {
        const size_t c = col(name);
        std::vector<double> out;
        out.reserve(rows.size());
        for (const auto& r : rows) out.push_back(std::stod(r[c]));
        return out;
    }
};

CsvTable read_csv(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path.string());
    CsvTable t;
    std::string line;
    bool header = true;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::vector<std::string> fields;
        std::stringstream ss(line);
        std::string item;
        while (std::getline(ss, item, ',')) fields.push_back(item);
        if (header) {
            t.columns = fields;
            header = false;
        } else {
            if (fields.size() != t.columns.size())
                throw DataError("csv: ragged row in " + path.string());
            t.rows.push_back(fields);
        }
    }
    if (t.columns.empty()) throw DataError("csv: empty file " + path.string());
    return t;
}

int cmd_plot(const std::string& log_path, const std::string& out_dir,
             const std::string& ablation_path) {
    Stopwatch watch;
    fs::path log_dir(log_path);
    if (!fs::is_directory(log_dir)) log_dir = log_dir.parent_path();
    const fs::path steps_path = log_dir / "train_steps.csv";
    const fs::path epochs_path = log_dir / "train_epochs.csv";
    if (!fs::exists(steps_path) || !fs::exists(epochs_path))
        throw DataError("expected train_steps.csv and train_epochs.csv under " +
                        log_dir.string());
    fs::create_directories(out_dir);
    const fs::path out(out_dir);

    const CsvTable steps = read_csv(steps_path);
    plot_lines((out / "loss_vs_step.png").string(), "training loss", "step", "loss",
               {{"loss", steps.numbers("step"), steps.numbers("loss")}});

    const CsvTable epochs = read_csv(epochs_path);
    plot_lines((out / "iou_vs_epoch.png").string(), "validation metrics", "epoch",
               "score",
               {{"iou", epochs.numbers("epoch"), epochs.numbers("val_iou")},
                {"dice", epochs.numbers("epoch"), epochs.numbers("val_dice")}});
    plot_lines((out / "lr_schedule.png").string(), "learning rate", "epoch", "lr",
               {{"lr", epochs.numbers("epoch"), epochs.numbers("lr")}});

    if (!ablation_path.empty()) {
        const CsvTable ab = read_csv(fs::path(ablation_path));
        std::vector<std::string> names;
        std::vector<std::vector<double>> values;
        const size_t name_col = ab.col("name");
        const auto ious = ab.numbers("mean_iou");
        const auto dices = ab.numbers("mean_dice");
        for (size_t i = 0; i < ab.rows.size(); ++i) {
            names.push_back(ab.rows[i][name_col]);
            values.push_back({100.0 * ious[i], 100.0 * dices[i]});
        }
        plot_bars((out / "ablation_bars.png").string(), "ablation results", names,
                  {"iou%", "dice%"}, values);
    }
    write_manifest(out, "plot", "-", log_dir.string(), out_dir, "-", watch.seconds());
    std::cout << "plots written to " << out_dir << "\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"deeppyram: pyramid segmentation workbench"};
    app.require_subcommand(1);

    // synth
    auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
    std::string synth_out;
    int64_t synth_count = 16, synth_test_count = -1;
    std::vector<int64_t> synth_size = {64, 64};
    uint64_t synth_seed = 1;
    synth->add_option("--out", synth_out, "output directory")->required();
    synth->add_option("--count", synth_count, "training samples");
    synth->add_option("--test-count", synth_test_count, "test samples (default count/4)");
    synth->add_option("--size", synth_size, "height width")->expected(2);
    synth->add_option("--seed", synth_seed, "generator seed");

    // train
    auto* tr = app.add_subcommand("train", "train a model");
    std::string train_config, train_data, train_out;
    tr->add_option("--config", train_config, "config file")->required();
    tr->add_option("--data", train_data, "dataset root (train/ + test/)")->required();
    tr->add_option("--out", train_out, "run output directory")->required();

    // eval
    auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
    std::string eval_ckpt, eval_data, eval_report, eval_dump;
    ev->add_option("--checkpoint", eval_ckpt, "checkpoint file")->required();
    ev->add_option("--data", eval_data, "dataset directory")->required();
    ev->add_option("--report", eval_report, "report file (text; .csv added)")->required();
    ev->add_option("--dump-masks", eval_dump, "directory for predicted masks/overlays");

    // ablate
    auto* ab = app.add_subcommand("ablate", "run the ablation table");
    std::string ablate_config, ablate_data, ablate_out;
    int64_t ablate_seeds = 3;
    ab->add_option("--config", ablate_config, "config file")->required();
    ab->add_option("--data", ablate_data, "dataset root (train/ + test/)")->required();
    ab->add_option("--out", ablate_out, "output directory")->required();
    ab->add_option("--seeds", ablate_seeds, "number of seeds");

    // gradcheck
    auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient checks");
    std::string gc_ops = "all";
    uint64_t gc_seed = 1;
    gc->add_option("--ops", gc_ops, "all|conv|deform|pvf|dpr|loss")
        ->check(CLI::IsMember({"all", "conv", "deform", "pvf", "dpr", "loss"}));
    gc->add_option("--seed", gc_seed, "suite seed");

    // plot
    auto* pl = app.add_subcommand("plot", "render PNG charts from logs");
    std::string plot_log, plot_out, plot_ablation;
    pl->add_option("--log", plot_log, "run directory or a log csv inside it")->required();
    pl->add_option("--out", plot_out, "output directory")->required();
    pl->add_option("--ablation", plot_ablation, "ablation.csv for the bar chart");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);  // --help is a successful run
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    try {
        if (synth->parsed())
            return cmd_synth(synth_out, synth_count, synth_test_count, synth_size,
                             synth_seed);
        if (tr->parsed()) return cmd_train(train_config, train_data, train_out);
        if (ev->parsed()) return cmd_eval(eval_ckpt, eval_data, eval_report, eval_dump);
        if (ab->parsed()) return cmd_ablate(ablate_config, ablate_data, ablate_out,
                                            ablate_seeds);
        if (gc->parsed()) return cmd_gradcheck(gc_ops, gc_seed);
        if (pl->parsed()) return cmd_plot(plot_log, plot_out, plot_ablation);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 1;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 2;
    } catch (const DimensionError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 2;
    } catch (const NumericError& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return 3;
    }
    return 1;
}
