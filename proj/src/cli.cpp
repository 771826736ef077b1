#include "msdn/cli.hpp"

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "msdn/checkpoint.hpp"
#include "msdn/gradsuite.hpp"
#include "msdn/manifest.hpp"
#include "msdn/metrics.hpp"
#include "msdn/pgm.hpp"
#include "msdn/trainer.hpp"

namespace msdn {

namespace {

namespace fs = std::filesystem;

enum class Precision { kF32, kF64 };

Precision resolve_precision() {
    const char* env = std::getenv("MSDN_PRECISION");
    if (!env || std::string(env).empty() || std::string(env) == "f32") return Precision::kF32;
    if (std::string(env) == "f64") return Precision::kF64;
    throw ConfigError("MSDN_PRECISION must be f32 or f64, got '" + std::string(env) + "'");
}

void print_resolved(const std::string& command, const nlohmann::json& cfg) {
    std::cout << "[" << command << "] resolved config: " << cfg.dump() << "\n";
}

// ---------------------------------------------------------------------------
// gen-data
// ---------------------------------------------------------------------------

struct GenArgs {
    std::string out;
    int n = 80;
    int n_val = 40;
    int n_test = 40;
    std::int64_t size = 64;
    std::uint64_t seed = 1;
    int classes = 1;
    double noise = 0.05;
};

int run_gen_data(const GenArgs& a) {
    print_resolved("gen-data", {{"out", a.out},
                                {"n", a.n},
                                {"n_val", a.n_val},
                                {"n_test", a.n_test},
                                {"size", a.size},
                                {"seed", a.seed},
                                {"classes", a.classes},
                                {"noise", a.noise}});
    SynthConfig cfg;
    cfg.size = a.size;
    cfg.classes = a.classes;
    cfg.noise_sigma = a.noise;

    Dataset ds;
    ds.classes = a.classes;
    ds.size = a.size;
    ds.train = synth_generate(a.seed, a.n, cfg, "train");
    if (a.n_val > 0) ds.val = synth_generate(a.seed, a.n_val, cfg, "val", 100000);
    if (a.n_test > 0) ds.test = synth_generate(a.seed, a.n_test, cfg, "test", 200000);
    ds.stats = compute_stats(ds.train);
    save_dataset(ds, a.out);
    std::cout << "wrote " << (a.n + a.n_val + a.n_test) << " samples to " << a.out << " (train pixel mean "
              << ds.stats.mean << ", std " << ds.stats.stddev << ")\n";
    return 0;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainArgs {
    std::string config_path;
    std::string data;
    std::string out = "runs/default";
    std::string resume;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> model;
    std::optional<int> n_strong;
    std::optional<std::int64_t> size;
};

template <class T>
int run_train_t(const TrainArgs& a) {
    TrainConfig cfg;
    if (!a.config_path.empty()) cfg = load_train_config(a.config_path);
    if (a.seed) cfg.seed = *a.seed;
    if (a.model) cfg.model = *a.model;
    if (a.n_strong) cfg.n_strong = *a.n_strong;
    if (a.size) cfg.image_size = *a.size;
    cfg.validate();
    print_resolved("train", train_config_to_json(cfg));

    if (a.data.empty()) throw ConfigError("train needs --data pointing at a generated dataset");
    Dataset ds = load_dataset(a.data);
    if (ds.size != cfg.image_size) {
        throw ConfigError("dataset size " + std::to_string(ds.size) + " does not match config image_size " +
                          std::to_string(cfg.image_size));
    }

    auto result = train_model<T>(cfg, ds, a.out, a.resume);
    std::cout << "trained " << result.log.rows.size() << " epochs; best val dice "
              << result.best_val * 100.0 << "%, best test dice " << result.best_test * 100.0 << "%\n";
    std::cout << "runlog: " << (fs::path(a.out) / "runlog.csv").string() << "\n";
    std::cout << "best checkpoint: " << result.best_checkpoint << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

template <class T>
ModelConfig model_config_from_meta(const CheckpointEntries<T>& entries) {
    ModelConfig mc;
    bool have_kind = false;
    for (const auto& [name, tensor] : entries) {
        if (name == "meta.kind") {
            mc.kind = static_cast<ModelKind>(static_cast<int>(tensor.item()));
            have_kind = true;
        } else if (name == "meta.classes") {
            mc.classes = static_cast<int>(tensor.item());
        } else if (name == "meta.base_channels") {
            mc.base_channels = static_cast<std::int64_t>(tensor.item());
        } else if (name == "meta.head_channels") {
            mc.head_channels = static_cast<std::int64_t>(tensor.item());
        }
    }
    if (!have_kind) throw SchemaError("checkpoint has no meta.kind entry; cannot infer the model");
    return mc;
}

struct EvalArgs {
    std::vector<std::string> checkpoints;
    std::string data;
    std::string split = "test";
    std::optional<std::string> model;
};

template <class T>
int run_eval_t(const EvalArgs& a) {
    print_resolved("eval", {{"checkpoints", a.checkpoints}, {"data", a.data}, {"split", a.split}});
    Dataset ds = load_dataset(a.data);
    const std::vector<Sample>* split = nullptr;
    if (a.split == "train") {
        split = &ds.train;
    } else if (a.split == "val") {
        split = &ds.val;
    } else if (a.split == "test") {
        split = &ds.test;
    } else {
        throw ConfigError("unknown split '" + a.split + "'");
    }
    if (split->empty()) throw DataError("split '" + a.split + "' is empty");

    std::vector<double> means;
    for (const auto& path : a.checkpoints) {
        auto entries = read_checkpoint<T>(path);
        ModelConfig mc = model_config_from_meta(entries);
        if (a.model && parse_model_kind(*a.model) != mc.kind) {
            throw ConfigError("checkpoint " + path + " holds a " + model_kind_name(mc.kind) +
                              " model, --model asked for " + *a.model);
        }
        MsdnModel<T> model(mc);
        try {
            load_model_state(model, entries);
        } catch (const SchemaError& e) {
            throw ConfigError(std::string("checkpoint does not fit the model: ") + e.what());
        }
        const double dice = evaluate_dice(model, *split, ds.stats, mc.classes);
        means.push_back(dice * 100.0);
        std::printf("%s: mean %s dice %.2f%%\n", path.c_str(), a.split.c_str(), dice * 100.0);
    }
    if (means.size() > 1) {
        const auto ci = t_interval_95(means);
        std::printf("%.2f ± %.2f\n", ci.mean, ci.half_width);
    }
    return 0;
}

// ---------------------------------------------------------------------------
// gradcheck
// ---------------------------------------------------------------------------

int run_gradcheck(int instances, double threshold) {
    print_resolved("gradcheck", {{"instances", instances}, {"threshold", threshold}, {"precision", "f64"}});
    const auto results = run_gradient_suite(instances);
    bool ok = true;
    for (const auto& r : results) {
        const bool pass = r.max_err <= threshold;
        ok = ok && pass;
        std::printf("%-22s max rel err %.3e  %s\n", r.op.c_str(), r.max_err, pass ? "ok" : "FAIL");
    }
    return ok ? 0 : 1;
}

// ---------------------------------------------------------------------------
// render
// ---------------------------------------------------------------------------

struct RenderArgs {
    std::string checkpoint;
    std::string data;
    std::string out;
    std::string split = "test";
    int n = 4;
    double score_threshold = 0.3;
};

template <class T>
std::vector<std::pair<Box, double>> decode_predictions(const std::array<DetStageOut<T>, 4>& stages,
                                                       std::int64_t image_size, int classes,
                                                       double threshold) {
    std::vector<Box> boxes;
    std::vector<double> scores;
    const auto pyramid = generate_pyramid_anchors(image_size);
    for (std::size_t s = 0; s < 4; ++s) {
        const auto& cls = stages[s].cls;
        const auto& box = stages[s].box;
        const std::int64_t h = cls.dim(2), w = cls.dim(3);
        for (std::int64_t y = 0; y < h; ++y) {
            for (std::int64_t x = 0; x < w; ++x) {
                for (int ai = 0; ai < kAnchorsPerCell; ++ai) {
                    for (int c = 0; c < classes; ++c) {
                        const double p = cls.data()[((ai * classes + c) * h + y) * w + x];
                        if (p < threshold) continue;
                        BoxOffsets off;
                        off.dx = box.data()[((ai * 4 + 0) * h + y) * w + x];
                        off.dy = box.data()[((ai * 4 + 1) * h + y) * w + x];
                        off.dw = box.data()[((ai * 4 + 2) * h + y) * w + x];
                        off.dh = box.data()[((ai * 4 + 3) * h + y) * w + x];
                        const auto& anchor = pyramid[s][static_cast<std::size_t>((y * w + x) * kAnchorsPerCell + ai)];
                        Box decoded = decode_box(anchor, off);
                        decoded.class_id = c + 1;
                        boxes.push_back(decoded);
                        scores.push_back(p);
                    }
                }
            }
        }
    }
    std::vector<std::pair<Box, double>> kept;
    for (std::size_t idx : nms(boxes, scores, 0.5, 10)) kept.emplace_back(boxes[idx], scores[idx]);
    return kept;
}

template <class T>
int run_render_t(const RenderArgs& a) {
    print_resolved("render", {{"checkpoint", a.checkpoint},
                              {"data", a.data},
                              {"out", a.out},
                              {"split", a.split},
                              {"n", a.n}});
    Dataset ds = load_dataset(a.data);
    const std::vector<Sample>& split = a.split == "train" ? ds.train : (a.split == "val" ? ds.val : ds.test);
    if (split.empty()) throw DataError("split '" + a.split + "' is empty");

    auto entries = read_checkpoint<T>(a.checkpoint);
    ModelConfig mc = model_config_from_meta(entries);
    MsdnModel<T> model(mc);
    load_model_state(model, entries);

    fs::create_directories(a.out);
    const int n = std::min<int>(a.n, static_cast<int>(split.size()));
    for (int i = 0; i < n; ++i) {
        const Sample& s = split[static_cast<std::size_t>(i)];
        ImageBuf norm = s.image;
        normalize_image(norm, ds.stats);
        std::vector<const ImageBuf*> one{&norm};
        auto images = stack_images<T>(one);
        Tape<T> tape(false);
        auto probs = model.forward_seg(tape, images, Mode::kEval);
        auto labels = argmax_labels(probs);

        MaskBuf pred{s.image.h, s.image.w, labels};
        write_pgm(fs::path(a.out) / (s.id + "_image.pgm"), s.image);
        write_mask_pgm(fs::path(a.out) / (s.id + "_pred.pgm"), pred, ds.classes);
        if (s.mask) write_mask_pgm(fs::path(a.out) / (s.id + "_truth.pgm"), *s.mask, ds.classes);

        if (mc.kind == ModelKind::kMsdn) {
            auto stages = model.forward_det(tape, images, Mode::kEval);
            ImageBuf overlay = s.image;
            double hi = overlay.v[0];
            for (double v : overlay.v) hi = std::max(hi, v);
            for (const auto& [box, score] : decode_predictions(stages, s.image.h, ds.classes, a.score_threshold)) {
                (void)score;
                draw_box_outline(overlay, box, hi);
            }
            write_pgm(fs::path(a.out) / (s.id + "_boxes.pgm"), overlay);
        }
    }
    std::cout << "wrote renderings for " << n << " samples to " << a.out << "\n";
    return 0;
}

}  // namespace

int cli_main(int argc, const char* const* argv) {
    CLI::App app{"Mixed-supervised dual-network segmentation on a from-scratch tensor engine"};
    app.require_subcommand(1);

    GenArgs gen;
    auto* gen_cmd = app.add_subcommand("gen-data", "generate a synthetic mixed-supervision dataset");
    gen_cmd->add_option("--out", gen.out, "output directory")->required();
    gen_cmd->add_option("--n", gen.n, "training samples");
    gen_cmd->add_option("--n-val", gen.n_val, "validation samples");
    gen_cmd->add_option("--n-test", gen.n_test, "test samples");
    gen_cmd->add_option("--size", gen.size, "image size (multiple of 16)");
    gen_cmd->add_option("--seed", gen.seed, "generator seed");
    gen_cmd->add_option("--classes", gen.classes, "foreground classes");
    gen_cmd->add_option("--noise", gen.noise, "pixel noise sigma");

    TrainArgs tr;
    auto* train_cmd = app.add_subcommand("train", "train a model on a generated dataset");
    train_cmd->add_option("--config", tr.config_path, "JSON config file");
    train_cmd->add_option("--data", tr.data, "dataset directory")->required();
    train_cmd->add_option("--out", tr.out, "run output directory");
    train_cmd->add_option("--resume", tr.resume, "checkpoint to resume from");
    std::uint64_t seed_flag = 0;
    auto* seed_opt = train_cmd->add_option("--seed", seed_flag, "seed override");
    std::string model_flag;
    auto* model_opt = train_cmd->add_option("--model", model_flag, "unet|unet-unary-sse|msdn-minus|msdn");
    int n_strong_flag = 0;
    auto* ns_opt = train_cmd->add_option("--n-strong", n_strong_flag, "strong sample count override");
    std::int64_t size_flag = 0;
    auto* size_opt = train_cmd->add_option("--size", size_flag, "image size override");

    EvalArgs ev;
    auto* eval_cmd = app.add_subcommand("eval", "evaluate checkpoints; several give a 95% CI");
    eval_cmd->add_option("--checkpoints", ev.checkpoints, "checkpoint paths")->required()->expected(-1);
    eval_cmd->add_option("--data", ev.data, "dataset directory")->required();
    eval_cmd->add_option("--split", ev.split, "train|val|test");
    std::string eval_model;
    auto* eval_model_opt = eval_cmd->add_option("--model", eval_model, "expected model kind");

    int gc_instances = 20;
    double gc_threshold = 1e-4;
    auto* gc_cmd = app.add_subcommand("gradcheck", "finite-difference sweep over every differentiable op");
    gc_cmd->add_option("--instances", gc_instances, "random instances per op");
    gc_cmd->add_option("--threshold", gc_threshold, "max relative error allowed");

    RenderArgs rd;
    auto* render_cmd = app.add_subcommand("render", "write predicted masks and boxes as PGM images");
    render_cmd->add_option("--checkpoint", rd.checkpoint, "checkpoint path")->required();
    render_cmd->add_option("--data", rd.data, "dataset directory")->required();
    render_cmd->add_option("--out", rd.out, "output directory")->required();
    render_cmd->add_option("--split", rd.split, "train|val|test");
    render_cmd->add_option("--n", rd.n, "samples to render");
    render_cmd->add_option("--score-threshold", rd.score_threshold, "classifier threshold for boxes");

    try {
        app.parse(argc, argv);

        if (*gen_cmd) return run_gen_data(gen);

        if (*train_cmd) {
            if (*seed_opt) tr.seed = seed_flag;
            if (*model_opt) tr.model = model_flag;
            if (*ns_opt) tr.n_strong = n_strong_flag;
            if (*size_opt) tr.size = size_flag;
            return resolve_precision() == Precision::kF64 ? run_train_t<double>(tr) : run_train_t<float>(tr);
        }
        if (*eval_cmd) {
            if (*eval_model_opt) ev.model = eval_model;
            return resolve_precision() == Precision::kF64 ? run_eval_t<double>(ev) : run_eval_t<float>(ev);
        }
        if (*gc_cmd) {
            return run_gradcheck(gc_instances, gc_threshold);  // always f64
        }
        if (*render_cmd) {
            return resolve_precision() == Precision::kF64 ? run_render_t<double>(rd) : run_render_t<float>(rd);
        }
        return 1;
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const SchemaError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 2;
    } catch (const FormatError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

}  // namespace msdn
