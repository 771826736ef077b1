#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "json.hpp"
#include "msdn/checkpoint.hpp"
#include "msdn/data.hpp"
#include "msdn/losses.hpp"
#include "msdn/metrics.hpp"
#include "msdn/model.hpp"
#include "msdn/schedule.hpp"

namespace msdn {

// ---------------------------------------------------------------------------
// Training configuration, mirrored one-to-one by the JSON config file.
// ---------------------------------------------------------------------------

struct TrainConfig {
    double lr = 1e-4;
    int batch_size = 4;
    double plateau_factor = 0.8;
    int plateau_patience = 5;
    int early_stop_patience = 20;
    int max_epochs = 300;
    double dropout = 0.1;
    std::string model = "msdn";
    int classes = 1;
    int n_strong = -1;  // -1: every training sample keeps its dense mask
    int n_weak = -1;    // -1: all remaining samples
    std::uint64_t seed = 1;
    std::int64_t image_size = 64;
    std::int64_t crop_size = 0;  // 0: train on full images
    std::int64_t base_channels = 8;
    std::int64_t head_channels = 32;
    bool augment = true;
    double noise_sigma = 0.05;
    double dice_smooth = 1e-5;
    // Strong masks imply boxes; routing them into the detection loss is left
    // off, matching the routing text (weak data alone feeds detection).
    bool strong_boxes_to_detection = false;
    double improve_tol = 1e-6;

    ModelKind kind() const { return parse_model_kind(model); }

    bool mixed_supervision() const { return kind() == ModelKind::kMsdn; }

    void validate() const {
        if (lr <= 0) throw ConfigError("lr must be > 0");
        if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
        if (plateau_patience < 1 || early_stop_patience < 1) throw ConfigError("patience values must be >= 1");
        if (max_epochs < 1) throw ConfigError("max_epochs must be >= 1");
        if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("dropout must be in [0,1)");
        if (image_size < 16 || image_size % 16 != 0) throw ConfigError("image_size must be a multiple of 16");
        if (crop_size != 0 && (crop_size < 16 || crop_size % 16 != 0)) {
            throw ConfigError("crop_size must be 0 or a multiple of 16");
        }
        (void)kind();
    }
};

nlohmann::json train_config_to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::json& j);
TrainConfig load_train_config(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Adam with per-parameter moment slots keyed by parameter name. The trainer
// steps only the parameter group a batch's route actually exercised.
// ---------------------------------------------------------------------------

template <class T>
struct AdamSlot {
    Tensor<T> m, v;
    std::int64_t t = 0;
};

template <class T>
class Adam {
public:
    explicit Adam(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : beta1_(static_cast<T>(beta1)), beta2_(static_cast<T>(beta2)), eps_(static_cast<T>(eps)) {}

    void step(const std::vector<NamedParam<T>>& params, double lr) {
        for (const auto& p : params) {
            auto& slot = slots_[p.name];
            if (!slot.m.defined()) {
                slot.m = Tensor<T>::zeros(p.tensor->shape());
                slot.v = Tensor<T>::zeros(p.tensor->shape());
            }
            const T* g = p.tensor->grad();
            if (!g) throw ContractError("adam_step on parameter without gradient: " + p.name);
            for (std::int64_t i = 0; i < p.tensor->numel(); ++i) {
                if (!std::isfinite(g[i])) {
                    throw DataError("non-finite gradient in parameter " + p.name + " at element " +
                                    std::to_string(i) + "; training aborted");
                }
            }
            slot.t += 1;
            const T bc1 = T(1) - static_cast<T>(std::pow(static_cast<double>(beta1_), static_cast<double>(slot.t)));
            const T bc2 = T(1) - static_cast<T>(std::pow(static_cast<double>(beta2_), static_cast<double>(slot.t)));
            T* m = slot.m.data();
            T* v = slot.v.data();
            T* w = p.tensor->data();
            const T lrt = static_cast<T>(lr);
            for (std::int64_t i = 0; i < p.tensor->numel(); ++i) {
                m[i] = beta1_ * m[i] + (T(1) - beta1_) * g[i];
                v[i] = beta2_ * v[i] + (T(1) - beta2_) * g[i] * g[i];
                const T mhat = m[i] / bc1;
                const T vhat = v[i] / bc2;
                w[i] -= lrt * mhat / (std::sqrt(vhat) + eps_);
            }
        }
    }

    std::map<std::string, AdamSlot<T>>& slots() { return slots_; }
    const std::map<std::string, AdamSlot<T>>& slots() const { return slots_; }

private:
    T beta1_, beta2_, eps_;
    std::map<std::string, AdamSlot<T>> slots_;
};

// ---------------------------------------------------------------------------
// Batch assembly: augmentation (train only), normalization, stacking into
// per-route subgroups. Weak samples contribute image + boxes only.
// ---------------------------------------------------------------------------

template <class T>
struct TrainBatch {
    Tensor<T> strong_images;
    std::vector<std::int32_t> strong_labels;
    int n_strong = 0;
    Tensor<T> weak_images;
    std::vector<std::vector<Box>> weak_boxes;
    int n_weak = 0;
};

template <class T>
Tensor<T> stack_images(const std::vector<const ImageBuf*>& images) {
    const std::int64_t n = static_cast<std::int64_t>(images.size());
    const std::int64_t h = images[0]->h, w = images[0]->w;
    Tensor<T> out = Tensor<T>::zeros({n, 1, h, w});
    for (std::int64_t i = 0; i < n; ++i) {
        for (std::int64_t k = 0; k < h * w; ++k) {
            out.data()[i * h * w + k] = static_cast<T>(images[static_cast<std::size_t>(i)]->v[static_cast<std::size_t>(k)]);
        }
    }
    return out;
}

template <class T>
TrainBatch<T> build_batch(const std::vector<Sample>& pool, const std::vector<int>& indices,
                          const TrainConfig& cfg, const DatasetStats& stats, int epoch, Mode mode) {
    TrainBatch<T> batch;
    std::vector<Sample> prepared;
    prepared.reserve(indices.size());
    for (int idx : indices) {
        Sample s = pool[static_cast<std::size_t>(idx)];
        if (mode == Mode::kTrain && cfg.augment) {
            AugmentConfig aug;
            aug.flips = true;
            aug.noise_sigma = cfg.noise_sigma;
            aug.crop = cfg.crop_size;
            s = augment(s, derive_seed(cfg.seed, "aug", static_cast<std::uint64_t>(epoch),
                                       static_cast<std::uint64_t>(idx)),
                        aug, cfg.classes);
        }
        normalize_image(s.image, stats);
        prepared.push_back(std::move(s));
    }

    std::vector<const ImageBuf*> strong_imgs, weak_imgs;
    for (const auto& s : prepared) {
        if (s.kind == Kind::kStrong) {
            strong_imgs.push_back(&s.image);
            const MaskBuf& m = s.training_mask();
            batch.strong_labels.insert(batch.strong_labels.end(), m.v.begin(), m.v.end());
            ++batch.n_strong;
            if (cfg.strong_boxes_to_detection) {
                weak_imgs.push_back(&s.image);
                batch.weak_boxes.push_back(s.boxes);
                ++batch.n_weak;
            }
        } else {
            weak_imgs.push_back(&s.image);
            batch.weak_boxes.push_back(s.boxes);
            ++batch.n_weak;
        }
    }
    if (!strong_imgs.empty()) batch.strong_images = stack_images<T>(strong_imgs);
    if (!weak_imgs.empty()) batch.weak_images = stack_images<T>(weak_imgs);
    return batch;
}

// ---------------------------------------------------------------------------
// One optimization step over a mixed batch. Returns the per-kind losses that
// were present. Exposed separately so routing isolation is testable.
// ---------------------------------------------------------------------------

struct StepLosses {
    double seg = 0.0;
    double det = 0.0;
    bool had_strong = false;
    bool had_weak = false;
};

template <class T>
StepLosses train_step(MsdnModel<T>& model, Adam<T>& opt, const TrainBatch<T>& batch,
                         const std::vector<std::vector<Box>>& stage_anchors, const TrainConfig& cfg, double lr,
                         std::uint64_t iter_seed) {
    StepLosses out;
    Tape<T> tape;
    model.zero_grad();

    Tensor<T> loss;
    if (batch.n_strong > 0) {
        auto probs = model.forward_seg(tape, batch.strong_images, Mode::kTrain, iter_seed);
        auto seg = dice_loss(tape, probs, batch.strong_labels, static_cast<T>(cfg.dice_smooth));
        out.seg = static_cast<double>(seg.item());
        out.had_strong = true;
        loss = seg;
    }
    if (batch.n_weak > 0 && model.config.kind == ModelKind::kMsdn) {
        auto stages = model.forward_det(tape, batch.weak_images, Mode::kTrain, iter_seed);
        auto det = detection_loss(tape, stages, batch.weak_boxes, stage_anchors, cfg.classes,
                                  DetectionLossParams<T>{});
        auto det_sum = add(tape, det.cls, det.box);
        out.det = static_cast<double>(det_sum.item());
        out.had_weak = true;
        loss = loss.defined() ? add(tape, loss, det_sum) : det_sum;
    }
    if (!loss.defined()) return out;

    tape.backward(loss);

    std::vector<NamedParam<T>> group;
    std::map<std::string, bool> seen;
    if (out.had_strong) {
        for (auto& p : model.route_params(MsdnModel<T>::Route::kStrong)) {
            if (!seen[p.name]) {
                seen[p.name] = true;
                group.push_back(p);
            }
        }
    }
    if (out.had_weak) {
        for (auto& p : model.route_params(MsdnModel<T>::Route::kWeak)) {
            if (!seen[p.name]) {
                seen[p.name] = true;
                group.push_back(p);
            }
        }
    }
    opt.step(group, lr);
    return out;
}

// ---------------------------------------------------------------------------
// Dice evaluation of a split in eval mode (running BN stats, dropout off).
// ---------------------------------------------------------------------------

template <class T>
std::vector<std::int32_t> argmax_labels(const Tensor<T>& probs) {
    const std::int64_t n = probs.dim(0), c = probs.dim(1), hw = probs.dim(2) * probs.dim(3);
    std::vector<std::int32_t> out(static_cast<std::size_t>(n * hw));
    for (std::int64_t in = 0; in < n; ++in) {
        for (std::int64_t s = 0; s < hw; ++s) {
            std::int32_t best = 0;
            T bv = probs.data()[in * c * hw + s];
            for (std::int64_t ci = 1; ci < c; ++ci) {
                const T v = probs.data()[(in * c + ci) * hw + s];
                if (v > bv) {
                    bv = v;
                    best = static_cast<std::int32_t>(ci);
                }
            }
            out[static_cast<std::size_t>(in * hw + s)] = best;
        }
    }
    return out;
}

template <class T>
double evaluate_dice(MsdnModel<T>& model, const std::vector<Sample>& split, const DatasetStats& stats,
                     int classes, int eval_batch = 8) {
    if (split.empty()) throw DataError("evaluate_dice over an empty split");
    double acc = 0.0;
    for (std::size_t start = 0; start < split.size(); start += static_cast<std::size_t>(eval_batch)) {
        const std::size_t end = std::min(split.size(), start + static_cast<std::size_t>(eval_batch));
        std::vector<ImageBuf> normalized(end - start);
        std::vector<const ImageBuf*> ptrs;
        for (std::size_t i = start; i < end; ++i) {
            normalized[i - start] = split[i].image;
            normalize_image(normalized[i - start], stats);
            ptrs.push_back(&normalized[i - start]);
        }
        auto images = stack_images<T>(ptrs);
        Tape<T> tape(false);
        auto probs = model.forward_seg(tape, images, Mode::kEval);
        auto labels = argmax_labels(probs);
        const std::int64_t hw = probs.dim(2) * probs.dim(3);
        for (std::size_t i = start; i < end; ++i) {
            if (!split[i].mask.has_value()) throw DataError("evaluation sample " + split[i].id + " has no mask");
            std::vector<std::int32_t> pred(labels.begin() + static_cast<std::ptrdiff_t>((i - start) * static_cast<std::size_t>(hw)),
                                           labels.begin() + static_cast<std::ptrdiff_t>((i - start + 1) * static_cast<std::size_t>(hw)));
            acc += foreground_dice(pred, split[i].mask->v, classes);
        }
    }
    return acc / static_cast<double>(split.size());
}

// ---------------------------------------------------------------------------
// The training protocol: shuffled mixed batches, route-aware Adam steps,
// plateau schedule with early stopping, test evaluation on validation
// improvement, checkpointing after every epoch.
// ---------------------------------------------------------------------------

struct TrainResult {
    RunLog log;
    double best_val = 0.0;
    double best_test = 0.0;
    std::string best_checkpoint;
    std::string last_checkpoint;
};

template <class T>
class Trainer {
public:
    Trainer(const TrainConfig& cfg, const Dataset& ds)
        : cfg_(cfg),
          dataset_(ds),
          model_(make_model_config(cfg)),
          schedule_(cfg.lr, cfg.plateau_factor, cfg.plateau_patience, cfg.early_stop_patience, cfg.improve_tol) {
        cfg_.validate();
        if (dataset_.classes != cfg.classes) {
            throw ConfigError("dataset has " + std::to_string(dataset_.classes) + " classes, config expects " +
                              std::to_string(cfg.classes));
        }
        if (dataset_.train.empty() || dataset_.val.empty()) {
            throw ConfigError("training needs non-empty train and val splits");
        }

        pool_ = dataset_.train;
        const int n_strong = cfg.n_strong < 0 ? static_cast<int>(pool_.size()) : cfg.n_strong;
        split_strong_weak(pool_, n_strong, cfg.seed);
        if (!cfg_.mixed_supervision()) {
            // strong-only baselines never see the weak samples
            std::vector<Sample> strong;
            for (auto& s : pool_) {
                if (s.kind == Kind::kStrong) strong.push_back(std::move(s));
            }
            pool_ = std::move(strong);
        } else if (cfg.n_weak >= 0) {
            std::vector<Sample> kept;
            int weak_kept = 0;
            for (auto& s : pool_) {
                if (s.kind == Kind::kWeak) {
                    if (weak_kept >= cfg.n_weak) continue;
                    ++weak_kept;
                }
                kept.push_back(std::move(s));
            }
            pool_ = std::move(kept);
        }
        if (pool_.empty()) {
            throw ConfigError("training pool is empty: model kind " + cfg.model + " with n_strong " +
                              std::to_string(n_strong));
        }
        bool any_strong = false;
        for (const auto& s : pool_) any_strong = any_strong || s.kind == Kind::kStrong;
        if (!any_strong && !cfg_.mixed_supervision()) {
            throw ConfigError("segmentation-only model kinds need a non-empty strong set");
        }

        const std::int64_t train_size = cfg.crop_size > 0 ? cfg.crop_size : dataset_.size;
        stage_anchors_ = generate_pyramid_anchors(train_size);
    }

    MsdnModel<T>& model() { return model_; }

    void resume_from(const std::string& path) {
        auto entries = read_checkpoint<T>(path);
        load_model_state(model_, entries);
        std::map<std::string, Tensor<T>> extra;
        for (auto& [name, tensor] : entries) extra.emplace(name, tensor);
        auto need = [&](const std::string& name) -> Tensor<T>& {
            auto it = extra.find(name);
            if (it == extra.end()) throw SchemaError("checkpoint lacks resume entry '" + name + "'");
            return it->second;
        };
        for (auto& p : model_.parameters()) {
            AdamSlot<T> slot;
            slot.m = need("opt." + p.name + ".m").clone();
            slot.v = need("opt." + p.name + ".v").clone();
            slot.t = static_cast<std::int64_t>(need("opt." + p.name + ".t").item());
            if (slot.m.shape() != p.tensor->shape() || slot.v.shape() != p.tensor->shape()) {
                throw SchemaError("optimizer slot shape mismatch for " + p.name);
            }
            opt_.slots()[p.name] = std::move(slot);
        }

        // Trainer scalars live in a JSON sidecar: doubles round-trip exactly
        // there, which the resumed-equals-straight trajectory guarantee needs.
        const std::string state_path = path + ".state.json";
        std::ifstream is(state_path);
        if (!is) throw SchemaError("checkpoint " + path + " has no state sidecar " + state_path);
        nlohmann::json j;
        try {
            is >> j;
        } catch (const nlohmann::json::exception& e) {
            throw FormatError("malformed state sidecar " + state_path + ": " + e.what());
        }
        schedule_.restore(j.at("lr").get<double>(), j.at("best_val").get<double>(), j.at("seen").get<bool>(),
                          j.at("plateau").get<int>(), j.at("stop").get<int>(), j.at("reductions").get<int>());
        best_val_ = j.at("best_val").get<double>();
        best_test_ = j.at("best_test").get<double>();
        next_epoch_ = j.at("epoch").get<int>() + 1;
    }

    // Runs until early stop or max_epochs; extra_epochs > 0 caps the number
    // of additional epochs (used by resume-equivalence checks).
    TrainResult run(const std::filesystem::path& out_dir, int extra_epochs = -1) {
        std::filesystem::create_directories(out_dir);
        TrainResult result;
        const std::string best_path = (out_dir / "best.ckpt").string();
        const std::string last_path = (out_dir / "last.ckpt").string();

        int epochs_done_here = 0;
        for (int epoch = next_epoch_; epoch <= cfg_.max_epochs; ++epoch) {
            if (extra_epochs >= 0 && epochs_done_here >= extra_epochs) break;
            ++epochs_done_here;
            const double lr_epoch = schedule_.lr();

            std::vector<int> order(pool_.size());
            std::iota(order.begin(), order.end(), 0);
            Rng shuffle_rng(derive_seed(cfg_.seed, "shuffle", static_cast<std::uint64_t>(epoch)));
            shuffle_rng.shuffle(order);

            double seg_sum = 0.0, det_sum = 0.0;
            int seg_batches = 0, det_batches = 0;
            int iter = 0;
            for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg_.batch_size)) {
                const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg_.batch_size));
                std::vector<int> indices(order.begin() + static_cast<std::ptrdiff_t>(start),
                                         order.begin() + static_cast<std::ptrdiff_t>(end));
                auto batch = build_batch<T>(pool_, indices, cfg_, dataset_.stats, epoch, Mode::kTrain);
                const auto seed = derive_seed(cfg_.seed, "iter", static_cast<std::uint64_t>(epoch),
                                              static_cast<std::uint64_t>(iter));
                auto losses = train_step(model_, opt_, batch, stage_anchors_, cfg_, lr_epoch, seed);
                if (losses.had_strong) {
                    seg_sum += losses.seg;
                    ++seg_batches;
                }
                if (losses.had_weak) {
                    det_sum += losses.det;
                    ++det_batches;
                }
                ++iter;
            }

            const double val_dice = evaluate_dice(model_, dataset_.val, dataset_.stats, cfg_.classes);
            const auto decision = schedule_.observe(val_dice);

            EpochRecord rec;
            rec.epoch = epoch;
            rec.seg_loss = seg_batches ? seg_sum / seg_batches : 0.0;
            rec.det_loss = det_batches ? det_sum / det_batches : 0.0;
            rec.val_dice = val_dice;
            rec.lr = lr_epoch;

            if (decision.improved) {
                best_val_ = val_dice;
                if (!dataset_.test.empty()) {
                    const double test_dice = evaluate_dice(model_, dataset_.test, dataset_.stats, cfg_.classes);
                    rec.test_dice = test_dice;
                    best_test_ = std::max(best_test_, test_dice);
                }
                save_checkpoint(best_path, epoch);
            }
            result.log.rows.push_back(rec);
            save_checkpoint(last_path, epoch);

            if (decision.stop) break;
        }

        result.best_val = best_val_;
        result.best_test = best_test_;
        result.best_checkpoint = best_path;
        result.last_checkpoint = last_path;
        return result;
    }

    void save_checkpoint(const std::string& path, int epoch) {
        CheckpointEntries<T> entries;
        for (auto& p : model_.state_tensors()) entries.emplace_back(p.name, p.tensor->clone());
        for (auto& p : model_.parameters()) {
            auto it = opt_.slots().find(p.name);
            AdamSlot<T> empty;
            const AdamSlot<T>* slot = &empty;
            if (it != opt_.slots().end()) {
                slot = &it->second;
            } else {
                empty.m = Tensor<T>::zeros(p.tensor->shape());
                empty.v = Tensor<T>::zeros(p.tensor->shape());
            }
            entries.emplace_back("opt." + p.name + ".m", slot->m.clone());
            entries.emplace_back("opt." + p.name + ".v", slot->v.clone());
            entries.emplace_back("opt." + p.name + ".t", Tensor<T>::scalar(static_cast<T>(slot->t)));
        }
        entries.emplace_back("meta.kind", Tensor<T>::scalar(static_cast<T>(static_cast<int>(model_.config.kind))));
        entries.emplace_back("meta.classes", Tensor<T>::scalar(static_cast<T>(model_.config.classes)));
        entries.emplace_back("meta.base_channels", Tensor<T>::scalar(static_cast<T>(model_.config.base_channels)));
        entries.emplace_back("meta.head_channels", Tensor<T>::scalar(static_cast<T>(model_.config.head_channels)));
        entries.emplace_back("meta.image_size", Tensor<T>::scalar(static_cast<T>(dataset_.size)));
        write_checkpoint(path, entries);

        nlohmann::json j;
        j["lr"] = schedule_.lr();
        j["best_val"] = best_val_;
        j["best_test"] = best_test_;
        j["epoch"] = epoch;
        j["plateau"] = schedule_.plateau_counter();
        j["stop"] = schedule_.stop_counter();
        j["seen"] = schedule_.seen_any();
        j["reductions"] = schedule_.reductions();
        std::ofstream os(path + ".state.json");
        if (!os) throw DataError("cannot write state sidecar for " + path);
        os << j.dump(2) << "\n";
    }

    static ModelConfig make_model_config(const TrainConfig& cfg) {
        ModelConfig mc;
        mc.kind = cfg.kind();
        mc.classes = cfg.classes;
        mc.base_channels = cfg.base_channels;
        mc.head_channels = cfg.head_channels;
        mc.dropout = cfg.dropout;
        mc.seed = cfg.seed;
        return mc;
    }

    const std::vector<Sample>& pool() const { return pool_; }
    const std::vector<std::vector<Box>>& stage_anchors() const { return stage_anchors_; }
    ScheduleState& schedule() { return schedule_; }
    Adam<T>& optimizer() { return opt_; }

private:
    TrainConfig cfg_;
    Dataset dataset_;
    MsdnModel<T> model_;
    Adam<T> opt_;
    ScheduleState schedule_;
    std::vector<Sample> pool_;
    std::vector<std::vector<Box>> stage_anchors_;
    double best_val_ = 0.0;
    double best_test_ = 0.0;
    int next_epoch_ = 1;
};

template <class T>
TrainResult train_model(const TrainConfig& cfg, const Dataset& ds, const std::filesystem::path& out_dir,
                        const std::string& resume_path = "") {
    Trainer<T> trainer(cfg, ds);
    if (!resume_path.empty()) trainer.resume_from(resume_path);
    auto result = trainer.run(out_dir);
    std::ofstream os(out_dir / "runlog.csv");
    if (!os) throw DataError("cannot write runlog in " + out_dir.string());
    os << result.log.to_csv();
    return result;
}

}  // namespace msdn
