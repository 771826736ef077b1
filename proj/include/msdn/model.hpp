#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "msdn/layers.hpp"
#include "msdn/losses.hpp"
#include "msdn/se.hpp"

namespace msdn {

enum class ModelKind { kUnet, kUnetUnarySse, kMsdnMinus, kMsdn };

inline ModelKind parse_model_kind(const std::string& s) {
    if (s == "unet") return ModelKind::kUnet;
    if (s == "unet-unary-sse" || s == "unet_unary_sse") return ModelKind::kUnetUnarySse;
    if (s == "msdn-minus" || s == "msdn_minus") return ModelKind::kMsdnMinus;
    if (s == "msdn") return ModelKind::kMsdn;
    throw ConfigError("unknown model kind '" + s + "'");
}

inline const char* model_kind_name(ModelKind k) {
    switch (k) {
        case ModelKind::kUnet: return "unet";
        case ModelKind::kUnetUnarySse: return "unet-unary-sse";
        case ModelKind::kMsdnMinus: return "msdn-minus";
        case ModelKind::kMsdn: return "msdn";
    }
    return "?";
}

struct ModelConfig {
    ModelKind kind = ModelKind::kMsdn;
    int classes = 1;
    std::int64_t base_channels = 8;
    std::int64_t head_channels = 32;  // 4x base reproduces the published 256 at base 64
    double dropout = 0.1;
    std::uint64_t seed = 1;

    static constexpr int kAnchors = kAnchorsPerCell;  // A = 9
};

// Dilation factors of the 9 feature stages: enc1..enc4, bottleneck, dec4..dec1.
inline constexpr std::array<std::int64_t, 9> kStageDilations = {1, 2, 2, 2, 4, 2, 2, 2, 1};

template <class T>
struct NamedParam {
    std::string name;
    Tensor<T>* tensor;
};

// One feature stage: 2 x (dilated 3x3 conv -> BN -> ReLU) followed by
// dropout on the stage output. Pad equals dilation so spatial size is
// preserved; asserted on every forward.
template <class T>
struct ConvBnStage {
    ConvLayer<T> conv1, conv2;
    BatchNorm2d<T> bn1, bn2;
    std::int64_t dilation = 1;

    ConvBnStage() = default;

    ConvBnStage(std::int64_t c_in, std::int64_t c_out, std::int64_t dilation_, std::uint64_t master_seed,
                const std::string& name)
        : conv1(c_in, c_out, 3, 1, dilation_, dilation_, derive_seed(master_seed, name + ".conv1")),
          conv2(c_out, c_out, 3, 1, dilation_, dilation_, derive_seed(master_seed, name + ".conv2")),
          bn1(c_out),
          bn2(c_out),
          dilation(dilation_) {}

    Tensor<T> forward(Tape<T>& tape, const Tensor<T>& x, Mode mode, double drop_p, std::uint64_t drop_seed) {
        auto h = relu(tape, bn1.forward(tape, conv1.forward(tape, x), mode));
        auto y = relu(tape, bn2.forward(tape, conv2.forward(tape, h), mode));
        if (y.dim(2) != x.dim(2) || y.dim(3) != x.dim(3)) {
            throw DimensionError("feature stage changed spatial size: " + shape_str(x.shape()) + " -> " +
                                 shape_str(y.shape()));
        }
        return dropout(tape, y, drop_p, drop_seed, mode);
    }
};

// A 9-stage U-Net: 4 encoder stages, bottleneck, 4 decoder stages with
// max-pool downsampling, transposed-conv upsampling and skip concatenation.
template <class T>
struct SubNetwork {
    std::array<ConvBnStage<T>, 9> stages;  // enc1..enc4, bott, dec4..dec1
    std::array<UpsampleLayer<T>, 4> ups;   // up4..up1

    SubNetwork() = default;

    SubNetwork(std::int64_t in_channels, std::int64_t base, std::uint64_t master_seed, const std::string& prefix) {
        const std::array<std::string, 9> names = {"enc1", "enc2", "enc3", "enc4", "bott",
                                                  "dec4", "dec3", "dec2", "dec1"};
        std::array<std::int64_t, 9> cin, cout;
        cin[0] = in_channels;
        cout[0] = base;
        for (int i = 1; i < 4; ++i) {
            cin[static_cast<std::size_t>(i)] = cout[static_cast<std::size_t>(i - 1)];
            cout[static_cast<std::size_t>(i)] = cout[static_cast<std::size_t>(i - 1)] * 2;
        }
        cin[4] = cout[3];
        cout[4] = cout[3] * 2;  // bottleneck: 16x base
        for (int i = 0; i < 4; ++i) {
            // dec4..dec1: input is upsampled deep features concatenated with the skip
            const std::int64_t skip = cout[static_cast<std::size_t>(3 - i)];
            cin[static_cast<std::size_t>(5 + i)] = skip * 2;
            cout[static_cast<std::size_t>(5 + i)] = skip;
        }
        for (int i = 0; i < 9; ++i) {
            stages[static_cast<std::size_t>(i)] =
                ConvBnStage<T>(cin[static_cast<std::size_t>(i)], cout[static_cast<std::size_t>(i)],
                               kStageDilations[static_cast<std::size_t>(i)], master_seed,
                               prefix + "." + names[static_cast<std::size_t>(i)]);
        }
        const std::array<std::string, 4> up_names = {"up4", "up3", "up2", "up1"};
        for (int i = 0; i < 4; ++i) {
            const std::int64_t deep = cout[static_cast<std::size_t>(4 + i)];
            ups[static_cast<std::size_t>(i)] = UpsampleLayer<T>(
                deep, deep / 2, derive_seed(master_seed, prefix + "." + up_names[static_cast<std::size_t>(i)]));
        }
    }

    std::int64_t stage_out_channels(int i) const { return stages[static_cast<std::size_t>(i)].conv2.weight.dim(0); }
};

// Shared classifier / regressor towers applied at every decoder resolution.
// Decoder stages have differing widths, so a per-stage 1x1 projection feeds
// the shared towers.
template <class T>
struct DetectionHead {
    std::array<ConvLayer<T>, 4> cls_tower, box_tower;
    ConvLayer<T> cls_out, box_out;

    DetectionHead() = default;

    DetectionHead(std::int64_t channels, int classes, int anchors, std::uint64_t master_seed) {
        for (int i = 0; i < 4; ++i) {
            cls_tower[static_cast<std::size_t>(i)] =
                ConvLayer<T>(channels, channels, 3, 1, 1, 1,
                             derive_seed(master_seed, "head.cls" + std::to_string(i + 1)));
            box_tower[static_cast<std::size_t>(i)] =
                ConvLayer<T>(channels, channels, 3, 1, 1, 1,
                             derive_seed(master_seed, "head.box" + std::to_string(i + 1)));
        }
        // output convs start near zero with a classifier prior of p = 0.01,
        // so the dense negatives contribute little focal loss at step one
        cls_out = ConvLayer<T>(channels, static_cast<std::int64_t>(classes) * anchors, 3, 1, 1, 1,
                               derive_seed(master_seed, "head.cls_out"), 0.01);
        box_out = ConvLayer<T>(channels, 4 * static_cast<std::int64_t>(anchors), 3, 1, 1, 1,
                               derive_seed(master_seed, "head.box_out"), 0.01);
        const T prior_bias = static_cast<T>(-std::log(99.0));
        std::fill(cls_out.bias.values().begin(), cls_out.bias.values().end(), prior_bias);
    }
};

// The dual network: a segmentation U-Net and a detection U-Net joined by
// binary sSE connectors after each encoder stage and the bottleneck. The
// plain U-Net and unary-sSE baselines reuse the same chassis with the
// detection side disabled.
template <class T>
class MsdnModel {
public:
    explicit MsdnModel(const ModelConfig& cfg) : config(cfg) {
        if (cfg.classes < 1) throw ConfigError("classes must be >= 1");
        if (cfg.base_channels < 1 || cfg.base_channels % 2 != 0) {
            throw ConfigError("base_channels must be a positive even number, got " +
                              std::to_string(cfg.base_channels));
        }
        if (cfg.head_channels < 1) throw ConfigError("head_channels must be >= 1");

        seg = SubNetwork<T>(1, cfg.base_channels, cfg.seed, "seg");
        seg_unit = ConvLayer<T>(cfg.base_channels, cfg.classes + 1, 1, 1, 0, 1, derive_seed(cfg.seed, "su"));

        if (has_dual_network()) {
            det = SubNetwork<T>(1, cfg.base_channels, cfg.seed, "det");
            connectors.reserve(5);
            for (int i = 0; i < 5; ++i) {
                connectors.emplace_back(det.stage_out_channels(i));
            }
        }
        if (config.kind == ModelKind::kUnetUnarySse) {
            unary.reserve(9);
            for (int i = 0; i < 9; ++i) unary.emplace_back(seg.stage_out_channels(i));
        }
        if (config.kind == ModelKind::kMsdn) {
            for (int i = 0; i < 4; ++i) {
                // decoder stage outputs run dec4..dec1 = 8b,4b,2b,b
                const std::int64_t c = det.stage_out_channels(5 + i);
                adapters[static_cast<std::size_t>(i)] = ConvLayer<T>(
                    c, cfg.head_channels, 1, 1, 0, 1, derive_seed(cfg.seed, "det.adapt" + std::to_string(i + 1)));
            }
            head = DetectionHead<T>(cfg.head_channels, cfg.classes, ModelConfig::kAnchors, cfg.seed);
        }

        for (auto& p : parameters()) p.tensor->set_requires_grad(true);
    }

    bool has_dual_network() const {
        return config.kind == ModelKind::kMsdn || config.kind == ModelKind::kMsdnMinus;
    }

    // Strong-data path: the segmentation output. For the dual kinds the
    // detection encoder and bottleneck run alongside and recalibrate the
    // segmentation features through the binary sSE connectors; the detection
    // decoder does not run.
    Tensor<T> forward_seg(Tape<T>& tape, const Tensor<T>& images, Mode mode, std::uint64_t iter_seed = 0) {
        check_input(images);
        const double p = config.dropout;
        std::array<Tensor<T>, 4> skips;

        Tensor<T> s = images;
        Tensor<T> d = images;
        for (int i = 0; i < 4; ++i) {
            s = seg.stages[static_cast<std::size_t>(i)].forward(tape, s, mode, p, drop_seed(iter_seed, 0, i));
            if (has_dual_network()) {
                d = det.stages[static_cast<std::size_t>(i)].forward(tape, d, mode, p, drop_seed(iter_seed, 1, i));
                s = sse_binary(tape, s, d, connectors[static_cast<std::size_t>(i)]);
            } else if (config.kind == ModelKind::kUnetUnarySse) {
                s = sse_unary(tape, s, unary[static_cast<std::size_t>(i)]);
            }
            skips[static_cast<std::size_t>(i)] = s;
            s = max_pool_2x2(tape, s);
            if (has_dual_network()) d = max_pool_2x2(tape, d);
        }

        s = seg.stages[4].forward(tape, s, mode, p, drop_seed(iter_seed, 0, 4));
        if (has_dual_network()) {
            d = det.stages[4].forward(tape, d, mode, p, drop_seed(iter_seed, 1, 4));
            s = sse_binary(tape, s, d, connectors[4]);
        } else if (config.kind == ModelKind::kUnetUnarySse) {
            s = sse_unary(tape, s, unary[4]);
        }

        for (int i = 0; i < 4; ++i) {
            auto up = seg.ups[static_cast<std::size_t>(i)].forward(tape, s);
            auto cat = concat_channels(tape, up, skips[static_cast<std::size_t>(3 - i)]);
            s = seg.stages[static_cast<std::size_t>(5 + i)].forward(tape, cat, mode, p,
                                                                    drop_seed(iter_seed, 0, 5 + i));
            if (config.kind == ModelKind::kUnetUnarySse) {
                s = sse_unary(tape, s, unary[static_cast<std::size_t>(5 + i)]);
            }
        }
        return channel_softmax(tape, seg_unit.forward(tape, s));
    }

    // Weak-data path: the detection sub-network alone, with the shared head
    // applied to all 4 decoder stages. Outputs run coarse to fine:
    // H/8, H/4, H/2, H.
    std::array<DetStageOut<T>, 4> forward_det(Tape<T>& tape, const Tensor<T>& images, Mode mode,
                                              std::uint64_t iter_seed = 0) {
        if (config.kind != ModelKind::kMsdn) {
            throw ConfigError(std::string("model kind ") + model_kind_name(config.kind) +
                              " has no detection path");
        }
        check_input(images);
        const double p = config.dropout;
        std::array<Tensor<T>, 4> skips;

        Tensor<T> d = images;
        for (int i = 0; i < 4; ++i) {
            d = det.stages[static_cast<std::size_t>(i)].forward(tape, d, mode, p, drop_seed(iter_seed, 2, i));
            skips[static_cast<std::size_t>(i)] = d;
            d = max_pool_2x2(tape, d);
        }
        d = det.stages[4].forward(tape, d, mode, p, drop_seed(iter_seed, 2, 4));

        std::array<DetStageOut<T>, 4> out;
        for (int i = 0; i < 4; ++i) {
            auto up = det.ups[static_cast<std::size_t>(i)].forward(tape, d);
            auto cat = concat_channels(tape, up, skips[static_cast<std::size_t>(3 - i)]);
            d = det.stages[static_cast<std::size_t>(5 + i)].forward(tape, cat, mode, p,
                                                                    drop_seed(iter_seed, 2, 5 + i));
            auto t = adapters[static_cast<std::size_t>(i)].forward(tape, d);
            auto c = t;
            for (auto& conv : head.cls_tower) c = relu(tape, conv.forward(tape, c));
            auto b = t;
            for (auto& conv : head.box_tower) b = relu(tape, conv.forward(tape, b));
            out[static_cast<std::size_t>(i)].cls = sigmoid(tape, head.cls_out.forward(tape, c));
            out[static_cast<std::size_t>(i)].box = head.box_out.forward(tape, b);
        }
        return out;
    }

    // Trainable parameters with stable hierarchical names.
    std::vector<NamedParam<T>> parameters() {
        std::vector<NamedParam<T>> out;
        collect_subnet(out, seg, "seg", false);
        out.push_back({"su.weight", &seg_unit.weight});
        out.push_back({"su.bias", &seg_unit.bias});
        if (has_dual_network()) {
            collect_subnet(out, det, "det", false);
            for (int i = 0; i < 5; ++i) {
                out.push_back({"conn" + std::to_string(i + 1) + ".w",
                               &connectors[static_cast<std::size_t>(i)].w_sq});
            }
        }
        if (config.kind == ModelKind::kUnetUnarySse) {
            for (int i = 0; i < 9; ++i) {
                out.push_back({"sse" + std::to_string(i + 1) + ".w", &unary[static_cast<std::size_t>(i)].w_sq});
            }
        }
        if (config.kind == ModelKind::kMsdn) {
            for (int i = 0; i < 4; ++i) {
                const std::string p = "det.adapt" + std::to_string(i + 1);
                out.push_back({p + ".weight", &adapters[static_cast<std::size_t>(i)].weight});
                out.push_back({p + ".bias", &adapters[static_cast<std::size_t>(i)].bias});
            }
            for (int i = 0; i < 4; ++i) {
                out.push_back({"head.cls" + std::to_string(i + 1) + ".weight",
                               &head.cls_tower[static_cast<std::size_t>(i)].weight});
                out.push_back({"head.cls" + std::to_string(i + 1) + ".bias",
                               &head.cls_tower[static_cast<std::size_t>(i)].bias});
            }
            out.push_back({"head.cls_out.weight", &head.cls_out.weight});
            out.push_back({"head.cls_out.bias", &head.cls_out.bias});
            for (int i = 0; i < 4; ++i) {
                out.push_back({"head.box" + std::to_string(i + 1) + ".weight",
                               &head.box_tower[static_cast<std::size_t>(i)].weight});
                out.push_back({"head.box" + std::to_string(i + 1) + ".bias",
                               &head.box_tower[static_cast<std::size_t>(i)].bias});
            }
            out.push_back({"head.box_out.weight", &head.box_out.weight});
            out.push_back({"head.box_out.bias", &head.box_out.bias});
        }
        return out;
    }

    // Parameters plus BatchNorm running statistics: everything a checkpoint
    // must restore.
    std::vector<NamedParam<T>> state_tensors() {
        std::vector<NamedParam<T>> out = parameters();
        std::vector<NamedParam<T>> stats;
        collect_subnet(stats, seg, "seg", true);
        if (has_dual_network()) collect_subnet(stats, det, "det", true);
        out.insert(out.end(), stats.begin(), stats.end());
        return out;
    }

    enum class Route { kStrong, kWeak };

    // Parameter groups by data route; the optimizer steps exactly the group
    // a batch exercised, so weak batches cannot move segmentation weights.
    std::vector<NamedParam<T>> route_params(Route route) {
        std::vector<NamedParam<T>> out;
        for (auto& p : parameters()) {
            const bool enc_or_bott = p.name.rfind("det.enc", 0) == 0 || p.name.rfind("det.bott", 0) == 0;
            bool in_route;
            if (route == Route::kStrong) {
                in_route = p.name.rfind("seg.", 0) == 0 || p.name.rfind("su.", 0) == 0 ||
                           p.name.rfind("conn", 0) == 0 || p.name.rfind("sse", 0) == 0 || enc_or_bott;
            } else {
                in_route = p.name.rfind("det.", 0) == 0 || p.name.rfind("head.", 0) == 0;
            }
            if (in_route) out.push_back(p);
        }
        return out;
    }

    void zero_grad() {
        for (auto& p : parameters()) p.tensor->zero_grad();
    }

    ModelConfig config;
    SubNetwork<T> seg;
    SubNetwork<T> det;                       // dual kinds only
    std::vector<SseWeights<T>> connectors;   // 5 for dual kinds
    std::vector<SseWeights<T>> unary;        // 9 for the unary-sSE baseline
    ConvLayer<T> seg_unit;
    std::array<ConvLayer<T>, 4> adapters;    // msdn only
    DetectionHead<T> head;                   // msdn only

private:
    static std::uint64_t drop_seed(std::uint64_t iter_seed, int subnet, int stage) {
        return derive_seed(iter_seed, "drop", static_cast<std::uint64_t>(subnet),
                           static_cast<std::uint64_t>(stage));
    }

    void check_input(const Tensor<T>& images) const {
        if (images.rank() != 4 || images.dim(1) != 1) {
            throw DimensionError("model input must be [N,1,H,W], got " + shape_str(images.shape()));
        }
        if (images.dim(2) % 16 != 0 || images.dim(3) % 16 != 0) {
            throw DimensionError("input spatial dims must be divisible by 16, got " + shape_str(images.shape()));
        }
    }

    static void collect_stage(std::vector<NamedParam<T>>& out, ConvBnStage<T>& st, const std::string& prefix,
                              bool stats_only) {
        if (!stats_only) {
            out.push_back({prefix + ".conv1.weight", &st.conv1.weight});
            out.push_back({prefix + ".conv1.bias", &st.conv1.bias});
            out.push_back({prefix + ".bn1.gamma", &st.bn1.gamma});
            out.push_back({prefix + ".bn1.beta", &st.bn1.beta});
            out.push_back({prefix + ".conv2.weight", &st.conv2.weight});
            out.push_back({prefix + ".conv2.bias", &st.conv2.bias});
            out.push_back({prefix + ".bn2.gamma", &st.bn2.gamma});
            out.push_back({prefix + ".bn2.beta", &st.bn2.beta});
        } else {
            out.push_back({prefix + ".bn1.running_mean", &st.bn1.running_mean});
            out.push_back({prefix + ".bn1.running_var", &st.bn1.running_var});
            out.push_back({prefix + ".bn2.running_mean", &st.bn2.running_mean});
            out.push_back({prefix + ".bn2.running_var", &st.bn2.running_var});
        }
    }

    static void collect_subnet(std::vector<NamedParam<T>>& out, SubNetwork<T>& net, const std::string& prefix,
                               bool stats_only) {
        const std::array<std::string, 9> names = {"enc1", "enc2", "enc3", "enc4", "bott",
                                                  "dec4", "dec3", "dec2", "dec1"};
        for (int i = 0; i < 9; ++i) {
            collect_stage(out, net.stages[static_cast<std::size_t>(i)],
                          prefix + "." + names[static_cast<std::size_t>(i)], stats_only);
        }
        if (!stats_only) {
            const std::array<std::string, 4> up_names = {"up4", "up3", "up2", "up1"};
            for (int i = 0; i < 4; ++i) {
                out.push_back({prefix + "." + up_names[static_cast<std::size_t>(i)] + ".weight",
                               &net.ups[static_cast<std::size_t>(i)].weight});
                out.push_back({prefix + "." + up_names[static_cast<std::size_t>(i)] + ".bias",
                               &net.ups[static_cast<std::size_t>(i)].bias});
            }
        }
    }
};

}  // namespace msdn
