#include <fstream>
#include <set>

#include "msdn/trainer.hpp"

namespace msdn {

using nlohmann::json;

json train_config_to_json(const TrainConfig& cfg) {
    json j;
    j["lr"] = cfg.lr;
    j["batch_size"] = cfg.batch_size;
    j["plateau_factor"] = cfg.plateau_factor;
    j["plateau_patience"] = cfg.plateau_patience;
    j["early_stop_patience"] = cfg.early_stop_patience;
    j["max_epochs"] = cfg.max_epochs;
    j["dropout"] = cfg.dropout;
    j["model"] = cfg.model;
    j["classes"] = cfg.classes;
    j["n_strong"] = cfg.n_strong;
    j["n_weak"] = cfg.n_weak;
    j["seed"] = cfg.seed;
    j["image_size"] = cfg.image_size;
    j["crop_size"] = cfg.crop_size;
    j["base_channels"] = cfg.base_channels;
    j["head_channels"] = cfg.head_channels;
    j["augment"] = cfg.augment;
    j["noise_sigma"] = cfg.noise_sigma;
    j["dice_smooth"] = cfg.dice_smooth;
    j["strong_boxes_to_detection"] = cfg.strong_boxes_to_detection;
    j["improve_tol"] = cfg.improve_tol;
    return j;
}

TrainConfig train_config_from_json(const json& j) {
    static const std::set<std::string> known = {
        "lr",          "batch_size",    "plateau_factor", "plateau_patience", "early_stop_patience",
        "max_epochs",  "dropout",       "model",          "classes",          "n_strong",
        "n_weak",      "seed",          "image_size",     "crop_size",        "base_channels",
        "head_channels", "augment",     "noise_sigma",    "dice_smooth",      "strong_boxes_to_detection",
        "improve_tol"};
    for (auto it = j.begin(); it != j.end(); ++it) {
        if (!known.count(it.key())) throw ConfigError("unknown config key '" + it.key() + "'");
    }

    TrainConfig cfg;
    try {
        if (j.contains("lr")) cfg.lr = j.at("lr").get<double>();
        if (j.contains("batch_size")) cfg.batch_size = j.at("batch_size").get<int>();
        if (j.contains("plateau_factor")) cfg.plateau_factor = j.at("plateau_factor").get<double>();
        if (j.contains("plateau_patience")) cfg.plateau_patience = j.at("plateau_patience").get<int>();
        if (j.contains("early_stop_patience")) cfg.early_stop_patience = j.at("early_stop_patience").get<int>();
        if (j.contains("max_epochs")) cfg.max_epochs = j.at("max_epochs").get<int>();
        if (j.contains("dropout")) cfg.dropout = j.at("dropout").get<double>();
        if (j.contains("model")) cfg.model = j.at("model").get<std::string>();
        if (j.contains("classes")) cfg.classes = j.at("classes").get<int>();
        if (j.contains("n_strong")) cfg.n_strong = j.at("n_strong").get<int>();
        if (j.contains("n_weak")) cfg.n_weak = j.at("n_weak").get<int>();
        if (j.contains("seed")) cfg.seed = j.at("seed").get<std::uint64_t>();
        if (j.contains("image_size")) cfg.image_size = j.at("image_size").get<std::int64_t>();
        if (j.contains("crop_size")) cfg.crop_size = j.at("crop_size").get<std::int64_t>();
        if (j.contains("base_channels")) cfg.base_channels = j.at("base_channels").get<std::int64_t>();
        if (j.contains("head_channels")) cfg.head_channels = j.at("head_channels").get<std::int64_t>();
        if (j.contains("augment")) cfg.augment = j.at("augment").get<bool>();
        if (j.contains("noise_sigma")) cfg.noise_sigma = j.at("noise_sigma").get<double>();
        if (j.contains("dice_smooth")) cfg.dice_smooth = j.at("dice_smooth").get<double>();
        if (j.contains("strong_boxes_to_detection")) {
            cfg.strong_boxes_to_detection = j.at("strong_boxes_to_detection").get<bool>();
        }
        if (j.contains("improve_tol")) cfg.improve_tol = j.at("improve_tol").get<double>();
    } catch (const json::exception& e) {
        throw ConfigError(std::string("bad config value: ") + e.what());
    }
    cfg.validate();
    return cfg;
}

TrainConfig load_train_config(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config file " + path.string());
    json j;
    try {
        is >> j;
    } catch (const json::exception& e) {
        throw ConfigError("malformed config file " + path.string() + ": " + e.what());
    }
    return train_config_from_json(j);
}

}  // namespace msdn
