#include "msdn/manifest.hpp"

#include <fstream>

#include "json.hpp"
#include "msdn/errors.hpp"
#include "msdn/serialize.hpp"
#include "msdn/tensor.hpp"

namespace msdn {

namespace {

using nlohmann::json;

json box_to_json(const Box& b) {
    return json{{"x_min", b.x_min}, {"y_min", b.y_min}, {"x_max", b.x_max}, {"y_max", b.y_max},
                {"class_id", b.class_id}};
}

Box box_from_json(const json& j) {
    Box b;
    b.x_min = j.at("x_min").get<double>();
    b.y_min = j.at("y_min").get<double>();
    b.x_max = j.at("x_max").get<double>();
    b.y_max = j.at("y_max").get<double>();
    b.class_id = j.at("class_id").get<int>();
    if (!b.valid()) throw DataError("invalid box in manifest");
    return b;
}

void save_sample_files(const Sample& s, const std::filesystem::path& dir) {
    Tensor<float> img = Tensor<float>::zeros({1, s.image.h, s.image.w});
    for (std::size_t i = 0; i < s.image.v.size(); ++i) img.data()[i] = static_cast<float>(s.image.v[i]);
    save_tensor_file((dir / "images" / (s.id + ".bin")).string(), img);
    if (s.mask.has_value()) {
        Tensor<float> m = Tensor<float>::zeros({s.mask->h, s.mask->w});
        for (std::size_t i = 0; i < s.mask->v.size(); ++i) m.data()[i] = static_cast<float>(s.mask->v[i]);
        save_tensor_file((dir / "masks" / (s.id + ".bin")).string(), m);
    }
}

json sample_to_json(const Sample& s) {
    json j;
    j["id"] = s.id;
    j["split"] = s.split;
    j["kind"] = s.kind == Kind::kStrong ? "strong" : "weak";
    j["image"] = "images/" + s.id + ".bin";
    if (s.mask.has_value()) j["mask"] = "masks/" + s.id + ".bin";
    json boxes = json::array();
    for (const auto& b : s.boxes) boxes.push_back(box_to_json(b));
    j["boxes"] = boxes;
    return j;
}

Sample sample_from_json(const json& j, const std::filesystem::path& dir) {
    Sample s;
    s.id = j.at("id").get<std::string>();
    s.split = j.at("split").get<std::string>();
    const auto kind = j.at("kind").get<std::string>();
    if (kind == "strong") {
        s.kind = Kind::kStrong;
    } else if (kind == "weak") {
        s.kind = Kind::kWeak;
    } else {
        throw DataError("unknown sample kind '" + kind + "' in manifest");
    }

    const auto img_path = dir / j.at("image").get<std::string>();
    if (!std::filesystem::exists(img_path)) throw DataError("missing image file " + img_path.string());
    const auto img = load_tensor_file<float>(img_path.string());
    if (img.rank() != 3 || img.dim(0) != 1) {
        throw DataError("image tensor for " + s.id + " must be [1,H,W], got " + shape_str(img.shape()));
    }
    s.image.h = img.dim(1);
    s.image.w = img.dim(2);
    s.image.v.assign(img.data(), img.data() + img.numel());

    if (j.contains("mask")) {
        const auto mask_path = dir / j.at("mask").get<std::string>();
        if (!std::filesystem::exists(mask_path)) throw DataError("missing mask file " + mask_path.string());
        const auto m = load_tensor_file<float>(mask_path.string());
        if (m.rank() != 2 || m.dim(0) != s.image.h || m.dim(1) != s.image.w) {
            throw DataError("mask tensor for " + s.id + " must match image dims, got " + shape_str(m.shape()));
        }
        MaskBuf mb{m.dim(0), m.dim(1), {}};
        mb.v.resize(static_cast<std::size_t>(m.numel()));
        for (std::int64_t i = 0; i < m.numel(); ++i) {
            mb.v[static_cast<std::size_t>(i)] = static_cast<std::int32_t>(std::lround(m.data()[i]));
        }
        s.mask = std::move(mb);
    }

    for (const auto& jb : j.at("boxes")) s.boxes.push_back(box_from_json(jb));
    return s;
}

}  // namespace

void save_dataset(const Dataset& ds, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir / "images");
    std::filesystem::create_directories(dir / "masks");

    json j;
    j["version"] = ds.version;
    j["classes"] = ds.classes;
    j["size"] = ds.size;
    j["stats"] = json{{"mean", ds.stats.mean}, {"std", ds.stats.stddev}};
    json samples = json::array();
    for (const auto* group : {&ds.train, &ds.val, &ds.test}) {
        for (const auto& s : *group) {
            save_sample_files(s, dir);
            samples.push_back(sample_to_json(s));
        }
    }
    j["samples"] = samples;

    std::ofstream os(dir / "manifest.json");
    if (!os) throw DataError("cannot write manifest in " + dir.string());
    os << j.dump(2) << "\n";
}

Dataset load_dataset(const std::filesystem::path& dir) {
    const auto manifest_path = dir / "manifest.json";
    std::ifstream is(manifest_path);
    if (!is) throw DataError("cannot open " + manifest_path.string());
    json j;
    try {
        is >> j;
    } catch (const json::exception& e) {
        throw DataError("malformed manifest " + manifest_path.string() + ": " + e.what());
    }

    Dataset ds;
    try {
        ds.version = j.at("version").get<int>();
        ds.classes = j.at("classes").get<int>();
        ds.size = j.at("size").get<std::int64_t>();
        ds.stats.mean = j.at("stats").at("mean").get<double>();
        ds.stats.stddev = j.at("stats").at("std").get<double>();
        for (const auto& js : j.at("samples")) {
            Sample s = sample_from_json(js, dir);
            if (s.split == "train") {
                ds.train.push_back(std::move(s));
            } else if (s.split == "val") {
                ds.val.push_back(std::move(s));
            } else if (s.split == "test") {
                ds.test.push_back(std::move(s));
            } else {
                throw DataError("unknown split '" + s.split + "' in manifest");
            }
        }
    } catch (const json::exception& e) {
        throw DataError("manifest " + manifest_path.string() + " missing fields: " + e.what());
    }
    return ds;
}

}  // namespace msdn
