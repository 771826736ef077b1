#pragma once

#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "msdn/errors.hpp"
#include "msdn/model.hpp"
#include "msdn/serialize.hpp"

// Checkpoint container: header "MSDC", u32 entry count, then repeated
// (u16 name-length, name bytes, tensor in the MSDT layout). Entry names are
// the model's hierarchical parameter paths plus optional "opt.", "state."
// and "meta." entries for resumable training.

namespace msdn {

template <class T>
using CheckpointEntries = std::vector<std::pair<std::string, Tensor<T>>>;

template <class T>
void write_checkpoint(const std::string& path, const CheckpointEntries<T>& entries) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("cannot open " + path + " for writing");
    os.write("MSDC", 4);
    detail::put_u32(os, static_cast<std::uint32_t>(entries.size()));
    for (const auto& [name, tensor] : entries) {
        detail::put_u16(os, static_cast<std::uint16_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        write_tensor(os, tensor);
    }
    if (!os) throw DataError("write failed for " + path);
}

template <class T>
CheckpointEntries<T> read_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open " + path);
    char magic[4];
    detail::get_bytes(is, magic, 4, "checkpoint magic");
    if (std::memcmp(magic, "MSDC", 4) != 0) {
        throw FormatError("bad checkpoint magic in " + path + " at byte offset 0");
    }
    const std::uint32_t count = detail::get_u32(is, "entry count");
    CheckpointEntries<T> entries;
    entries.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::uint16_t len = detail::get_u16(is, "name length");
        std::string name(len, '\0');
        detail::get_bytes(is, name.data(), len, "entry name");
        entries.emplace_back(std::move(name), read_tensor<T>(is));
    }
    return entries;
}

// Applies model entries by name. Every model tensor must be present with a
// matching shape; entry names outside the model must use a recognized prefix
// (opt. / state. / meta.), otherwise the file does not match this model.
template <class T>
void load_model_state(MsdnModel<T>& model, const CheckpointEntries<T>& entries) {
    std::map<std::string, const Tensor<T>*> by_name;
    for (const auto& [name, tensor] : entries) by_name[name] = &tensor;

    for (auto& p : model.state_tensors()) {
        auto it = by_name.find(p.name);
        if (it == by_name.end()) {
            throw SchemaError("checkpoint is missing tensor '" + p.name + "' for model kind " +
                              model_kind_name(model.config.kind));
        }
        if (it->second->shape() != p.tensor->shape()) {
            throw SchemaError("checkpoint tensor '" + p.name + "' has shape " + shape_str(it->second->shape()) +
                              ", model expects " + shape_str(p.tensor->shape()));
        }
        std::copy(it->second->data(), it->second->data() + it->second->numel(), p.tensor->data());
        by_name.erase(it);
    }
    for (const auto& [name, tensor] : by_name) {
        (void)tensor;
        if (name.rfind("opt.", 0) != 0 && name.rfind("state.", 0) != 0 && name.rfind("meta.", 0) != 0) {
            throw SchemaError("unknown parameter name '" + name + "' in checkpoint");
        }
    }
}

}  // namespace msdn
