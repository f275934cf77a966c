#pragma once

// Checkpoint directory layout:
//   params.bin     every tensor as little-endian f32, concatenated
//   manifest.json  {"tensors":[{name, shape, dtype, offset, trainable}],
//                   "global_step", "validation_score", "arch"}
// Several ParamSets (normaliser + segmenter) can share one checkpoint; names
// are unique across them.

#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"

#include "tta/error.hpp"
#include "tta/nn/params.hpp"

namespace tta::nn {

namespace fs = std::filesystem;

struct CheckpointInfo {
    long global_step = 0;
    double validation_score = 0.0;
    nlohmann::json arch = nlohmann::json::object();
};

struct Checkpoint {
    CheckpointInfo info;
    nlohmann::json manifest;
    std::map<std::string, std::vector<float>> tensors;
    std::map<std::string, std::vector<int>> shapes;
};

inline void save_checkpoint(const fs::path& dir, const std::vector<const ParamSet<float>*>& sets,
                            const CheckpointInfo& info) {
    fs::create_directories(dir);
    nlohmann::json entries = nlohmann::json::array();
    std::ofstream bin(dir / "params.bin", std::ios::binary | std::ios::trunc);
    if (!bin) throw IoError("cannot write " + (dir / "params.bin").string());
    std::size_t offset = 0;
    for (const auto* set : sets)
        for (const auto& t : set->tensors) {
            entries.push_back({{"name", t.name},
                               {"shape", t.shape},
                               {"dtype", "f32"},
                               {"offset", offset},
                               {"trainable", t.trainable}});
            bin.write(reinterpret_cast<const char*>(t.value.data()),
                      static_cast<std::streamsize>(t.value.size() * sizeof(float)));
            offset += t.value.size() * sizeof(float);
        }
    if (!bin) throw IoError("short write to " + (dir / "params.bin").string());
    const nlohmann::json manifest = {{"tensors", entries},
                                     {"global_step", info.global_step},
                                     {"validation_score", info.validation_score},
                                     {"arch", info.arch}};
    std::ofstream m(dir / "manifest.json", std::ios::trunc);
    if (!m) throw IoError("cannot write " + (dir / "manifest.json").string());
    m << manifest.dump(2) << '\n';
}

inline Checkpoint load_checkpoint(const fs::path& dir) {
    const fs::path mpath = dir / "manifest.json", bpath = dir / "params.bin";
    if (!fs::exists(mpath)) throw DependencyError("missing checkpoint manifest: " + mpath.string());
    if (!fs::exists(bpath)) throw DependencyError("missing checkpoint payload: " + bpath.string());
    Checkpoint ck;
    try {
        std::ifstream m(mpath);
        ck.manifest = nlohmann::json::parse(m);
        ck.info.global_step = ck.manifest.at("global_step").get<long>();
        ck.info.validation_score = ck.manifest.at("validation_score").get<double>();
        ck.info.arch = ck.manifest.at("arch");
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("checkpoint manifest " + mpath.string() + ": " + e.what());
    }
    std::ifstream bin(bpath, std::ios::binary);
    const std::string raw((std::istreambuf_iterator<char>(bin)), {});
    for (const auto& e : ck.manifest.at("tensors")) {
        const auto name = e.at("name").get<std::string>();
        const auto shape = e.at("shape").get<std::vector<int>>();
        if (e.at("dtype").get<std::string>() != "f32") throw FormatError("checkpoint tensor " + name + ": not f32");
        const auto off = e.at("offset").get<std::size_t>();
        std::size_t n = 1;
        for (int s : shape) n *= static_cast<std::size_t>(s);
        if (off + n * sizeof(float) > raw.size()) throw FormatError("checkpoint tensor " + name + " overruns payload");
        std::vector<float> v(n);
        std::memcpy(v.data(), raw.data() + off, n * sizeof(float));
        ck.tensors.emplace(name, std::move(v));
        ck.shapes.emplace(name, shape);
    }
    return ck;
}

/// Copies every tensor of `set` from the checkpoint; names and shapes must match.
inline void restore_params(const Checkpoint& ck, ParamSet<float>& set) {
    for (auto& t : set.tensors) {
        auto it = ck.tensors.find(t.name);
        if (it == ck.tensors.end()) throw FormatError("checkpoint lacks tensor '" + t.name + "'");
        if (ck.shapes.at(t.name) != t.shape) throw FormatError("checkpoint tensor '" + t.name + "' has wrong shape");
        t.value = it->second;
    }
}

}  // namespace tta::nn
