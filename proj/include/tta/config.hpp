#pragma once

// Experiment configuration: one JSON document with sections. A user file is
// merged onto the built-in profile (desk or paper); keys the profile does not
// know are rejected with their full path.

#include <algorithm>
#include <array>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "tta/augment.hpp"
#include "tta/error.hpp"
#include "tta/nn/networks.hpp"
#include "tta/preprocess.hpp"
#include "tta/synthetic.hpp"
#include "tta/training.hpp"
#include "tta/tta.hpp"

namespace tta::config {

using json = nlohmann::json;
namespace fs = std::filesystem;

// ---------------------------------------------------------------- profiles

inline json augment_json(double translate_px, double elastic_sigma, double elastic_alpha, bool intensity) {
    auto range = [](bool on, double lo, double hi) {
        return json{{"enabled", on}, {"probability", 0.25}, {"lo", lo}, {"hi", hi}};
    };
    auto flag = [] { return json{{"enabled", false}, {"probability", 0.25}}; };
    return {{"translation", range(true, -translate_px, translate_px)},
            {"rotation", range(true, -10.0, 10.0)},
            {"scale", range(true, 0.9, 1.1)},
            {"elastic", {{"enabled", true}, {"probability", 0.25}, {"sigma", elastic_sigma}, {"alpha", elastic_alpha}}},
            {"rot90", flag()},
            {"flip_lr", flag()},
            {"flip_ud", flag()},
            {"gamma", range(intensity, 0.5, 2.0)},
            {"brightness", range(intensity, 0.0, 0.1)},
            {"noise", {{"enabled", intensity}, {"probability", 0.25}, {"stddev", 0.1}}}};
}

inline json structure_json(int count_min, int count_max, std::vector<double> rmin, std::vector<double> rmax,
                           double jitter) {
    return {{"count_min", count_min}, {"count_max", count_max},      {"radius_min", rmin},
            {"radius_max", rmax},     {"center", {0.5, 0.5, 0.5}},   {"jitter", jitter}};
}

inline json domain_json(const std::string& name, std::vector<double> mean, double gamma, double bias, double noise,
                        bool invert, int train, int val, int test) {
    return {{"name", name},
            {"mean", mean},
            {"stddev", std::vector<double>(mean.size(), 0.04)},
            {"gamma", gamma},
            {"bias_amplitude", bias},
            {"bias_scale", 8.0},
            {"noise_std", noise},
            {"invert", invert},
            {"counts", {{"train", train}, {"val", val}, {"test", test}}}};
}

inline json unet_json(int levels, int base_width) {
    return {{"levels", levels}, {"base_width", base_width}, {"convs_per_block", 2}};
}

inline json train_json(long iterations, int batch, long val_every) {
    return {{"iterations", iterations}, {"batch_size", batch}, {"learning_rate", 1e-3}, {"val_every", val_every}};
}

/// Small enough to run end to end on one CPU core in well under half an hour.
inline json desk_profile() {
    json j;
    j["seed"] = 20240;
    j["workers"] = 1;
    j["dataset"] = {
        {"anatomy",
         {{"num_labels", 4},
          {"shape", {16, 40, 40}},
          {"spacing", {2.0, 0.8, 0.8}},
          {"structures",
           {structure_json(1, 1, {5, 13, 13}, {6.5, 17, 17}, 1.5),
            structure_json(1, 1, {2.5, 6, 6}, {4, 9, 9}, 3.0),
            structure_json(1, 1, {1.5, 3, 3}, {2.5, 5, 5}, 3.0)}}}},
        {"canonical", {{"shape", {16, 32, 32}}, {"spacing", {2.0, 1.0, 1.0}}}},
        {"source_domain", "SD"},
        {"domains",
         {domain_json("SD", {0.05, 0.35, 0.65, 0.9}, 1.0, 0.1, 0.02, false, 20, 4, 4),
          domain_json("TD-small", {0.05, 0.35, 0.65, 0.9}, 3.0, 0.1, 0.02, false, 0, 0, 8),
          domain_json("TD-large", {0.05, 0.35, 0.65, 0.9}, 1.0, 0.1, 0.02, true, 0, 0, 8)}}};
    j["segmenter"] = {{"normalizer", {{"hidden", 16}, {"kernel", 3}}},
                      {"unet", unet_json(3, 16)},
                      {"train", train_json(2000, 16, 200)},
                      {"augment", augment_json(3.0, 4.0, 40.0, true)}};
    j["dae"] = {{"unet", unet_json(3, 12)},
                {"train", train_json(1500, 1, 250)},
                {"noise", {{"n1_max", 120}, {"n2_max", 7}, {"val_corruptions", 10}}},
                {"augment", augment_json(3.0, 4.0, 40.0, false)}};
    j["tta"] = {{"iterations", 100}, {"fast_iterations", 20}, {"refresh_every", 25}, {"batch_size", 16},
                {"learning_rate", 1e-3}, {"alpha", 1.0},      {"beta", 0.25}};
    j["eval"] = {{"n_perm", 10000},
                 {"seed", 7},
                 {"domains", {"SD", "TD-small", "TD-large"}},
                 {"methods", {"baseline", "postproc:1", "postproc:10", "tta", "tta-fast", "tta-dae", "oracle"}}};
    return j;
}

/// Iteration counts, widths and noise levels of the original full-scale
/// setting on the same synthetic task. Takes days on a CPU.
inline json paper_profile() {
    json j = desk_profile();
    j["dataset"]["anatomy"]["shape"] = {64, 160, 160};
    j["dataset"]["anatomy"]["spacing"] = {2.0, 0.8, 0.8};
    j["dataset"]["anatomy"]["structures"] = {structure_json(1, 1, {20, 52, 52}, {26, 68, 68}, 6.0),
                                             structure_json(1, 1, {10, 24, 24}, {16, 36, 36}, 12.0),
                                             structure_json(1, 2, {6, 12, 12}, {10, 20, 20}, 24.0)};
    j["dataset"]["canonical"] = {{"shape", {64, 128, 128}}, {"spacing", {2.0, 1.0, 1.0}}};
    j["dataset"]["domains"][0]["counts"] = {{"train", 20}, {"val", 5}, {"test", 10}};
    j["dataset"]["domains"][1]["counts"] = {{"train", 0}, {"val", 0}, {"test", 20}};
    j["dataset"]["domains"][2]["counts"] = {{"train", 0}, {"val", 0}, {"test", 20}};
    j["segmenter"]["unet"] = unet_json(4, 16);
    j["segmenter"]["train"] = train_json(50000, 16, 500);
    j["segmenter"]["augment"] = augment_json(10.0, 20.0, 1000.0, true);
    j["dae"]["unet"] = unet_json(4, 16);
    j["dae"]["train"] = train_json(50000, 1, 500);
    j["dae"]["noise"] = {{"n1_max", 200}, {"n2_max", 20}, {"val_corruptions", 50}};
    j["dae"]["augment"] = augment_json(10.0, 20.0, 1000.0, false);
    j["tta"]["iterations"] = 500;
    j["tta"]["fast_iterations"] = 100;
    j["eval"]["methods"] = {"baseline", "postproc:1", "postproc:10", "tta", "tta-fast", "tta-dae", "adapt-all", "oracle"};
    return j;
}

inline json profile(const std::string& name) {
    if (name == "desk") return desk_profile();
    if (name == "paper") return paper_profile();
    throw ConfigError("unknown profile '" + name + "' (expected desk or paper)");
}

// ------------------------------------------------------------------ merge

namespace detail {

/// Array elements that are objects are checked against the first element of
/// the profile's array (domains, structures).
inline void merge_checked(json& base, const json& user, const std::string& path) {
    if (!user.is_object()) throw ConfigError(path + ": expected an object");
    for (auto it = user.begin(); it != user.end(); ++it) {
        const std::string key_path = path.empty() ? it.key() : path + "." + it.key();
        if (!base.contains(it.key())) throw ConfigError("unknown configuration key '" + key_path + "'");
        json& slot = base[it.key()];
        if (slot.is_object()) {
            merge_checked(slot, it.value(), key_path);
        } else if (slot.is_array() && !slot.empty() && slot.front().is_object()) {
            if (!it.value().is_array()) throw ConfigError(key_path + ": expected an array");
            const json tmpl = slot.front();
            json out = json::array();
            for (std::size_t i = 0; i < it.value().size(); ++i) {
                json elem = i < slot.size() ? slot[i] : tmpl;
                merge_checked(elem, it.value()[i], key_path + "[" + std::to_string(i) + "]");
                out.push_back(std::move(elem));
            }
            slot = std::move(out);
        } else {
            slot = it.value();
        }
    }
}

}  // namespace detail

/// Profile defaults with `user` merged on top.
inline json merged(const std::string& profile_name, const json& user) {
    json base = profile(profile_name);
    detail::merge_checked(base, user, "");
    return base;
}

inline json load_file(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path.string());
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError("config file " + path.string() + ": " + e.what());
    }
}

// ---------------------------------------------------------------- typed view

struct DatasetConfig {
    synth::AnatomySpec anatomy;
    CanonicalGrid canonical;
    std::string source_domain;
    std::vector<synth::DomainEntry> domains;
};

struct SegmenterConfig {
    nn::NormalizerArch normalizer;
    nn::UNetArch unet;
    train::TrainConfig train;
    aug::AugmentConfig augment;
};

struct DaeConfig {
    nn::UNetArch unet;
    train::TrainConfig train;
    train::NoiseConfig noise;
    aug::AugmentConfig augment;
};

struct EvalConfig {
    long n_perm = 10000;
    std::uint64_t seed = 0;
    std::vector<std::string> domains;
    std::vector<std::string> methods;
};

struct ExperimentConfig {
    std::uint64_t seed = 0;
    int workers = 1;
    DatasetConfig dataset;
    SegmenterConfig segmenter;
    DaeConfig dae;
    adaptation::TTAConfig tta;
    EvalConfig eval;
    json raw;  // merged document, used for stage hashes
};

namespace detail {

template <class T>
T get(const json& j, const std::string& key, const std::string& path) {
    try {
        return j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ConfigError(path + "." + key + ": " + e.what());
    }
}

inline std::array<double, 3> triple(const json& j, const std::string& key, const std::string& path) {
    const auto v = get<std::vector<double>>(j, key, path);
    if (v.size() != 3) throw ConfigError(path + "." + key + ": expected three values");
    return {v[0], v[1], v[2]};
}

inline aug::RangeAug range_aug(const json& j, const std::string& path) {
    return {get<bool>(j, "enabled", path), get<double>(j, "probability", path), get<double>(j, "lo", path),
            get<double>(j, "hi", path)};
}

inline aug::FlagAug flag_aug(const json& j, const std::string& path) {
    return {get<bool>(j, "enabled", path), get<double>(j, "probability", path)};
}

inline aug::AugmentConfig augment(const json& j, const std::string& path) {
    aug::AugmentConfig a;
    a.translation = range_aug(j.at("translation"), path + ".translation");
    a.rotation = range_aug(j.at("rotation"), path + ".rotation");
    a.scale = range_aug(j.at("scale"), path + ".scale");
    const json& e = j.at("elastic");
    a.elastic = {get<bool>(e, "enabled", path + ".elastic"), get<double>(e, "probability", path + ".elastic"),
                 get<double>(e, "sigma", path + ".elastic"), get<double>(e, "alpha", path + ".elastic")};
    a.rot90 = flag_aug(j.at("rot90"), path + ".rot90");
    a.flip_lr = flag_aug(j.at("flip_lr"), path + ".flip_lr");
    a.flip_ud = flag_aug(j.at("flip_ud"), path + ".flip_ud");
    a.gamma = range_aug(j.at("gamma"), path + ".gamma");
    a.brightness = range_aug(j.at("brightness"), path + ".brightness");
    const json& n = j.at("noise");
    a.noise = {get<bool>(n, "enabled", path + ".noise"), get<double>(n, "probability", path + ".noise"),
               get<double>(n, "stddev", path + ".noise")};
    try {
        a.validate();
    } catch (const ArgumentError& err) {
        throw ConfigError(path + ": " + err.what());
    }
    return a;
}

inline train::TrainConfig train_cfg(const json& j, const std::string& path, std::uint64_t seed) {
    train::TrainConfig t;
    t.iterations = get<long>(j, "iterations", path);
    t.batch_size = get<int>(j, "batch_size", path);
    t.learning_rate = get<double>(j, "learning_rate", path);
    t.val_every = get<long>(j, "val_every", path);
    t.seed = seed;
    try {
        t.validate();
    } catch (const ConfigError& err) {
        throw ConfigError(path + ": " + err.what());
    }
    return t;
}

inline nn::UNetArch unet(const json& j, const std::string& path, int dims, int in_ch, int out_ch) {
    nn::UNetArch a;
    a.spatial_dims = dims;
    a.in_channels = in_ch;
    a.out_channels = out_ch;
    a.levels = get<int>(j, "levels", path);
    a.base_width = get<int>(j, "base_width", path);
    a.convs_per_block = get<int>(j, "convs_per_block", path);
    if (a.levels < 1 || a.base_width < 1 || a.convs_per_block < 1)
        throw ConfigError(path + ": levels, base_width and convs_per_block must be positive");
    return a;
}

inline bool valid_method(const std::string& m) {
    static const std::vector<std::string> plain{"baseline", "tta", "tta-fast", "tta-dae", "adapt-all", "oracle"};
    if (std::find(plain.begin(), plain.end(), m) != plain.end()) return true;
    if (m.rfind("postproc:", 0) != 0) return false;
    const std::string k = m.substr(9);
    return !k.empty() && k.size() < 4 && std::all_of(k.begin(), k.end(), ::isdigit) && std::stoi(k) >= 1;
}

}  // namespace detail

/// Typed view of a merged document; raises ConfigError naming the key path.
inline ExperimentConfig parse(const json& j) {
    using detail::get;
    ExperimentConfig c;
    c.raw = j;
    c.seed = get<std::uint64_t>(j, "seed", "");
    c.workers = get<int>(j, "workers", "");
    if (c.workers < 1) throw ConfigError("workers: must be at least 1");

    const json& ds = j.at("dataset");
    const json& an = ds.at("anatomy");
    auto& a = c.dataset.anatomy;
    a.num_labels = get<int>(an, "num_labels", "dataset.anatomy");
    const auto shape = get<std::vector<int>>(an, "shape", "dataset.anatomy");
    if (shape.size() != 3) throw ConfigError("dataset.anatomy.shape: expected three values");
    a.shape = {shape[0], shape[1], shape[2]};
    const auto sp = detail::triple(an, "spacing", "dataset.anatomy");
    a.spacing = {sp[0], sp[1], sp[2]};
    const json& structs = an.at("structures");
    for (std::size_t i = 0; i < structs.size(); ++i) {
        const std::string path = "dataset.anatomy.structures[" + std::to_string(i) + "]";
        const json& s = structs[i];
        synth::StructureSpec st;
        st.count_min = get<int>(s, "count_min", path);
        st.count_max = get<int>(s, "count_max", path);
        const auto rmin = detail::triple(s, "radius_min", path), rmax = detail::triple(s, "radius_max", path);
        const auto ctr = detail::triple(s, "center", path);
        st.radius_min = {rmin[0], rmin[1], rmin[2]};
        st.radius_max = {rmax[0], rmax[1], rmax[2]};
        st.center = {ctr[0], ctr[1], ctr[2]};
        st.jitter = get<double>(s, "jitter", path);
        a.structures.push_back(st);
    }
    try {
        a.validate();
    } catch (const ArgumentError& e) {
        throw ConfigError(std::string("dataset.anatomy: ") + e.what());
    }
    const json& can = ds.at("canonical");
    const auto cs = get<std::vector<int>>(can, "shape", "dataset.canonical");
    if (cs.size() != 3) throw ConfigError("dataset.canonical.shape: expected three values");
    const auto csp = detail::triple(can, "spacing", "dataset.canonical");
    c.dataset.canonical.shape = {cs[0], cs[1], cs[2]};
    c.dataset.canonical.spacing = {csp[0], csp[1], csp[2]};
    c.dataset.source_domain = get<std::string>(ds, "source_domain", "dataset");

    const json& doms = ds.at("domains");
    for (std::size_t i = 0; i < doms.size(); ++i) {
        const std::string path = "dataset.domains[" + std::to_string(i) + "]";
        const json& d = doms[i];
        synth::DomainEntry e;
        e.spec.name = get<std::string>(d, "name", path);
        e.spec.mean = get<std::vector<double>>(d, "mean", path);
        e.spec.stddev = get<std::vector<double>>(d, "stddev", path);
        e.spec.gamma = get<double>(d, "gamma", path);
        e.spec.bias_amplitude = get<double>(d, "bias_amplitude", path);
        e.spec.bias_scale = get<double>(d, "bias_scale", path);
        e.spec.noise_std = get<double>(d, "noise_std", path);
        e.spec.invert = get<bool>(d, "invert", path);
        const json& n = d.at("counts");
        e.counts = {get<int>(n, "train", path + ".counts"), get<int>(n, "val", path + ".counts"),
                    get<int>(n, "test", path + ".counts")};
        try {
            e.spec.validate();
        } catch (const ArgumentError& err) {
            throw ConfigError(path + ": " + err.what());
        }
        if (static_cast<int>(e.spec.mean.size()) != a.num_labels)
            throw ConfigError(path + ".mean: needs one entry per label");
        for (const auto& prev : c.dataset.domains)
            if (prev.spec.name == e.spec.name) throw ConfigError(path + ".name: duplicate domain '" + e.spec.name + "'");
        c.dataset.domains.push_back(e);
    }
    const auto src = std::find_if(c.dataset.domains.begin(), c.dataset.domains.end(),
                                  [&](const auto& d) { return d.spec.name == c.dataset.source_domain; });
    if (src == c.dataset.domains.end())
        throw ConfigError("dataset.source_domain: no domain named '" + c.dataset.source_domain + "'");
    if (src->counts.train < 1 || src->counts.val < 1)
        throw ConfigError("dataset.domains: source domain needs train and val subjects");

    const json& seg = j.at("segmenter");
    c.segmenter.normalizer.hidden = get<int>(seg.at("normalizer"), "hidden", "segmenter.normalizer");
    c.segmenter.normalizer.kernel = get<int>(seg.at("normalizer"), "kernel", "segmenter.normalizer");
    if (c.segmenter.normalizer.hidden < 1 || c.segmenter.normalizer.kernel < 1 || c.segmenter.normalizer.kernel % 2 == 0)
        throw ConfigError("segmenter.normalizer: hidden must be positive and kernel odd");
    c.segmenter.unet = detail::unet(seg.at("unet"), "segmenter.unet", 2, 1, a.num_labels);
    c.segmenter.train = detail::train_cfg(seg.at("train"), "segmenter.train", derive_seed(c.seed, "segmenter"));
    c.segmenter.augment = detail::augment(seg.at("augment"), "segmenter.augment");

    const json& dae = j.at("dae");
    c.dae.unet = detail::unet(dae.at("unet"), "dae.unet", 3, a.num_labels, a.num_labels);
    c.dae.train = detail::train_cfg(dae.at("train"), "dae.train", derive_seed(c.seed, "dae"));
    if (c.dae.train.batch_size != 1) throw ConfigError("dae.train.batch_size: the autoencoder trains on one volume");
    const json& nz = dae.at("noise");
    c.dae.noise = {get<int>(nz, "n1_max", "dae.noise"), get<int>(nz, "n2_max", "dae.noise"),
                   get<int>(nz, "val_corruptions", "dae.noise")};
    try {
        c.dae.noise.validate();
    } catch (const ConfigError& err) {
        throw ConfigError(std::string("dae.noise: ") + err.what());
    }
    c.dae.augment = detail::augment(dae.at("augment"), "dae.augment");

    const json& t = j.at("tta");
    c.tta.iterations = get<long>(t, "iterations", "tta");
    c.tta.fast_iterations = get<long>(t, "fast_iterations", "tta");
    c.tta.refresh_every = get<long>(t, "refresh_every", "tta");
    c.tta.batch_size = get<int>(t, "batch_size", "tta");
    c.tta.learning_rate = get<double>(t, "learning_rate", "tta");
    c.tta.alpha = get<double>(t, "alpha", "tta");
    c.tta.beta = get<double>(t, "beta", "tta");
    c.tta.validate();

    const json& ev = j.at("eval");
    c.eval.n_perm = get<long>(ev, "n_perm", "eval");
    c.eval.seed = get<std::uint64_t>(ev, "seed", "eval");
    c.eval.domains = get<std::vector<std::string>>(ev, "domains", "eval");
    c.eval.methods = get<std::vector<std::string>>(ev, "methods", "eval");
    if (c.eval.n_perm < 1) throw ConfigError("eval.n_perm: must be positive");
    for (const auto& d : c.eval.domains)
        if (std::none_of(c.dataset.domains.begin(), c.dataset.domains.end(),
                         [&](const auto& e) { return e.spec.name == d; }))
            throw ConfigError("eval.domains: unknown domain '" + d + "'");
    for (const auto& m : c.eval.methods)
        if (!detail::valid_method(m)) throw ConfigError("eval.methods: unknown method '" + m + "'");
    return c;
}

/// Profile + optional file + command-line overrides, parsed.
inline ExperimentConfig load(const std::string& profile_name, const std::optional<fs::path>& file,
                             std::optional<std::uint64_t> seed, std::optional<int> workers) {
    json user = file ? load_file(*file) : json::object();
    json j = merged(profile_name, user);
    if (seed) j["seed"] = *seed;
    if (workers) j["workers"] = *workers;
    return parse(j);
}

}  // namespace tta::config
