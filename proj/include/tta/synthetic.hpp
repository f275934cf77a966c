#pragma once

// Synthetic labelled anatomies (unions of axis-aligned ellipsoids jittered
// around fixed centres) rendered under parametric intensity "domains" that
// stand in for scanner and protocol changes.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "tta/error.hpp"
#include "tta/rng.hpp"
#include "tta/volume.hpp"
#include "tta/volume_io.hpp"

namespace tta::synth {

namespace fs = std::filesystem;
using json = nlohmann::json;

struct Vec3 {
    double z = 0.0, y = 0.0, x = 0.0;
    double operator[](int a) const { return a == 0 ? z : a == 1 ? y : x; }
};

/// Shape family of one foreground label. Radii and jitter are in voxels;
/// `center` is a fraction of the grid extent per axis.
struct StructureSpec {
    int count_min = 1;
    int count_max = 1;
    Vec3 radius_min{3, 3, 3};
    Vec3 radius_max{3, 3, 3};
    Vec3 center{0.5, 0.5, 0.5};
    double jitter = 0.0;
};

struct AnatomySpec {
    int num_labels = 2;
    Shape3 shape{32, 32, 32};
    Spacing3 spacing{1, 1, 1};
    std::vector<StructureSpec> structures;  // index i describes label i + 1
    std::uint64_t seed = 0;
    int max_retries = 100;

    void validate() const {
        if (num_labels < 2) throw ArgumentError("anatomy: num_labels must be >= 2");
        if (static_cast<int>(structures.size()) != num_labels - 1)
            throw ArgumentError("anatomy: need one structure descriptor per foreground label");
        if (!shape.positive() || !spacing.positive()) throw ArgumentError("anatomy: bad grid");
        for (const auto& s : structures) {
            if (s.count_min < 1 || s.count_max < s.count_min) throw ArgumentError("anatomy: bad count range");
            for (int a = 0; a < 3; ++a)
                if (s.radius_min[a] <= 0 || s.radius_max[a] < s.radius_min[a])
                    throw ArgumentError("anatomy: bad radius range");
        }
    }
};

struct DomainSpec {
    std::string name = "SD";
    std::vector<double> mean;  // per label, in [0, 1]
    std::vector<double> stddev;
    double gamma = 1.0;
    double bias_amplitude = 0.0;
    double bias_scale = 8.0;  // control-point spacing of the bias field, voxels
    double noise_std = 0.0;
    bool invert = false;

    void validate() const {
        if (mean.empty()) throw ArgumentError("domain '" + name + "': empty mean vector");
        if (stddev.size() != mean.size()) throw ArgumentError("domain '" + name + "': mean/stddev length mismatch");
        for (double m : mean)
            if (m < 0.0 || m > 1.0) throw ArgumentError("domain '" + name + "': mean outside [0, 1]");
        for (double s : stddev)
            if (s < 0.0) throw ArgumentError("domain '" + name + "': negative stddev");
        if (gamma <= 0.0) throw ArgumentError("domain '" + name + "': gamma must be positive");
        if (bias_amplitude < 0.0 || bias_scale <= 0.0 || noise_std < 0.0)
            throw ArgumentError("domain '" + name + "': bad bias/noise parameters");
    }
};

inline void paint_ellipsoid(LabelMap& out, const double c[3], const double r[3], std::uint8_t label) {
    const int z0 = std::max(0, static_cast<int>(std::floor(c[0] - r[0])));
    const int z1 = std::min(out.shape.d - 1, static_cast<int>(std::ceil(c[0] + r[0])));
    const int y0 = std::max(0, static_cast<int>(std::floor(c[1] - r[1])));
    const int y1 = std::min(out.shape.h - 1, static_cast<int>(std::ceil(c[1] + r[1])));
    const int x0 = std::max(0, static_cast<int>(std::floor(c[2] - r[2])));
    const int x1 = std::min(out.shape.w - 1, static_cast<int>(std::ceil(c[2] + r[2])));
    for (int z = z0; z <= z1; ++z)
        for (int y = y0; y <= y1; ++y)
            for (int x = x0; x <= x1; ++x) {
                const double dz = (z - c[0]) / r[0], dy = (y - c[1]) / r[1], dx = (x - c[2]) / r[2];
                if (dz * dz + dy * dy + dx * dx <= 1.0) out.at(z, y, x) = label;
            }
}

/// Deterministic in `spec.seed`. Labels are painted in increasing order, so a
/// later label overwrites an earlier one where they overlap.
inline LabelMap generate_anatomy(const AnatomySpec& spec) {
    spec.validate();
    for (const auto& s : spec.structures)
        for (int a = 0; a < 3; ++a)
            if (s.radius_min[a] > (spec.shape[a] - 1) / 2.0)
                throw GenerationError("anatomy: minimum radius does not fit inside the volume");

    Rng rng(spec.seed);
    for (int attempt = 0; attempt < spec.max_retries; ++attempt) {
        LabelMap out(spec.shape, spec.spacing, spec.num_labels);
        bool placed_all = true;
        for (int k = 1; k < spec.num_labels && placed_all; ++k) {
            const StructureSpec& s = spec.structures[k - 1];
            const long n = uniform_int(rng, s.count_min, s.count_max);
            for (long e = 0; e < n && placed_all; ++e) {
                bool placed = false;
                for (int tries = 0; tries < spec.max_retries && !placed; ++tries) {
                    double c[3], r[3];
                    bool fits = true;
                    for (int a = 0; a < 3; ++a) {
                        r[a] = uniform(rng, s.radius_min[a], s.radius_max[a]);
                        c[a] = s.center[a] * (spec.shape[a] - 1) + uniform(rng, -s.jitter, s.jitter);
                        fits = fits && c[a] - r[a] >= 0.0 && c[a] + r[a] <= spec.shape[a] - 1;
                    }
                    if (!fits) continue;
                    paint_ellipsoid(out, c, r, static_cast<std::uint8_t>(k));
                    placed = true;
                }
                placed_all = placed;
            }
        }
        if (!placed_all) continue;
        std::vector<std::size_t> counts(spec.num_labels, 0);
        for (auto v : out.data) ++counts[v];
        if (std::all_of(counts.begin() + 1, counts.end(), [](std::size_t c) { return c > 0; })) return out;
    }
    throw GenerationError("anatomy: could not place all structures after bounded retries");
}

/// Smooth multiplicative field 1 + amplitude * f, f in [-1, 1] interpolated
/// trilinearly from uniform noise on a control grid `scale` voxels apart.
inline std::vector<float> bias_field(Shape3 shape, double amplitude, double scale, Rng& rng) {
    std::vector<float> field(shape.voxels(), 1.0f);
    if (amplitude == 0.0) return field;
    int n[3];
    for (int a = 0; a < 3; ++a) n[a] = static_cast<int>(std::ceil((shape[a] - 1) / scale)) + 2;
    std::vector<double> ctrl(static_cast<std::size_t>(n[0]) * n[1] * n[2]);
    for (auto& c : ctrl) c = uniform(rng, -1.0, 1.0);
    auto cat = [&](int z, int y, int x) { return ctrl[(static_cast<std::size_t>(z) * n[1] + y) * n[2] + x]; };
    std::size_t o = 0;
    for (int z = 0; z < shape.d; ++z)
        for (int y = 0; y < shape.h; ++y)
            for (int x = 0; x < shape.w; ++x, ++o) {
                const double pz = z / scale, py = y / scale, px = x / scale;
                const int iz = static_cast<int>(pz), iy = static_cast<int>(py), ix = static_cast<int>(px);
                const double fz = pz - iz, fy = py - iy, fx = px - ix;
                double v = 0.0;
                for (int dz = 0; dz < 2; ++dz)
                    for (int dy = 0; dy < 2; ++dy)
                        for (int dx = 0; dx < 2; ++dx)
                            v += cat(iz + dz, iy + dy, ix + dx) * (dz ? fz : 1 - fz) * (dy ? fy : 1 - fy) *
                                 (dx ? fx : 1 - fx);
                field[o] = static_cast<float>(1.0 + amplitude * v);
            }
    return field;
}

/// value = clip01( clip01((mu_k + sigma_k * n) * bias)^gamma + noise ),
/// with the tissue term mirrored (t -> 1 - t) when the domain inverts contrast.
inline Volume render_domain(const LabelMap& lbl, const DomainSpec& d, std::uint64_t seed) {
    d.validate();
    if (static_cast<int>(d.mean.size()) != lbl.num_labels)
        throw ArgumentError("render_domain: domain '" + d.name + "' has " + std::to_string(d.mean.size()) +
                            " means for " + std::to_string(lbl.num_labels) + " labels");
    Rng rng(seed);
    const std::vector<float> bias = bias_field(lbl.shape, d.bias_amplitude, d.bias_scale, rng);
    Volume out(lbl.shape, lbl.spacing);
    for (std::size_t v = 0; v < out.size(); ++v) {
        const int k = lbl.data[v];
        double t = d.mean[k];
        if (d.stddev[k] > 0.0) t += d.stddev[k] * normal(rng);
        if (d.invert) t = 1.0 - t;
        t = std::clamp(t * bias[v], 0.0, 1.0);
        double value = std::pow(t, d.gamma);
        if (d.noise_std > 0.0) value += d.noise_std * normal(rng);
        out.data[v] = static_cast<float>(std::clamp(value, 0.0, 1.0));
    }
    return out;
}

struct SplitCounts {
    int train = 0;
    int val = 0;
    int test = 0;
};

struct DomainEntry {
    DomainSpec spec;
    SplitCounts counts;
};

struct SubjectRecord {
    std::string id;
    std::string domain;
    std::string split;
    std::string image;  // path stems relative to the manifest directory
    std::string label;
    std::uint64_t seed = 0;
};

struct Manifest {
    std::vector<SubjectRecord> subjects;

    std::vector<SubjectRecord> select(const std::string& domain, const std::string& split) const {
        std::vector<SubjectRecord> out;
        for (const auto& s : subjects)
            if (s.domain == domain && s.split == split) out.push_back(s);
        return out;
    }
};

inline json to_json(const Manifest& m) {
    json subs = json::array();
    for (const auto& s : m.subjects)
        subs.push_back({{"id", s.id},
                        {"domain", s.domain},
                        {"split", s.split},
                        {"image", s.image},
                        {"label", s.label},
                        {"seed", s.seed}});
    return json{{"subjects", subs}};
}

inline Manifest manifest_from_json(const json& j) {
    Manifest m;
    try {
        for (const auto& s : j.at("subjects"))
            m.subjects.push_back({s.at("id").get<std::string>(), s.at("domain").get<std::string>(),
                                  s.at("split").get<std::string>(), s.at("image").get<std::string>(),
                                  s.at("label").get<std::string>(), s.value("seed", std::uint64_t{0})});
    } catch (const json::exception& e) {
        throw FormatError(std::string("dataset manifest: ") + e.what());
    }
    return m;
}

inline Manifest read_manifest(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw DependencyError("missing dataset manifest: " + path.string());
    try {
        return manifest_from_json(json::parse(in));
    } catch (const json::parse_error& e) {
        throw FormatError("dataset manifest " + path.string() + ": " + e.what());
    }
}

inline std::uint64_t subject_seed(std::uint64_t root, const std::string& domain, const std::string& split, int idx) {
    return derive_seed(root, "subject/" + domain + "/" + split + "/" + std::to_string(idx));
}

/// Generates every subject of every domain and writes image/label pairs plus
/// `dataset_manifest.json` into `out_dir`. Each subject belongs to exactly one
/// domain; its anatomy seed is unique per (domain, split, index).
inline Manifest build_dataset(const AnatomySpec& anatomy, const std::vector<DomainEntry>& domains,
                              const fs::path& out_dir, std::uint64_t root_seed, bool overwrite = false) {
    if (domains.empty()) throw ArgumentError("build_dataset: empty domain list");
    for (const auto& d : domains) {
        d.spec.validate();
        if (d.counts.train < 0 || d.counts.val < 0 || d.counts.test < 0 ||
            d.counts.train + d.counts.val + d.counts.test < 1)
            throw ArgumentError("build_dataset: domain '" + d.spec.name + "' needs at least one subject");
    }
    const fs::path manifest_path = out_dir / "dataset_manifest.json";
    if (fs::exists(manifest_path) && !overwrite)
        throw IoError("dataset manifest already exists (pass overwrite): " + manifest_path.string());
    fs::create_directories(out_dir);

    Manifest m;
    for (const auto& d : domains) {
        const std::pair<const char*, int> splits[] = {
            {"train", d.counts.train}, {"val", d.counts.val}, {"test", d.counts.test}};
        for (const auto& [split, count] : splits) {
            for (int i = 0; i < count; ++i) {
                SubjectRecord r;
                r.domain = d.spec.name;
                r.split = split;
                r.id = d.spec.name + "_" + split + "_" + std::to_string(i);
                r.seed = subject_seed(root_seed, d.spec.name, split, i);
                AnatomySpec a = anatomy;
                a.seed = r.seed;
                const LabelMap lbl = generate_anatomy(a);
                const Volume img = render_domain(lbl, d.spec, derive_seed(r.seed, "render"));
                r.image = (fs::path(d.spec.name) / split / (r.id + "_image")).string();
                r.label = (fs::path(d.spec.name) / split / (r.id + "_label")).string();
                io::write_volume(out_dir / r.image, img);
                io::write_volume(out_dir / r.label, lbl);
                m.subjects.push_back(std::move(r));
            }
        }
    }
    std::ofstream out(manifest_path, std::ios::trunc);
    if (!out) throw IoError("cannot write " + manifest_path.string());
    out << to_json(m).dump(2) << '\n';
    return m;
}

}  // namespace tta::synth
