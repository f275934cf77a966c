#pragma once

// Shared helpers for the test binaries: scratch directories, random label
// maps and brute-force reference implementations of the metrics.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "tta/rng.hpp"
#include "tta/volume.hpp"

namespace testutil {

namespace fs = std::filesystem;

/// Fresh empty directory under the system temp dir.
inline fs::path scratch_dir(const std::string& name) {
    fs::path p = fs::temp_directory_path() / ("tta_test_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

/// Random blobby label map: a few random boxes per label over background.
inline tta::LabelMap random_labels(tta::Shape3 s, tta::Spacing3 sp, int k, std::uint64_t seed, int boxes = 3) {
    tta::Rng rng(seed);
    tta::LabelMap m(s, sp, k);
    for (int b = 0; b < boxes * (k - 1); ++b) {
        const int lbl = 1 + b % (k - 1);
        int lo[3], hi[3];
        for (int a = 0; a < 3; ++a) {
            lo[a] = static_cast<int>(tta::uniform_int(rng, 0, s[a] - 1));
            hi[a] = std::min(s[a] - 1, lo[a] + static_cast<int>(tta::uniform_int(rng, 0, std::max(1, s[a] / 2))));
        }
        for (int z = lo[0]; z <= hi[0]; ++z)
            for (int y = lo[1]; y <= hi[1]; ++y)
                for (int x = lo[2]; x <= hi[2]; ++x) m.at(z, y, x) = static_cast<std::uint8_t>(lbl);
    }
    return m;
}

/// Dice by explicit set construction.
inline double brute_dice(const tta::LabelMap& a, const tta::LabelMap& b, int k) {
    std::vector<std::size_t> sa, sb, both;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a.data[i] == k) sa.push_back(i);
        if (b.data[i] == k) sb.push_back(i);
    }
    std::set_intersection(sa.begin(), sa.end(), sb.begin(), sb.end(), std::back_inserter(both));
    if (sa.empty() && sb.empty()) return 1.0;
    return 2.0 * static_cast<double>(both.size()) / static_cast<double>(sa.size() + sb.size());
}

struct Point {
    int z, y, x;
};

/// Surface voxels: members of label k with a 6-neighbour that is not
/// (off-grid neighbours count as "not").
inline std::vector<Point> brute_surface(const tta::LabelMap& m, int k) {
    std::vector<Point> out;
    const int off[6][3] = {{-1, 0, 0}, {1, 0, 0}, {0, -1, 0}, {0, 1, 0}, {0, 0, -1}, {0, 0, 1}};
    for (int z = 0; z < m.shape.d; ++z)
        for (int y = 0; y < m.shape.h; ++y)
            for (int x = 0; x < m.shape.w; ++x) {
                if (m.at(z, y, x) != k) continue;
                bool edge = false;
                for (const auto& o : off) {
                    const int zz = z + o[0], yy = y + o[1], xx = x + o[2];
                    if (zz < 0 || yy < 0 || xx < 0 || zz >= m.shape.d || yy >= m.shape.h || xx >= m.shape.w ||
                        m.at(zz, yy, xx) != k)
                        edge = true;
                }
                if (edge) out.push_back({z, y, x});
            }
    return out;
}

/// All-pairs HD95; returns -1 when either surface is empty.
inline double brute_hd95(const tta::LabelMap& a, const tta::LabelMap& b, int k) {
    const auto pa = brute_surface(a, k), pb = brute_surface(b, k);
    if (pa.empty() || pb.empty()) return -1.0;
    const auto sp = a.spacing;
    auto directed = [&](const std::vector<Point>& from, const std::vector<Point>& to, std::vector<double>& out) {
        for (const auto& p : from) {
            double best = 1e300;
            for (const auto& q : to) {
                const double dz = (p.z - q.z) * sp.z, dy = (p.y - q.y) * sp.y, dx = (p.x - q.x) * sp.x;
                best = std::min(best, dz * dz + dy * dy + dx * dx);
            }
            out.push_back(std::sqrt(best));
        }
    };
    std::vector<double> d;
    directed(pa, pb, d);
    directed(pb, pa, d);
    std::sort(d.begin(), d.end());
    const double rank = 0.95 * static_cast<double>(d.size() - 1);
    const std::size_t lo = static_cast<std::size_t>(rank);
    const std::size_t hi = std::min(lo + 1, d.size() - 1);
    return d[lo] + (rank - static_cast<double>(lo)) * (d[hi] - d[lo]);
}

}  // namespace testutil
