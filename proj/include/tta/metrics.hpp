#pragma once

// Evaluation metrics on hard label maps: Dice, pooled 95th-percentile
// Hausdorff distance (via an exact anisotropic Euclidean distance transform),
// and the paired sign-flip permutation test.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdint>
#include <limits>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "tta/error.hpp"
#include "tta/rng.hpp"
#include "tta/volume.hpp"

namespace tta::metrics {

/// 2|A ∩ B| / (|A| + |B|) for label k; 1.0 when both are empty.
inline double dice_score(const LabelMap& a, const LabelMap& b, int k) {
    if (!(a.shape == b.shape)) throw ArgumentError("dice_score: shape mismatch");
    std::size_t na = 0, nb = 0, both = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const bool ia = a.data[i] == k, ib = b.data[i] == k;
        na += ia;
        nb += ib;
        both += ia && ib;
    }
    if (na + nb == 0) return 1.0;
    return 2.0 * static_cast<double>(both) / static_cast<double>(na + nb);
}

/// Mean of dice_score over labels 1..K-1.
inline double mean_foreground_dice(const LabelMap& a, const LabelMap& b) {
    const int k = std::max(a.num_labels, b.num_labels);
    double s = 0.0;
    for (int c = 1; c < k; ++c) s += dice_score(a, b, c);
    return s / (k - 1);
}

/// Percentile of doubles with linear interpolation between order statistics.
inline double percentile_linear(std::vector<double> v, double q) {
    if (v.empty()) throw ArgumentError("percentile of an empty sample");
    std::sort(v.begin(), v.end());
    const double rank = q / 100.0 * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(rank));
    const std::size_t hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (rank - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

/// Voxels of label k with at least one 6-neighbour outside the structure;
/// positions beyond the grid count as outside.
inline std::vector<std::uint8_t> boundary_mask(const LabelMap& m, int k) {
    const Shape3 s = m.shape;
    std::vector<std::uint8_t> b(m.size(), 0);
    auto in = [&](int z, int y, int x) {
        return z >= 0 && y >= 0 && x >= 0 && z < s.d && y < s.h && x < s.w && m.at(z, y, x) == k;
    };
    for (int z = 0; z < s.d; ++z)
        for (int y = 0; y < s.h; ++y)
            for (int x = 0; x < s.w; ++x) {
                if (m.at(z, y, x) != k) continue;
                if (!in(z - 1, y, x) || !in(z + 1, y, x) || !in(z, y - 1, x) || !in(z, y + 1, x) ||
                    !in(z, y, x - 1) || !in(z, y, x + 1))
                    b[m.index(z, y, x)] = 1;
            }
    return b;
}

namespace detail {

// One pass of the lower-envelope squared distance transform along a line of
// n samples spaced `h` mm apart (Felzenszwalb & Huttenlocher).
inline void edt_1d(const double* f, double* d, int n, double h, std::vector<int>& v, std::vector<double>& zb) {
    constexpr double inf = std::numeric_limits<double>::infinity();
    v.assign(n, 0);
    zb.assign(n + 1, 0.0);
    int k = -1;
    for (int q = 0; q < n; ++q) {
        if (f[q] == inf) continue;
        const double xq = q * h;
        while (k >= 0) {
            const double xv = v[k] * h;
            const double s = ((f[q] + xq * xq) - (f[v[k]] + xv * xv)) / (2.0 * (xq - xv));
            if (s <= zb[k]) {
                --k;
            } else {
                break;
            }
        }
        ++k;
        v[k] = q;
        if (k == 0) {
            zb[0] = -inf;
        } else {
            const double xv = v[k - 1] * h;
            zb[k] = ((f[q] + xq * xq) - (f[v[k - 1]] + xv * xv)) / (2.0 * (xq - xv));
        }
        zb[k + 1] = inf;
    }
    if (k < 0) {
        std::fill(d, d + n, inf);
        return;
    }
    int j = 0;
    for (int q = 0; q < n; ++q) {
        while (zb[j + 1] < q * h) ++j;
        const double dx = (q - v[j]) * h;
        d[q] = dx * dx + f[v[j]];
    }
}

}  // namespace detail

/// Exact squared Euclidean distance (mm^2) from every voxel to the nearest
/// voxel where `feature` is non-zero.
inline std::vector<double> squared_edt(const std::vector<std::uint8_t>& feature, Shape3 s, Spacing3 sp) {
    constexpr double inf = std::numeric_limits<double>::infinity();
    std::vector<double> d(feature.size());
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = feature[i] ? 0.0 : inf;
    std::vector<int> v;
    std::vector<double> zb;
    const int n_max = std::max({s.d, s.h, s.w});
    std::vector<double> line(n_max), out(n_max);
    // x axis
    for (int z = 0; z < s.d; ++z)
        for (int y = 0; y < s.h; ++y) {
            double* p = d.data() + (static_cast<std::size_t>(z) * s.h + y) * s.w;
            std::copy(p, p + s.w, line.begin());
            detail::edt_1d(line.data(), out.data(), s.w, sp.x, v, zb);
            std::copy(out.begin(), out.begin() + s.w, p);
        }
    // y axis
    for (int z = 0; z < s.d; ++z)
        for (int x = 0; x < s.w; ++x) {
            for (int y = 0; y < s.h; ++y) line[y] = d[(static_cast<std::size_t>(z) * s.h + y) * s.w + x];
            detail::edt_1d(line.data(), out.data(), s.h, sp.y, v, zb);
            for (int y = 0; y < s.h; ++y) d[(static_cast<std::size_t>(z) * s.h + y) * s.w + x] = out[y];
        }
    // z axis
    for (int y = 0; y < s.h; ++y)
        for (int x = 0; x < s.w; ++x) {
            for (int z = 0; z < s.d; ++z) line[z] = d[(static_cast<std::size_t>(z) * s.h + y) * s.w + x];
            detail::edt_1d(line.data(), out.data(), s.d, sp.z, v, zb);
            for (int z = 0; z < s.d; ++z) d[(static_cast<std::size_t>(z) * s.h + y) * s.w + x] = out[z];
        }
    return d;
}

/// 95th percentile of the pooled boundary-to-boundary distances (mm) in both
/// directions. std::nullopt when either structure is empty.
inline std::optional<double> hd95(const LabelMap& a, const LabelMap& b, int k) {
    if (!(a.shape == b.shape)) throw ArgumentError("hd95: shape mismatch");
    if (!(a.spacing == b.spacing)) throw ArgumentError("hd95: spacing mismatch");
    const auto ba = boundary_mask(a, k);
    const auto bb = boundary_mask(b, k);
    const bool ea = std::none_of(ba.begin(), ba.end(), [](auto v) { return v != 0; });
    const bool eb = std::none_of(bb.begin(), bb.end(), [](auto v) { return v != 0; });
    if (ea || eb) return std::nullopt;
    const auto da = squared_edt(ba, a.shape, a.spacing);
    const auto db = squared_edt(bb, a.shape, a.spacing);
    std::vector<double> pooled;
    for (std::size_t i = 0; i < ba.size(); ++i) {
        if (ba[i]) pooled.push_back(std::sqrt(db[i]));
        if (bb[i]) pooled.push_back(std::sqrt(da[i]));
    }
    return percentile_linear(std::move(pooled), 95.0);
}

// ---------------------------------------------------------- permutation test

struct PermutationResult {
    double observed = 0.0;  // mean(x - y)
    double p_value = 1.0;
    long permutations = 0;
    bool exhaustive = false;
};

/// Paired two-sided sign-flip test on mean(x - y). When 2^n <= n_perm every
/// sign pattern is enumerated (exact); otherwise n_perm random patterns are
/// drawn and p = (1 + hits) / (1 + n_perm), counting the identity.
inline PermutationResult permutation_test(const std::vector<double>& x, const std::vector<double>& y, long n_perm,
                                          std::uint64_t seed) {
    if (x.size() != y.size()) throw ArgumentError("permutation_test: length mismatch");
    if (x.size() < 2) throw ArgumentError("permutation_test: need at least two pairs");
    if (n_perm < 1) throw ArgumentError("permutation_test: n_perm must be positive");
    const std::size_t n = x.size();
    std::vector<double> diff(n);
    for (std::size_t i = 0; i < n; ++i) diff[i] = x[i] - y[i];
    double obs = 0.0;
    for (double d : diff) obs += d;
    obs /= static_cast<double>(n);
    const double thresh = std::abs(obs) * (1.0 - 1e-12);

    PermutationResult r;
    r.observed = obs;
    if (n < 63 && (1L << n) <= n_perm) {
        const long total = 1L << n;
        long hits = 0;
        for (long mask = 0; mask < total; ++mask) {
            double s = 0.0;
            for (std::size_t i = 0; i < n; ++i) s += (mask >> i & 1L) ? -diff[i] : diff[i];
            if (std::abs(s / static_cast<double>(n)) >= thresh) ++hits;
        }
        r.p_value = static_cast<double>(hits) / static_cast<double>(total);
        r.permutations = total;
        r.exhaustive = true;
        return r;
    }
    Rng rng(seed);
    long hits = 0;
    for (long p = 0; p < n_perm; ++p) {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) s += (rng() >> 63) ? -diff[i] : diff[i];
        if (std::abs(s / static_cast<double>(n)) >= thresh) ++hits;
    }
    r.p_value = static_cast<double>(1 + hits) / static_cast<double>(1 + n_perm);
    r.permutations = n_perm;
    return r;
}

// ------------------------------------------------------------------- records

struct MetricsRecord {
    std::string subject, domain, method;
    std::vector<double> dice;  // per label, index 0 unused
    std::vector<std::optional<double>> hd95;  // per label, index 0 unused

    double mean_dice() const {
        double s = 0.0;
        for (std::size_t k = 1; k < dice.size(); ++k) s += dice[k];
        return s / static_cast<double>(dice.size() - 1);
    }

    /// Mean over labels with a defined HD95; nullopt when none is defined.
    std::optional<double> mean_hd95() const {
        double s = 0.0;
        int n = 0;
        for (std::size_t k = 1; k < hd95.size(); ++k)
            if (hd95[k]) {
                s += *hd95[k];
                ++n;
            }
        if (n == 0) return std::nullopt;
        return s / n;
    }
};

inline MetricsRecord evaluate(const LabelMap& pred, const LabelMap& truth, std::string subject, std::string domain,
                              std::string method) {
    MetricsRecord r{std::move(subject), std::move(domain), std::move(method), {}, {}};
    const int k = truth.num_labels;
    r.dice.assign(k, 0.0);
    r.hd95.assign(k, std::nullopt);
    for (int c = 1; c < k; ++c) {
        r.dice[c] = dice_score(pred, truth, c);
        r.hd95[c] = hd95(pred, truth, c);
    }
    return r;
}

inline void write_csv_header(std::ostream& os) { os << "subject,domain,method,label,dice,hd95,flags\n"; }

/// One row per foreground label. Undefined HD95 is written empty with the
/// flag `hd95_undefined`.
inline void write_csv_rows(std::ostream& os, const MetricsRecord& r) {
    char buf[64];
    for (std::size_t k = 1; k < r.dice.size(); ++k) {
        std::snprintf(buf, sizeof buf, "%.6f", r.dice[k]);
        os << r.subject << ',' << r.domain << ',' << r.method << ',' << k << ',' << buf << ',';
        if (r.hd95[k]) {
            std::snprintf(buf, sizeof buf, "%.6f", *r.hd95[k]);
            os << buf << ",\n";
        } else {
            os << ",hd95_undefined\n";
        }
    }
}

}  // namespace tta::metrics
