#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "tta/geometry.hpp"
#include "tta/volume.hpp"

namespace tta {

/// Percentile with linear interpolation between order statistics:
/// rank = q/100 * (n - 1) on the sorted sample.
inline double percentile(std::vector<float> values, double q) {
    if (values.empty()) throw ArgumentError("percentile of an empty sample");
    const double rank = std::clamp(q, 0.0, 100.0) / 100.0 * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(rank));
    const std::size_t hi = std::min(lo + 1, values.size() - 1);
    std::nth_element(values.begin(), values.begin() + static_cast<long>(lo), values.end());
    const double vlo = values[lo];
    double vhi = vlo;
    if (hi != lo) vhi = *std::min_element(values.begin() + static_cast<long>(lo) + 1, values.end());
    return vlo + (rank - static_cast<double>(lo)) * (vhi - vlo);
}

struct NormalizeResult {
    Volume volume;
    double p1 = 0.0;
    double p99 = 0.0;
    bool degenerate = false;  // p99 == p1; output is all zeros
};

/// x -> clip((x - p1) / (p99 - p1), 0, 1) with percentiles over the whole volume.
inline NormalizeResult percentile_normalize(const Volume& v) {
    for (float x : v.data)
        if (!std::isfinite(x)) throw ArgumentError("percentile_normalize: non-finite voxel");
    NormalizeResult r;
    r.p1 = percentile(v.data, 1.0);
    r.p99 = percentile(v.data, 99.0);
    r.volume = Volume(v.shape, v.spacing, 0.0f);
    if (!(r.p99 > r.p1)) {
        r.degenerate = true;
        return r;
    }
    const double scale = 1.0 / (r.p99 - r.p1);
    for (std::size_t i = 0; i < v.size(); ++i)
        r.volume.data[i] = static_cast<float>(std::clamp((v.data[i] - r.p1) * scale, 0.0, 1.0));
    return r;
}

/// Target grid for the networks.
struct CanonicalGrid {
    Spacing3 spacing{1, 1, 1};
    Shape3 shape{16, 32, 32};
};

struct PreparedSubject {
    Volume image;  // normalised, on the canonical grid
    LabelMap label;  // canonical grid (empty when no label was given)
    GridRecord record;
    bool degenerate = false;
};

/// Normalise, resample and crop/pad one subject onto the canonical grid.
inline PreparedSubject prepare_subject(const Volume& raw, const LabelMap* label, const CanonicalGrid& grid) {
    PreparedSubject s;
    NormalizeResult n = percentile_normalize(raw);
    s.degenerate = n.degenerate;
    GridRecord rec;
    Volume rs = resample(n.volume, grid.spacing, Interp::Linear, &rec);
    s.image = crop_or_pad(rs, grid.shape, &rec);
    s.record = rec;
    if (label) {
        LabelMap lr = resample(*label, grid.spacing, Interp::Nearest);
        s.label = crop_or_pad(lr, grid.shape);
    }
    return s;
}

}  // namespace tta
