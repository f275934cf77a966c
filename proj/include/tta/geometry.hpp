#pragma once

// Resampling to a fixed voxel size, centred crop/pad to a fixed grid, and the
// inverse chain that maps predictions back onto the subject's original grid.
//
// Coordinate convention: voxel j of an axis with spacing s covers
// [j*s, (j+1)*s) mm, so its centre sits at (j + 0.5) * s. Resampling maps
// output centres into input index space; linear mode clamps at the border,
// nearest mode resolves exact half-index ties toward the lower index.

#include <algorithm>
#include <array>
#include <cmath>
#include <string>
#include <type_traits>
#include <vector>

#include "tta/error.hpp"
#include "tta/volume.hpp"

namespace tta {

enum class Interp { Linear, Nearest };

/// Everything needed to undo resample + crop_or_pad for one subject.
struct GridRecord {
    Shape3 original_shape;
    Spacing3 original_spacing;
    Shape3 resampled_shape;
    Spacing3 resampled_spacing;
    std::array<int, 3> crop_offsets{0, 0, 0};
    std::array<int, 3> pad_amounts{0, 0, 0};
    Shape3 final_shape;
};

namespace detail {

struct AxisTap {
    int i0 = 0;
    int i1 = 0;
    double frac = 0.0;
    int nearest = 0;
};

inline std::vector<AxisTap> axis_taps(int out_n, int in_n, double out_spacing, double in_spacing) {
    std::vector<AxisTap> taps(out_n);
    const double ratio = out_spacing / in_spacing;
    for (int j = 0; j < out_n; ++j) {
        double c = (j + 0.5) * ratio - 0.5;
        AxisTap t;
        t.nearest = std::clamp(static_cast<int>(std::ceil(c - 0.5)), 0, in_n - 1);
        c = std::clamp(c, 0.0, static_cast<double>(in_n - 1));
        t.i0 = static_cast<int>(std::floor(c));
        t.i1 = std::min(t.i0 + 1, in_n - 1);
        t.frac = c - t.i0;
        taps[j] = t;
    }
    return taps;
}

/// Resamples one channel stored at `src` (shape in) into `dst` (shape out).
template <class T>
void resample_channel(const T* src, Shape3 in, Spacing3 in_sp, T* dst, Shape3 out, Spacing3 out_sp, Interp mode) {
    const auto tz = axis_taps(out.d, in.d, out_sp.z, in_sp.z);
    const auto ty = axis_taps(out.h, in.h, out_sp.y, in_sp.y);
    const auto tx = axis_taps(out.w, in.w, out_sp.x, in_sp.x);
    auto at = [&](int z, int y, int x) -> double {
        return static_cast<double>(src[(static_cast<std::size_t>(z) * in.h + y) * in.w + x]);
    };
    std::size_t o = 0;
    for (int z = 0; z < out.d; ++z)
        for (int y = 0; y < out.h; ++y)
            for (int x = 0; x < out.w; ++x, ++o) {
                if (mode == Interp::Nearest) {
                    dst[o] = src[(static_cast<std::size_t>(tz[z].nearest) * in.h + ty[y].nearest) * in.w +
                                 tx[x].nearest];
                    continue;
                }
                const auto &a = tz[z], &b = ty[y], &c = tx[x];
                const double c00 = at(a.i0, b.i0, c.i0) * (1 - c.frac) + at(a.i0, b.i0, c.i1) * c.frac;
                const double c01 = at(a.i0, b.i1, c.i0) * (1 - c.frac) + at(a.i0, b.i1, c.i1) * c.frac;
                const double c10 = at(a.i1, b.i0, c.i0) * (1 - c.frac) + at(a.i1, b.i0, c.i1) * c.frac;
                const double c11 = at(a.i1, b.i1, c.i0) * (1 - c.frac) + at(a.i1, b.i1, c.i1) * c.frac;
                const double v0 = c00 * (1 - b.frac) + c01 * b.frac;
                const double v1 = c10 * (1 - b.frac) + c11 * b.frac;
                dst[o] = static_cast<T>(v0 * (1 - a.frac) + v1 * a.frac);
            }
}

/// Copies `src` (shape in) into `dst` (shape out) with a per-axis offset:
/// dst[i] = src[i + offset], out-of-range positions get `fill`.
template <class T>
void shift_copy(const T* src, Shape3 in, T* dst, Shape3 out, std::array<int, 3> offset, T fill) {
    std::size_t o = 0;
    for (int z = 0; z < out.d; ++z)
        for (int y = 0; y < out.h; ++y)
            for (int x = 0; x < out.w; ++x, ++o) {
                const int sz = z + offset[0], sy = y + offset[1], sx = x + offset[2];
                if (sz < 0 || sy < 0 || sx < 0 || sz >= in.d || sy >= in.h || sx >= in.w)
                    dst[o] = fill;
                else
                    dst[o] = src[(static_cast<std::size_t>(sz) * in.h + sy) * in.w + sx];
            }
}

inline void renormalize(ProbMap& p) {
    const std::size_t n = p.shape.voxels();
    for (std::size_t v = 0; v < n; ++v) {
        double s = 0.0;
        for (int k = 0; k < p.num_labels; ++k) s += std::max(0.0f, p.at(k, v));
        for (int k = 0; k < p.num_labels; ++k) {
            if (s > 0.0)
                p.at(k, v) = static_cast<float>(std::max(0.0f, p.at(k, v)) / s);
            else
                p.at(k, v) = k == 0 ? 1.0f : 0.0f;
        }
    }
}

}  // namespace detail

inline Shape3 resampled_shape(Shape3 s, Spacing3 from, Spacing3 to) {
    Shape3 out;
    for (int a = 0; a < 3; ++a) out[a] = std::max(1, static_cast<int>(std::lround(s[a] * from[a] / to[a])));
    return out;
}

/// Resamples onto an explicit output grid. Labels must use nearest mode.
template <class G>
G resample_to(const G& v, Shape3 out_shape, Spacing3 out_spacing, Interp mode) {
    if (!out_spacing.positive()) throw ArgumentError("resample: target spacing must be positive");
    if (!out_shape.positive()) throw ArgumentError("resample: target shape must be positive");
    if constexpr (std::is_same_v<G, LabelMap>) {
        if (mode != Interp::Nearest) throw ArgumentError("resample: label maps require nearest interpolation");
        LabelMap out(out_shape, out_spacing, v.num_labels);
        detail::resample_channel(v.data.data(), v.shape, v.spacing, out.data.data(), out_shape, out_spacing, mode);
        return out;
    } else if constexpr (std::is_same_v<G, ProbMap>) {
        ProbMap out(v.num_labels, out_shape, out_spacing);
        for (int k = 0; k < v.num_labels; ++k)
            detail::resample_channel(v.data.data() + k * v.shape.voxels(), v.shape, v.spacing,
                                     out.data.data() + k * out_shape.voxels(), out_shape, out_spacing, mode);
        detail::renormalize(out);
        return out;
    } else {
        G out(out_shape, out_spacing);
        detail::resample_channel(v.data.data(), v.shape, v.spacing, out.data.data(), out_shape, out_spacing, mode);
        return out;
    }
}

/// Resamples to a target voxel size; output shape = round(shape * spacing / target).
template <class G>
G resample(const G& v, Spacing3 target_spacing, Interp mode, GridRecord* rec = nullptr) {
    if (!target_spacing.positive()) throw ArgumentError("resample: target spacing must be positive");
    const Shape3 out_shape = resampled_shape(v.shape, v.spacing, target_spacing);
    G out = resample_to(v, out_shape, target_spacing, mode);
    if (rec) {
        rec->original_shape = v.shape;
        rec->original_spacing = v.spacing;
        rec->resampled_shape = out_shape;
        rec->resampled_spacing = target_spacing;
    }
    return out;
}

/// Centred crop and/or zero pad to `target`; odd differences put the extra
/// voxel on the high side (offset = floor(diff / 2)).
template <class G>
G crop_or_pad(const G& v, Shape3 target, GridRecord* rec = nullptr) {
    if (!target.positive()) throw ArgumentError("crop_or_pad: target shape must be positive");
    std::array<int, 3> offset{}, crop{}, pad{};
    for (int a = 0; a < 3; ++a) {
        const int diff = v.shape[a] - target[a];
        if (diff >= 0) {
            crop[a] = diff / 2;
            offset[a] = crop[a];
        } else {
            pad[a] = (-diff) / 2;
            offset[a] = -pad[a];
        }
    }
    G out;
    if constexpr (std::is_same_v<G, ProbMap>) {
        out = ProbMap(v.num_labels, target, v.spacing);
        for (int k = 0; k < v.num_labels; ++k)
            detail::shift_copy(v.data.data() + k * v.shape.voxels(), v.shape, out.data.data() + k * target.voxels(),
                               target, offset, k == 0 ? 1.0f : 0.0f);
    } else {
        if constexpr (std::is_same_v<G, LabelMap>)
            out = LabelMap(target, v.spacing, v.num_labels);
        else
            out = G(target, v.spacing);
        detail::shift_copy(v.data.data(), v.shape, out.data.data(), target, offset,
                           typename decltype(v.data)::value_type{});
    }
    if (rec) {
        rec->crop_offsets = crop;
        rec->pad_amounts = pad;
        rec->final_shape = target;
    }
    return out;
}

/// Maps a canonical-grid prediction back to the subject's original grid:
/// undo crop/pad (removed border becomes background), then undo resampling
/// (nearest for labels, linear + renormalisation for probabilities).
template <class G>
G restore_to_original(const G& p, const GridRecord& rec) {
    static_assert(std::is_same_v<G, LabelMap> || std::is_same_v<G, ProbMap>);
    if (!(p.shape == rec.final_shape)) throw GeometryError("restore: prediction grid does not match record");
    for (int a = 0; a < 3; ++a) {
        const int diff = rec.final_shape[a] - rec.resampled_shape[a];
        const bool crop_ok = diff <= 0 && rec.pad_amounts[a] == 0 && rec.crop_offsets[a] == (-diff) / 2;
        const bool pad_ok = diff >= 0 && rec.crop_offsets[a] == 0 && rec.pad_amounts[a] == diff / 2;
        if (!(crop_ok || pad_ok)) throw GeometryError("restore: inconsistent crop/pad record");
    }
    std::array<int, 3> offset{};
    for (int a = 0; a < 3; ++a) offset[a] = rec.pad_amounts[a] - rec.crop_offsets[a];

    G uncropped;
    if constexpr (std::is_same_v<G, ProbMap>) {
        uncropped = ProbMap(p.num_labels, rec.resampled_shape, rec.resampled_spacing);
        for (int k = 0; k < p.num_labels; ++k)
            detail::shift_copy(p.data.data() + k * p.shape.voxels(), p.shape,
                               uncropped.data.data() + k * rec.resampled_shape.voxels(), rec.resampled_shape, offset,
                               k == 0 ? 1.0f : 0.0f);
        return resample_to(uncropped, rec.original_shape, rec.original_spacing, Interp::Linear);
    } else {
        uncropped = LabelMap(rec.resampled_shape, rec.resampled_spacing, p.num_labels);
        detail::shift_copy(p.data.data(), p.shape, uncropped.data.data(), rec.resampled_shape, offset,
                           std::uint8_t{0});
        return resample_to(uncropped, rec.original_shape, rec.original_spacing, Interp::Nearest);
    }
}

}  // namespace tta
