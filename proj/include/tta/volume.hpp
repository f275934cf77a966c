#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "tta/error.hpp"

namespace tta {

/// Grid extents in (D, H, W) order; index z is the slowest axis.
struct Shape3 {
    int d = 0;
    int h = 0;
    int w = 0;

    std::size_t voxels() const {
        return static_cast<std::size_t>(d) * static_cast<std::size_t>(h) * static_cast<std::size_t>(w);
    }
    int operator[](int axis) const { return axis == 0 ? d : axis == 1 ? h : w; }
    int& operator[](int axis) { return axis == 0 ? d : axis == 1 ? h : w; }
    bool positive() const { return d > 0 && h > 0 && w > 0; }
    bool operator==(const Shape3&) const = default;
};

/// Physical voxel size in millimetres, (z, y, x) order.
struct Spacing3 {
    double z = 1.0;
    double y = 1.0;
    double x = 1.0;

    double operator[](int axis) const { return axis == 0 ? z : axis == 1 ? y : x; }
    double& operator[](int axis) { return axis == 0 ? z : axis == 1 ? y : x; }
    bool positive() const { return z > 0.0 && y > 0.0 && x > 0.0; }
    bool operator==(const Spacing3&) const = default;
};

inline std::string to_string(const Shape3& s) {
    return std::to_string(s.d) + "x" + std::to_string(s.h) + "x" + std::to_string(s.w);
}

/// Dense scalar grid. C order, z slowest.
template <class T>
struct Grid {
    Shape3 shape;
    Spacing3 spacing;
    std::vector<T> data;

    Grid() = default;
    Grid(Shape3 s, Spacing3 sp, T fill = T{}) : shape(s), spacing(sp), data(s.voxels(), fill) {
        if (!s.positive()) throw ArgumentError("grid shape must be positive, got " + to_string(s));
        if (!sp.positive()) throw ArgumentError("grid spacing must be positive");
    }

    std::size_t index(int z, int y, int x) const {
        return (static_cast<std::size_t>(z) * shape.h + y) * shape.w + x;
    }
    T& at(int z, int y, int x) { return data[index(z, y, x)]; }
    const T& at(int z, int y, int x) const { return data[index(z, y, x)]; }
    std::size_t size() const { return data.size(); }
};

/// Intensity image. Values are finite; after preprocessing they lie in [0, 1].
struct Volume : Grid<float> {
    using Grid<float>::Grid;
};

/// Hard segmentation over labels 0..num_labels-1; 0 is background.
struct LabelMap : Grid<std::uint8_t> {
    int num_labels = 2;

    LabelMap() = default;
    LabelMap(Shape3 s, Spacing3 sp, int k, std::uint8_t fill = 0) : Grid<std::uint8_t>(s, sp, fill), num_labels(k) {
        if (k < 2 || k > 255) throw ArgumentError("num_labels must be in [2, 255]");
    }

    /// Throws if any voxel is outside the alphabet.
    void validate() const {
        for (auto v : data)
            if (v >= num_labels) throw FormatError("label value " + std::to_string(v) + " >= num_labels");
    }
};

/// Per-voxel class probabilities, layout (K, D, H, W).
struct ProbMap {
    int num_labels = 2;
    Shape3 shape;
    Spacing3 spacing;
    std::vector<float> data;

    ProbMap() = default;
    ProbMap(int k, Shape3 s, Spacing3 sp, float fill = 0.0f)
        : num_labels(k), shape(s), spacing(sp), data(static_cast<std::size_t>(k) * s.voxels(), fill) {
        if (k < 2) throw ArgumentError("ProbMap needs at least two classes");
        if (!s.positive()) throw ArgumentError("ProbMap shape must be positive");
    }

    float& at(int k, std::size_t voxel) { return data[static_cast<std::size_t>(k) * shape.voxels() + voxel]; }
    float at(int k, std::size_t voxel) const { return data[static_cast<std::size_t>(k) * shape.voxels() + voxel]; }

    /// Largest deviation of the per-voxel class sum from 1.
    double max_simplex_error() const {
        double worst = 0.0;
        const std::size_t n = shape.voxels();
        for (std::size_t v = 0; v < n; ++v) {
            double s = 0.0;
            for (int k = 0; k < num_labels; ++k) s += at(k, v);
            worst = std::max(worst, std::abs(s - 1.0));
        }
        return worst;
    }
};

inline LabelMap argmax(const ProbMap& p) {
    LabelMap out(p.shape, p.spacing, p.num_labels);
    const std::size_t n = p.shape.voxels();
    for (std::size_t v = 0; v < n; ++v) {
        int best = 0;
        float bv = p.at(0, v);
        for (int k = 1; k < p.num_labels; ++k) {
            if (p.at(k, v) > bv) {
                bv = p.at(k, v);
                best = k;
            }
        }
        out.data[v] = static_cast<std::uint8_t>(best);
    }
    return out;
}

inline ProbMap one_hot(const LabelMap& l) {
    ProbMap p(l.num_labels, l.shape, l.spacing, 0.0f);
    const std::size_t n = l.shape.voxels();
    for (std::size_t v = 0; v < n; ++v) p.at(l.data[v], v) = 1.0f;
    return p;
}

}  // namespace tta
