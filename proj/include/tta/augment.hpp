#pragma once

// Training-time augmentation. Geometric transforms are composed into one
// backward coordinate map and sampled once (bilinear for images, nearest for
// labels); intensity transforms touch the image only.
//
// Order when several fire: translate -> rotate -> scale -> elastic -> rot90 ->
// flips, then gamma -> brightness -> noise.
//
// Elastic displacements are in pixels: per-pixel noise U(-1, 1) is smoothed
// with a Gaussian of std `sigma` px and multiplied by `alpha`. For white noise
// of variance 1/3 the smoothed field has std ~ alpha / (sqrt(12 pi) * sigma),
// i.e. ~8.1 px for sigma = 20, alpha = 1000 on an unbounded grid; on small
// grids the truncated kernel lowers this further.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "tta/error.hpp"
#include "tta/rng.hpp"

namespace tta::aug {

struct RangeAug {
    bool enabled = true;
    double probability = 0.25;
    double lo = 0.0;
    double hi = 0.0;
};

struct ElasticAug {
    bool enabled = true;
    double probability = 0.25;
    double sigma = 20.0;
    double alpha = 1000.0;
};

struct NoiseAug {
    bool enabled = true;
    double probability = 0.25;
    double stddev = 0.1;
};

struct FlagAug {
    bool enabled = false;
    double probability = 0.25;
};

struct AugmentConfig {
    RangeAug translation{true, 0.25, -10.0, 10.0};  // px
    RangeAug rotation{true, 0.25, -10.0, 10.0};  // degrees
    RangeAug scale{true, 0.25, 0.9, 1.1};
    ElasticAug elastic{};
    FlagAug rot90{};
    FlagAug flip_lr{};
    FlagAug flip_ud{};
    RangeAug gamma{true, 0.25, 0.5, 2.0};
    RangeAug brightness{true, 0.25, 0.0, 0.1};
    NoiseAug noise{};

    /// Everything off.
    static AugmentConfig none() {
        AugmentConfig c;
        for (RangeAug* r : {&c.translation, &c.rotation, &c.scale, &c.gamma, &c.brightness}) r->enabled = false;
        c.elastic.enabled = false;
        c.noise.enabled = false;
        return c;
    }

    void validate() const {
        auto prob = [](double p) {
            if (!(p >= 0.0 && p <= 1.0)) throw ArgumentError("augment: probability outside [0, 1]");
        };
        for (const RangeAug* r : {&translation, &rotation, &scale, &gamma, &brightness}) {
            prob(r->probability);
            if (r->lo > r->hi) throw ArgumentError("augment: range lower bound exceeds upper bound");
        }
        for (const FlagAug* f : {&rot90, &flip_lr, &flip_ud}) prob(f->probability);
        prob(elastic.probability);
        prob(noise.probability);
        if (scale.lo <= 0.0) throw ArgumentError("augment: scale must be positive");
        if (gamma.lo <= 0.0) throw ArgumentError("augment: gamma must be positive");
        if (elastic.sigma <= 0.0) throw ArgumentError("augment: elastic sigma must be positive");
    }
};

/// One sampled geometric transform for an h x w plane.
struct GeometricParams {
    int h = 0, w = 0;
    bool translate = false;
    double ty = 0.0, tx = 0.0;
    bool rotate = false;
    double angle_deg = 0.0;
    bool scale = false;
    double factor = 1.0;
    bool elastic = false;
    std::vector<float> dy, dx;  // h*w displacement fields, px
    int rot90 = 0;  // quarter turns, counter-clockwise in (y, x) index space
    bool flip_lr = false;
    bool flip_ud = false;

    bool identity() const { return !translate && !rotate && !scale && !elastic && rot90 == 0 && !flip_lr && !flip_ud; }
};

struct IntensityParams {
    bool gamma = false;
    double c = 1.0;
    bool brightness = false;
    double b = 0.0;
    bool noise = false;
    double stddev = 0.0;
    std::uint64_t noise_seed = 0;
};

/// Separable Gaussian smoothing of an h x w field, zero outside the plane.
inline std::vector<float> gaussian_smooth(const std::vector<float>& in, int h, int w, double sigma) {
    const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
    std::vector<double> k(2 * radius + 1);
    double ks = 0.0;
    for (int i = -radius; i <= radius; ++i) ks += k[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
    for (auto& v : k) v /= ks;
    std::vector<double> tmp(in.size(), 0.0);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double s = 0.0;
            for (int i = std::max(-radius, -x); i <= std::min(radius, w - 1 - x); ++i)
                s += k[i + radius] * in[y * w + x + i];
            tmp[y * w + x] = s;
        }
    std::vector<float> out(in.size());
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double s = 0.0;
            for (int i = std::max(-radius, -y); i <= std::min(radius, h - 1 - y); ++i)
                s += k[i + radius] * tmp[(y + i) * w + x];
            out[y * w + x] = static_cast<float>(s);
        }
    return out;
}

inline GeometricParams sample_geometric(const AugmentConfig& cfg, int h, int w, Rng& rng) {
    GeometricParams g;
    g.h = h;
    g.w = w;
    auto fires = [&](bool enabled, double p) { return enabled && bernoulli(rng, p); };
    if (fires(cfg.translation.enabled, cfg.translation.probability)) {
        g.translate = true;
        g.ty = uniform(rng, cfg.translation.lo, cfg.translation.hi);
        g.tx = uniform(rng, cfg.translation.lo, cfg.translation.hi);
    }
    if (fires(cfg.rotation.enabled, cfg.rotation.probability)) {
        g.rotate = true;
        g.angle_deg = uniform(rng, cfg.rotation.lo, cfg.rotation.hi);
    }
    if (fires(cfg.scale.enabled, cfg.scale.probability)) {
        g.scale = true;
        g.factor = uniform(rng, cfg.scale.lo, cfg.scale.hi);
    }
    if (fires(cfg.elastic.enabled, cfg.elastic.probability)) {
        g.elastic = true;
        std::vector<float> ny(static_cast<std::size_t>(h) * w), nx(ny.size());
        for (auto& v : ny) v = static_cast<float>(uniform(rng, -1.0, 1.0));
        for (auto& v : nx) v = static_cast<float>(uniform(rng, -1.0, 1.0));
        g.dy = gaussian_smooth(ny, h, w, cfg.elastic.sigma);
        g.dx = gaussian_smooth(nx, h, w, cfg.elastic.sigma);
        for (auto& v : g.dy) v = static_cast<float>(v * cfg.elastic.alpha);
        for (auto& v : g.dx) v = static_cast<float>(v * cfg.elastic.alpha);
    }
    if (fires(cfg.rot90.enabled, cfg.rot90.probability)) g.rot90 = static_cast<int>(uniform_int(rng, 1, 3));
    if (fires(cfg.flip_lr.enabled, cfg.flip_lr.probability)) g.flip_lr = true;
    if (fires(cfg.flip_ud.enabled, cfg.flip_ud.probability)) g.flip_ud = true;
    return g;
}

inline IntensityParams sample_intensity(const AugmentConfig& cfg, Rng& rng) {
    IntensityParams p;
    auto fires = [&](bool enabled, double prob) { return enabled && bernoulli(rng, prob); };
    if (fires(cfg.gamma.enabled, cfg.gamma.probability)) {
        p.gamma = true;
        p.c = uniform(rng, cfg.gamma.lo, cfg.gamma.hi);
    }
    if (fires(cfg.brightness.enabled, cfg.brightness.probability)) {
        p.brightness = true;
        p.b = uniform(rng, cfg.brightness.lo, cfg.brightness.hi);
    }
    if (fires(cfg.noise.enabled, cfg.noise.probability)) {
        p.noise = true;
        p.stddev = cfg.noise.stddev;
        p.noise_seed = rng();
    }
    return p;
}

/// Source coordinate (sy, sx) sampled for output pixel (y, x).
inline void source_coord(const GeometricParams& g, int y, int x, double& sy, double& sx) {
    double py = y, px = x;
    const double cy = (g.h - 1) / 2.0, cx = (g.w - 1) / 2.0;
    // Undo the forward chain from the last transform to the first.
    if (g.flip_ud) py = (g.h - 1) - py;
    if (g.flip_lr) px = (g.w - 1) - px;
    for (int q = 0; q < g.rot90; ++q) {
        // out[y][x] = in[x][n - 1 - y] on a square plane (numpy rot90 convention)
        const double ny = cy + (px - cx);
        const double nx = cx - (py - cy);
        py = ny;
        px = nx;
    }
    if (g.elastic) {
        const int iy = std::clamp(static_cast<int>(std::lround(py)), 0, g.h - 1);
        const int ix = std::clamp(static_cast<int>(std::lround(px)), 0, g.w - 1);
        py = std::clamp(py + g.dy[iy * g.w + ix], 0.0, static_cast<double>(g.h - 1));
        px = std::clamp(px + g.dx[iy * g.w + ix], 0.0, static_cast<double>(g.w - 1));
    }
    if (g.scale) {
        py = cy + (py - cy) / g.factor;
        px = cx + (px - cx) / g.factor;
    }
    if (g.rotate) {
        const double a = g.angle_deg * 3.14159265358979323846 / 180.0;
        const double ca = std::cos(a), sa = std::sin(a);
        const double ry = py - cy, rx = px - cx;
        py = cy + ca * ry + sa * rx;
        px = cx - sa * ry + ca * rx;
    }
    if (g.translate) {
        py -= g.ty;
        px -= g.tx;
    }
    sy = py;
    sx = px;
}

/// Applies `g` to one plane of floats (bilinear, zero outside).
inline void warp_plane(const GeometricParams& g, const float* src, float* dst) {
    if (g.identity()) {
        std::copy(src, src + static_cast<std::size_t>(g.h) * g.w, dst);
        return;
    }
    for (int y = 0; y < g.h; ++y)
        for (int x = 0; x < g.w; ++x) {
            double sy, sx;
            source_coord(g, y, x, sy, sx);
            const double fy0 = std::floor(sy), fx0 = std::floor(sx);
            const int y0 = static_cast<int>(fy0), x0 = static_cast<int>(fx0);
            const double fy = sy - fy0, fx = sx - fx0;
            double acc = 0.0;
            for (int dy = 0; dy < 2; ++dy)
                for (int dx = 0; dx < 2; ++dx) {
                    const int yy = y0 + dy, xx = x0 + dx;
                    const double wgt = (dy ? fy : 1 - fy) * (dx ? fx : 1 - fx);
                    if (wgt == 0.0 || yy < 0 || xx < 0 || yy >= g.h || xx >= g.w) continue;
                    acc += wgt * src[yy * g.w + xx];
                }
            dst[y * g.w + x] = static_cast<float>(acc);
        }
}

/// Applies `g` to one label plane (nearest, background outside).
inline void warp_plane(const GeometricParams& g, const std::uint8_t* src, std::uint8_t* dst) {
    if (g.identity()) {
        std::copy(src, src + static_cast<std::size_t>(g.h) * g.w, dst);
        return;
    }
    for (int y = 0; y < g.h; ++y)
        for (int x = 0; x < g.w; ++x) {
            double sy, sx;
            source_coord(g, y, x, sy, sx);
            const int yy = static_cast<int>(std::ceil(sy - 0.5)), xx = static_cast<int>(std::ceil(sx - 0.5));
            dst[y * g.w + x] = (yy < 0 || xx < 0 || yy >= g.h || xx >= g.w) ? 0 : src[yy * g.w + xx];
        }
}

inline void apply_intensity(const IntensityParams& p, float* data, std::size_t n) {
    if (p.gamma)
        for (std::size_t i = 0; i < n; ++i) data[i] = static_cast<float>(std::pow(std::max(0.0f, data[i]), p.c));
    if (p.brightness)
        for (std::size_t i = 0; i < n; ++i) data[i] = static_cast<float>(data[i] + p.b);
    if (p.noise) {
        Rng rng(p.noise_seed);
        for (std::size_t i = 0; i < n; ++i) data[i] = static_cast<float>(data[i] + p.stddev * normal(rng));
    }
}

/// Batch of 2D planes, layout (n, h, w).
template <class T>
struct PlaneBatch {
    int n = 0, h = 0, w = 0;
    std::vector<T> data;

    PlaneBatch() = default;
    PlaneBatch(int n_, int h_, int w_) : n(n_), h(h_), w(w_), data(static_cast<std::size_t>(n_) * h_ * w_) {}
    T* plane(int i) { return data.data() + static_cast<std::size_t>(i) * h * w; }
    const T* plane(int i) const { return data.data() + static_cast<std::size_t>(i) * h * w; }
};

using ImageBatch = PlaneBatch<float>;
using LabelBatch = PlaneBatch<std::uint8_t>;

/// Per-sample parameter stream: sample i draws from derive_seed(seed, i), so
/// the result for one sample does not depend on the batch composition.
inline Rng sample_rng(std::uint64_t seed, int i) { return Rng(derive_seed(seed, static_cast<std::uint64_t>(i))); }

inline void augment_pair(ImageBatch& image, LabelBatch& label, const AugmentConfig& cfg, std::uint64_t seed) {
    if (image.n != label.n || image.h != label.h || image.w != label.w)
        throw ArgumentError("augment_pair: image and label batches differ in shape");
    cfg.validate();
    std::vector<float> fbuf(static_cast<std::size_t>(image.h) * image.w);
    std::vector<std::uint8_t> lbuf(fbuf.size());
    for (int i = 0; i < image.n; ++i) {
        Rng rng = sample_rng(seed, i);
        const GeometricParams g = sample_geometric(cfg, image.h, image.w, rng);
        const IntensityParams ip = sample_intensity(cfg, rng);
        warp_plane(g, image.plane(i), fbuf.data());
        std::copy(fbuf.begin(), fbuf.end(), image.plane(i));
        warp_plane(g, label.plane(i), lbuf.data());
        std::copy(lbuf.begin(), lbuf.end(), label.plane(i));
        apply_intensity(ip, image.plane(i), fbuf.size());
    }
}

/// Geometric-only augmentation of a 3D label volume (d planes of h x w); one
/// in-plane transform is sampled and shared by every plane.
inline void augment_labels(std::vector<std::uint8_t>& volume, int d, int h, int w, const AugmentConfig& cfg,
                           std::uint64_t seed) {
    if (volume.size() != static_cast<std::size_t>(d) * h * w)
        throw ArgumentError("augment_labels: buffer size does not match shape");
    cfg.validate();
    Rng rng = sample_rng(seed, 0);
    const GeometricParams g = sample_geometric(cfg, h, w, rng);
    if (g.identity()) return;
    std::vector<std::uint8_t> buf(static_cast<std::size_t>(h) * w);
    for (int z = 0; z < d; ++z) {
        std::uint8_t* p = volume.data() + static_cast<std::size_t>(z) * h * w;
        warp_plane(g, p, buf.data());
        std::copy(buf.begin(), buf.end(), p);
    }
}

}  // namespace tta::aug
