#pragma once

// Glue between volumes and network tensors: slice batching for the 2D
// segmentation path, whole-volume passes for the 3D autoencoder, and the
// checkpoint wiring for both models.

#include <filesystem>
#include <string>

#include "tta/nn/checkpoint.hpp"
#include "tta/nn/networks.hpp"
#include "tta/volume.hpp"

namespace tta {

using nn::Dims;
using nn::Mode;
using nn::Tensor;

/// Normaliser followed by the 2D segmenter.
struct SegModel {
    nn::Normalizer<float> norm;
    nn::UNet<float> seg;

    SegModel() : norm(nn::NormalizerArch{}, 0) {}
    SegModel(nn::NormalizerArch na, nn::UNetArch sa, std::uint64_t seed)
        : norm(na, derive_seed(seed, "normalizer")), seg(sa, derive_seed(seed, "segmenter")) {
        if (sa.spatial_dims != 2 || sa.in_channels != 1) throw ArgumentError("segmenter must be 2D single-channel");
    }

    int num_labels() const { return seg.arch().out_channels; }

    nlohmann::json arch_json() const {
        return {{"normalizer", {{"hidden", norm.arch().hidden}, {"kernel", norm.arch().kernel}}},
                {"segmenter", nn::to_json(seg.arch())}};
    }
};

/// Planes [z0, z0 + n) of a volume as an (n, 1, 1, H, W) tensor.
inline Tensor<float> slice_batch(const Volume& v, int z0, int n) {
    Tensor<float> t(Dims{n, 1, 1, v.shape.h, v.shape.w});
    const std::size_t plane = static_cast<std::size_t>(v.shape.h) * v.shape.w;
    std::copy(v.data.begin() + static_cast<long>(z0 * plane), v.data.begin() + static_cast<long>((z0 + n) * plane),
              t.data.begin());
    return t;
}

/// Planes [z0, z0 + n) of a probability map as an (n, K, 1, H, W) tensor.
inline Tensor<float> slice_batch(const ProbMap& p, int z0, int n) {
    Tensor<float> t(Dims{n, p.num_labels, 1, p.shape.h, p.shape.w});
    const std::size_t plane = static_cast<std::size_t>(p.shape.h) * p.shape.w;
    for (int i = 0; i < n; ++i)
        for (int k = 0; k < p.num_labels; ++k) {
            const float* src = &p.data[k * p.shape.voxels() + (z0 + i) * plane];
            std::copy(src, src + plane, t.channel(i, k));
        }
    return t;
}

/// Writes (n, K, 1, H, W) slice probabilities into planes [z0, z0 + n).
inline void store_slices(const Tensor<float>& probs, int z0, ProbMap& out) {
    const std::size_t plane = static_cast<std::size_t>(out.shape.h) * out.shape.w;
    for (int i = 0; i < probs.dims.n; ++i)
        for (int k = 0; k < probs.dims.c; ++k) {
            const float* src = probs.channel(i, k);
            std::copy(src, src + plane, &out.data[k * out.shape.voxels() + (z0 + i) * plane]);
        }
}

/// Soft segmentation of a canonical-grid volume, slice batches in eval mode.
inline ProbMap predict_probs(const nn::Normalizer<float>& norm, const nn::UNet<float>& seg, const Volume& v,
                             int batch = 16) {
    ProbMap out(seg.arch().out_channels, v.shape, v.spacing);
    for (int z0 = 0; z0 < v.shape.d; z0 += batch) {
        const int n = std::min(batch, v.shape.d - z0);
        const auto x = norm.forward(slice_batch(v, z0, n));
        store_slices(nn::softmax_channels(seg.forward(x, Mode::Eval)), z0, out);
    }
    return out;
}

inline ProbMap predict_probs(const SegModel& m, const Volume& v, int batch = 16) {
    return predict_probs(m.norm, m.seg, v, batch);
}

inline Tensor<float> to_tensor(const ProbMap& p) {
    Tensor<float> t(Dims{1, p.num_labels, p.shape.d, p.shape.h, p.shape.w});
    t.data = p.data;
    return t;
}

inline ProbMap from_tensor(const Tensor<float>& t, Spacing3 spacing) {
    ProbMap p(t.dims.c, Shape3{t.dims.d, t.dims.h, t.dims.w}, spacing);
    std::copy(t.data.begin(), t.data.begin() + static_cast<long>(t.dims.per_sample()), p.data.begin());
    return p;
}

/// Denoised probabilities for one volume (eval mode, no gradient).
inline ProbMap dae_forward(const nn::UNet<float>& dae, const ProbMap& in) {
    if (in.num_labels != dae.arch().in_channels)
        throw ArgumentError("dae: input has " + std::to_string(in.num_labels) + " channels, network expects " +
                            std::to_string(dae.arch().in_channels));
    return from_tensor(nn::softmax_channels(dae.forward(to_tensor(in), Mode::Eval)), in.spacing);
}

// ------------------------------------------------------------- checkpoints

inline void save_seg_model(const std::filesystem::path& dir, const SegModel& m, long step, double score) {
    nn::save_checkpoint(dir, {&m.norm.params(), &m.seg.params()}, {step, score, m.arch_json()});
}

inline SegModel load_seg_model(const std::filesystem::path& dir, nn::CheckpointInfo* info = nullptr) {
    const auto ck = nn::load_checkpoint(dir);
    nn::NormalizerArch na;
    nn::UNetArch sa;
    try {
        na.hidden = ck.info.arch.at("normalizer").at("hidden").get<int>();
        na.kernel = ck.info.arch.at("normalizer").at("kernel").get<int>();
        sa = nn::unet_arch_from_json(ck.info.arch.at("segmenter"));
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("segmentation checkpoint architecture: " + std::string(e.what()));
    }
    SegModel m(na, sa, 0);
    nn::restore_params(ck, m.norm.params());
    nn::restore_params(ck, m.seg.params());
    if (info) *info = ck.info;
    return m;
}

inline void save_dae(const std::filesystem::path& dir, const nn::UNet<float>& dae, long step, double score) {
    nn::save_checkpoint(dir, {&dae.params()}, {step, score, {{"dae", nn::to_json(dae.arch())}}});
}

inline nn::UNet<float> load_dae(const std::filesystem::path& dir, nn::CheckpointInfo* info = nullptr) {
    const auto ck = nn::load_checkpoint(dir);
    nn::UNetArch a;
    try {
        a = nn::unet_arch_from_json(ck.info.arch.at("dae"));
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("dae checkpoint architecture: " + std::string(e.what()));
    }
    nn::UNet<float> dae(a, 0);
    nn::restore_params(ck, dae.params());
    if (info) *info = ck.info;
    return dae;
}

}  // namespace tta
