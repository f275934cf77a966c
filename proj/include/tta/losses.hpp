#pragma once

#include <vector>

#include "tta/error.hpp"
#include "tta/nn/tensor.hpp"
#include "tta/volume.hpp"

namespace tta {

inline constexpr double kDiceEps = 1e-6;

/// Soft Dice loss with squared denominators:
///   L = 1 - mean_{k>=1} (2 sum p q + eps) / (sum p^2 + sum q^2 + eps)
/// Sums run over every sample and voxel of the batch. Label 0 is excluded.
/// When `grad` is non-null it receives dL/dp with the layout of `probs`.
template <class T>
T dice_loss(const nn::Tensor<T>& probs, const nn::Tensor<T>& target, nn::Tensor<T>* grad = nullptr) {
    if (!(probs.dims == target.dims))
        throw ArgumentError("dice_loss: prediction " + probs.dims.str() + " and target " + target.dims.str() +
                            " differ");
    const int k = probs.dims.c;
    if (k < 2) throw ArgumentError("dice_loss: need at least two classes");
    const std::size_t sp = probs.dims.spatial();
    std::vector<double> pq(k, 0.0), pp(k, 0.0), qq(k, 0.0);
    for (int i = 0; i < probs.dims.n; ++i)
        for (int c = 1; c < k; ++c) {
            const T* p = probs.channel(i, c);
            const T* q = target.channel(i, c);
            for (std::size_t j = 0; j < sp; ++j) {
                pq[c] += static_cast<double>(p[j]) * q[j];
                pp[c] += static_cast<double>(p[j]) * p[j];
                qq[c] += static_cast<double>(q[j]) * q[j];
            }
        }
    double mean_dice = 0.0;
    std::vector<double> num(k), den(k);
    for (int c = 1; c < k; ++c) {
        num[c] = 2.0 * pq[c] + kDiceEps;
        den[c] = pp[c] + qq[c] + kDiceEps;
        mean_dice += num[c] / den[c];
    }
    const double fg = static_cast<double>(k - 1);
    mean_dice /= fg;
    if (grad) {
        *grad = nn::Tensor<T>(probs.dims);
        for (int i = 0; i < probs.dims.n; ++i)
            for (int c = 1; c < k; ++c) {
                const T* p = probs.channel(i, c);
                const T* q = target.channel(i, c);
                T* g = grad->channel(i, c);
                const double a = 2.0 / den[c], b = 2.0 * num[c] / (den[c] * den[c]);
                for (std::size_t j = 0; j < sp; ++j) g[j] = static_cast<T>(-(a * q[j] - b * p[j]) / fg);
            }
    }
    return static_cast<T>(1.0 - mean_dice);
}

}  // namespace tta
