#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "tta/error.hpp"
#include "tta/rng.hpp"

namespace tta::nn {

/// One named tensor of a model. Non-trainable entries are buffers
/// (batch-norm running statistics) that travel with the checkpoint.
template <class T>
struct ParamTensor {
    std::string name;
    std::vector<int> shape;
    std::vector<T> value;
    bool trainable = true;

    std::size_t numel() const {
        return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                               [](std::size_t a, int b) { return a * static_cast<std::size_t>(b); });
    }
};

/// Gradients aligned index-by-index with a ParamSet.
template <class T>
using Grads = std::vector<std::vector<T>>;

/// Flat, ordered collection of named tensors.
template <class T>
struct ParamSet {
    std::vector<ParamTensor<T>> tensors;

    std::size_t add(std::string name, std::vector<int> shape, T fill, bool trainable = true) {
        ParamTensor<T> p{std::move(name), std::move(shape), {}, trainable};
        p.value.assign(p.numel(), fill);
        tensors.push_back(std::move(p));
        return tensors.size() - 1;
    }

    ParamTensor<T>& operator[](std::size_t i) { return tensors[i]; }
    const ParamTensor<T>& operator[](std::size_t i) const { return tensors[i]; }
    std::size_t size() const { return tensors.size(); }

    std::size_t index_of(const std::string& name) const {
        for (std::size_t i = 0; i < tensors.size(); ++i)
            if (tensors[i].name == name) return i;
        throw ArgumentError("no parameter named '" + name + "'");
    }

    /// Scalar count of trainable tensors (buffers excluded).
    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const auto& t : tensors)
            if (t.trainable) n += t.numel();
        return n;
    }

    Grads<T> zero_grads() const {
        Grads<T> g(tensors.size());
        for (std::size_t i = 0; i < tensors.size(); ++i) g[i].assign(tensors[i].value.size(), T{});
        return g;
    }

    template <class U>
    ParamSet<U> cast() const {
        ParamSet<U> out;
        for (const auto& t : tensors) {
            ParamTensor<U> p{t.name, t.shape, {}, t.trainable};
            p.value.assign(t.value.begin(), t.value.end());
            out.tensors.push_back(std::move(p));
        }
        return out;
    }

    bool operator==(const ParamSet& o) const {
        if (tensors.size() != o.tensors.size()) return false;
        for (std::size_t i = 0; i < tensors.size(); ++i)
            if (tensors[i].name != o.tensors[i].name || tensors[i].shape != o.tensors[i].shape ||
                tensors[i].value != o.tensors[i].value)
                return false;
        return true;
    }
};

template <class T>
void zero(Grads<T>& g) {
    for (auto& v : g) std::fill(v.begin(), v.end(), T{});
}

template <class T>
void scale(Grads<T>& g, T s) {
    for (auto& v : g)
        for (auto& x : v) x *= s;
}

/// He-normal initialisation with the given fan-in.
template <class T>
void he_normal(std::vector<T>& w, int fan_in, Rng& rng, double gain = 1.0) {
    const double std = gain * std::sqrt(2.0 / static_cast<double>(fan_in));
    for (auto& x : w) x = static_cast<T>(std * normal(rng));
}

/// Adam with bias correction. Only trainable tensors in `mask` (or all
/// trainable ones when the mask is empty) are updated.
template <class T>
class Adam {
public:
    explicit Adam(double lr = 1e-3, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {}

    void reset() {
        step_ = 0;
        m_.clear();
        v_.clear();
    }

    long step() const { return step_; }
    double learning_rate() const { return lr_; }

    void update(ParamSet<T>& params, const Grads<T>& grads) {
        if (grads.size() != params.size()) throw ArgumentError("adam: gradient set does not match parameters");
        if (m_.empty()) {
            m_ = params.zero_grads();
            v_ = params.zero_grads();
        }
        ++step_;
        const double c1 = 1.0 - std::pow(b1_, static_cast<double>(step_));
        const double c2 = 1.0 - std::pow(b2_, static_cast<double>(step_));
        for (std::size_t i = 0; i < params.size(); ++i) {
            if (!params[i].trainable) continue;
            auto& w = params[i].value;
            const auto& g = grads[i];
            auto& m = m_[i];
            auto& v = v_[i];
            for (std::size_t j = 0; j < w.size(); ++j) {
                const double gj = static_cast<double>(g[j]);
                m[j] = static_cast<T>(b1_ * m[j] + (1.0 - b1_) * gj);
                v[j] = static_cast<T>(b2_ * v[j] + (1.0 - b2_) * gj * gj);
                const double mh = m[j] / c1, vh = v[j] / c2;
                w[j] = static_cast<T>(w[j] - lr_ * mh / (std::sqrt(vh) + eps_));
            }
        }
    }

private:
    double lr_, b1_, b2_, eps_;
    long step_ = 0;
    Grads<T> m_, v_;
};

}  // namespace tta::nn
