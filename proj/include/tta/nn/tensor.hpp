#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "tta/error.hpp"

namespace tta::nn {

/// (N, C, D, H, W). 2D networks use D = 1 throughout.
struct Dims {
    int n = 1, c = 1, d = 1, h = 1, w = 1;

    std::size_t spatial() const { return static_cast<std::size_t>(d) * h * w; }
    std::size_t per_sample() const { return static_cast<std::size_t>(c) * spatial(); }
    std::size_t numel() const { return static_cast<std::size_t>(n) * per_sample(); }
    bool operator==(const Dims&) const = default;
    std::string str() const {
        return "(" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(d) + "," + std::to_string(h) +
               "," + std::to_string(w) + ")";
    }
};

template <class T>
struct Tensor {
    Dims dims;
    std::vector<T> data;

    Tensor() = default;
    explicit Tensor(Dims d, T fill = T{}) : dims(d), data(d.numel(), fill) {}

    T* sample(int i) { return data.data() + static_cast<std::size_t>(i) * dims.per_sample(); }
    const T* sample(int i) const { return data.data() + static_cast<std::size_t>(i) * dims.per_sample(); }
    T* channel(int i, int c) { return sample(i) + static_cast<std::size_t>(c) * dims.spatial(); }
    const T* channel(int i, int c) const { return sample(i) + static_cast<std::size_t>(c) * dims.spatial(); }
    std::size_t size() const { return data.size(); }

    template <class U>
    Tensor<U> cast() const {
        Tensor<U> out(dims);
        for (std::size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
        return out;
    }
};

}  // namespace tta::nn
