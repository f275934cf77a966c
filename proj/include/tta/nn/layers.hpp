#pragma once

// Stateless layer kernels with explicit backward passes. Every function is a
// template over the scalar type so the same code runs in float for training
// and in double for gradient checks.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include <Eigen/Core>

#include "tta/nn/tensor.hpp"

namespace tta::nn {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Odd kernel extents; convolutions are stride 1 with "same" zero padding.
struct Kernel3 {
    int d = 1, h = 3, w = 3;
    int volume() const { return d * h * w; }
};

// ---------------------------------------------------------------- convolution

template <class T>
void im2col(const T* in, int c, int d, int h, int w, Kernel3 k, T* cols) {
    const int pd = k.d / 2, ph = k.h / 2, pw = k.w / 2;
    const std::size_t plane = static_cast<std::size_t>(d) * h * w;
    std::size_t row = 0;
    for (int ch = 0; ch < c; ++ch)
        for (int kz = 0; kz < k.d; ++kz)
            for (int ky = 0; ky < k.h; ++ky)
                for (int kx = 0; kx < k.w; ++kx, ++row) {
                    T* dst = cols + row * plane;
                    const T* src = in + static_cast<std::size_t>(ch) * plane;
                    const int ox = kx - pw;
                    const int x0 = std::max(0, -ox), x1 = std::min(w, w - ox);
                    for (int z = 0; z < d; ++z) {
                        const int sz = z + kz - pd;
                        for (int y = 0; y < h; ++y) {
                            const int sy = y + ky - ph;
                            T* o = dst + (static_cast<std::size_t>(z) * h + y) * w;
                            if (sz < 0 || sz >= d || sy < 0 || sy >= h) {
                                std::fill(o, o + w, T{});
                                continue;
                            }
                            const T* s = src + (static_cast<std::size_t>(sz) * h + sy) * w;
                            std::fill(o, o + x0, T{});
                            for (int x = x0; x < x1; ++x) o[x] = s[x + ox];
                            std::fill(o + std::max(x0, x1), o + w, T{});
                        }
                    }
                }
}

template <class T>
void col2im(const T* cols, int c, int d, int h, int w, Kernel3 k, T* out) {
    const int pd = k.d / 2, ph = k.h / 2, pw = k.w / 2;
    const std::size_t plane = static_cast<std::size_t>(d) * h * w;
    std::fill(out, out + c * plane, T{});
    std::size_t row = 0;
    for (int ch = 0; ch < c; ++ch)
        for (int kz = 0; kz < k.d; ++kz)
            for (int ky = 0; ky < k.h; ++ky)
                for (int kx = 0; kx < k.w; ++kx, ++row) {
                    const T* src = cols + row * plane;
                    T* dst = out + static_cast<std::size_t>(ch) * plane;
                    const int ox = kx - pw;
                    const int x0 = std::max(0, -ox), x1 = std::min(w, w - ox);
                    for (int z = 0; z < d; ++z) {
                        const int sz = z + kz - pd;
                        if (sz < 0 || sz >= d) continue;
                        for (int y = 0; y < h; ++y) {
                            const int sy = y + ky - ph;
                            if (sy < 0 || sy >= h) continue;
                            const T* s = src + (static_cast<std::size_t>(z) * h + y) * w;
                            T* o = dst + (static_cast<std::size_t>(sz) * h + sy) * w;
                            for (int x = x0; x < x1; ++x) o[x + ox] += s[x];
                        }
                    }
                }
}

/// out = conv(in, weight) + bias. weight layout (cout, cin, kd, kh, kw);
/// bias may be null.
template <class T>
Tensor<T> conv_forward(const Tensor<T>& in, const T* weight, const T* bias, int cout, Kernel3 k) {
    const Dims di = in.dims;
    Tensor<T> out(Dims{di.n, cout, di.d, di.h, di.w});
    const int rows = di.c * k.volume();
    const auto plane = static_cast<Eigen::Index>(di.spatial());
    Eigen::Map<const RowMat<T>> wm(weight, cout, rows);
    const bool pointwise = k.volume() == 1;
    std::vector<T> cols(pointwise ? 0 : static_cast<std::size_t>(rows) * plane);
    for (int i = 0; i < di.n; ++i) {
        const T* src = in.sample(i);
        if (!pointwise) {
            im2col(src, di.c, di.d, di.h, di.w, k, cols.data());
            src = cols.data();
        }
        Eigen::Map<const RowMat<T>> cm(src, rows, plane);
        Eigen::Map<RowMat<T>> om(out.sample(i), cout, plane);
        om.noalias() = wm * cm;
        if (bias)
            for (int o = 0; o < cout; ++o) om.row(o).array() += bias[o];
    }
    return out;
}

/// Accumulates into grad_weight / grad_bias (when non-null) and overwrites
/// grad_in (when non-null).
template <class T>
void conv_backward(const Tensor<T>& in, const T* weight, int cout, Kernel3 k, const Tensor<T>& grad_out,
                   T* grad_weight, T* grad_bias, Tensor<T>* grad_in) {
    const Dims di = in.dims;
    const int rows = di.c * k.volume();
    const auto plane = static_cast<Eigen::Index>(di.spatial());
    const bool pointwise = k.volume() == 1;
    Eigen::Map<const RowMat<T>> wm(weight, cout, rows);
    std::vector<T> cols(pointwise ? 0 : static_cast<std::size_t>(rows) * plane);
    std::vector<T> gcols(pointwise || !grad_in ? 0 : static_cast<std::size_t>(rows) * plane);
    if (grad_in) *grad_in = Tensor<T>(di);
    for (int i = 0; i < di.n; ++i) {
        Eigen::Map<const RowMat<T>> gm(grad_out.sample(i), cout, plane);
        if (grad_bias)
            for (int o = 0; o < cout; ++o) {
                // plain loop: Eigen's vectorised redux order depends on pointer alignment
                const T* g = grad_out.sample(i) + static_cast<std::size_t>(o) * plane;
                double s = 0.0;
                for (Eigen::Index j = 0; j < plane; ++j) s += g[j];
                grad_bias[o] += static_cast<T>(s);
            }
        if (grad_weight) {
            const T* src = in.sample(i);
            if (!pointwise) {
                im2col(src, di.c, di.d, di.h, di.w, k, cols.data());
                src = cols.data();
            }
            Eigen::Map<const RowMat<T>> cm(src, rows, plane);
            Eigen::Map<RowMat<T>> gw(grad_weight, cout, rows);
            gw.noalias() += gm * cm.transpose();
        }
        if (grad_in) {
            if (pointwise) {
                Eigen::Map<RowMat<T>> gi(grad_in->sample(i), rows, plane);
                gi.noalias() = wm.transpose() * gm;
            } else {
                Eigen::Map<RowMat<T>> gc(gcols.data(), rows, plane);
                gc.noalias() = wm.transpose() * gm;
                col2im(gcols.data(), di.c, di.d, di.h, di.w, k, grad_in->sample(i));
            }
        }
    }
}

// ----------------------------------------------------------------- batch norm

template <class T>
struct BatchNormCache {
    std::vector<T> xhat;
    std::vector<T> invstd;  // per channel
    std::vector<T> batch_mean, batch_var;  // train mode only; biased variance
    bool train = false;
};

inline constexpr double kBatchNormEps = 1e-5;

/// Normalises each channel over (N, D, H, W). Train mode uses batch
/// statistics; eval mode uses the running ones.
template <class T>
Tensor<T> batchnorm_forward(const Tensor<T>& in, const T* gamma, const T* beta, const T* running_mean,
                            const T* running_var, bool train, BatchNormCache<T>& cache) {
    const Dims di = in.dims;
    const std::size_t sp = di.spatial();
    Tensor<T> out(di);
    cache.train = train;
    cache.xhat.resize(in.size());
    cache.invstd.assign(di.c, T{});
    if (train) {
        cache.batch_mean.assign(di.c, T{});
        cache.batch_var.assign(di.c, T{});
    }
    const double count = static_cast<double>(di.n) * static_cast<double>(sp);
    for (int c = 0; c < di.c; ++c) {
        double mean, var;
        if (train) {
            double s = 0.0;
            for (int i = 0; i < di.n; ++i) {
                const T* p = in.channel(i, c);
                for (std::size_t j = 0; j < sp; ++j) s += p[j];
            }
            mean = s / count;
            double v = 0.0;
            for (int i = 0; i < di.n; ++i) {
                const T* p = in.channel(i, c);
                for (std::size_t j = 0; j < sp; ++j) v += (p[j] - mean) * (p[j] - mean);
            }
            var = v / count;
            cache.batch_mean[c] = static_cast<T>(mean);
            cache.batch_var[c] = static_cast<T>(var);
        } else {
            mean = running_mean[c];
            var = running_var[c];
        }
        const double inv = 1.0 / std::sqrt(var + kBatchNormEps);
        cache.invstd[c] = static_cast<T>(inv);
        for (int i = 0; i < di.n; ++i) {
            const T* p = in.channel(i, c);
            T* xh = cache.xhat.data() + (p - in.data.data());
            T* o = out.channel(i, c);
            for (std::size_t j = 0; j < sp; ++j) {
                xh[j] = static_cast<T>((p[j] - mean) * inv);
                o[j] = gamma[c] * xh[j] + beta[c];
            }
        }
    }
    return out;
}

template <class T>
void batchnorm_backward(const Tensor<T>& grad_out, const T* gamma, const BatchNormCache<T>& cache, T* grad_gamma,
                        T* grad_beta, Tensor<T>* grad_in) {
    const Dims di = grad_out.dims;
    const std::size_t sp = di.spatial();
    const double count = static_cast<double>(di.n) * static_cast<double>(sp);
    if (grad_in) *grad_in = Tensor<T>(di);
    for (int c = 0; c < di.c; ++c) {
        double sg = 0.0, sgx = 0.0;
        for (int i = 0; i < di.n; ++i) {
            const T* g = grad_out.channel(i, c);
            const T* xh = cache.xhat.data() + (g - grad_out.data.data());
            for (std::size_t j = 0; j < sp; ++j) {
                sg += g[j];
                sgx += g[j] * xh[j];
            }
        }
        if (grad_gamma) grad_gamma[c] += static_cast<T>(sgx);
        if (grad_beta) grad_beta[c] += static_cast<T>(sg);
        if (!grad_in) continue;
        const double scale = static_cast<double>(gamma[c]) * cache.invstd[c];
        for (int i = 0; i < di.n; ++i) {
            const T* g = grad_out.channel(i, c);
            const T* xh = cache.xhat.data() + (g - grad_out.data.data());
            T* gi = grad_in->channel(i, c);
            if (cache.train) {
                for (std::size_t j = 0; j < sp; ++j)
                    gi[j] = static_cast<T>(scale * (g[j] - sg / count - xh[j] * sgx / count));
            } else {
                for (std::size_t j = 0; j < sp; ++j) gi[j] = static_cast<T>(scale * g[j]);
            }
        }
    }
}

// ---------------------------------------------------------------- activations

template <class T>
void relu_inplace(Tensor<T>& t) {
    for (auto& x : t.data) x = x < T{} ? T{} : x;  // NaN passes through
}

/// grad_in = grad_out where the (post-ReLU) output is positive.
template <class T>
Tensor<T> relu_backward(const Tensor<T>& out, const Tensor<T>& grad_out) {
    Tensor<T> g(grad_out.dims);
    for (std::size_t i = 0; i < g.size(); ++i) g.data[i] = out.data[i] > T{} ? grad_out.data[i] : T{};
    return g;
}

/// exp(-x^2 / sigma^2); sigma > 0.
template <class T>
T gaussian_act(T x, T sigma) {
    if (!(sigma > T{})) throw ArgumentError("gaussian_act: sigma must be positive");
    return std::exp(-(x * x) / (sigma * sigma));
}

/// d/dx exp(-x^2/sigma^2) = -2x/sigma^2 * exp(-x^2/sigma^2).
template <class T>
T gaussian_act_grad(T x, T sigma) {
    return T(-2) * x / (sigma * sigma) * gaussian_act(x, sigma);
}

/// Per-channel Gaussian activation with sigma_c = exp(log_sigma[c]).
template <class T>
Tensor<T> gaussian_forward(const Tensor<T>& in, const T* log_sigma) {
    Tensor<T> out(in.dims);
    const std::size_t sp = in.dims.spatial();
    for (int i = 0; i < in.dims.n; ++i)
        for (int c = 0; c < in.dims.c; ++c) {
            const T inv2 = std::exp(T(-2) * log_sigma[c]);
            const T* p = in.channel(i, c);
            T* o = out.channel(i, c);
            for (std::size_t j = 0; j < sp; ++j) o[j] = std::exp(-p[j] * p[j] * inv2);
        }
    return out;
}

template <class T>
void gaussian_backward(const Tensor<T>& in, const Tensor<T>& out, const T* log_sigma, const Tensor<T>& grad_out,
                       T* grad_log_sigma, Tensor<T>* grad_in) {
    const std::size_t sp = in.dims.spatial();
    if (grad_in) *grad_in = Tensor<T>(in.dims);
    for (int i = 0; i < in.dims.n; ++i)
        for (int c = 0; c < in.dims.c; ++c) {
            const T inv2 = std::exp(T(-2) * log_sigma[c]);
            const T* x = in.channel(i, c);
            const T* y = out.channel(i, c);
            const T* g = grad_out.channel(i, c);
            double gs = 0.0;
            for (std::size_t j = 0; j < sp; ++j) gs += g[j] * y[j] * 2 * x[j] * x[j] * inv2;
            if (grad_log_sigma) grad_log_sigma[c] += static_cast<T>(gs);
            if (grad_in) {
                T* gi = grad_in->channel(i, c);
                for (std::size_t j = 0; j < sp; ++j) gi[j] = g[j] * y[j] * T(-2) * x[j] * inv2;
            }
        }
}

/// Softmax over the channel axis.
template <class T>
Tensor<T> softmax_channels(const Tensor<T>& logits) {
    Tensor<T> out(logits.dims);
    const std::size_t sp = logits.dims.spatial();
    const int k = logits.dims.c;
    for (int i = 0; i < logits.dims.n; ++i) {
        const T* l = logits.sample(i);
        T* o = out.sample(i);
        for (std::size_t j = 0; j < sp; ++j) {
            T m = l[j];
            for (int c = 1; c < k; ++c) m = std::max(m, l[c * sp + j]);
            T s{};
            for (int c = 0; c < k; ++c) s += o[c * sp + j] = std::exp(l[c * sp + j] - m);
            for (int c = 0; c < k; ++c) o[c * sp + j] /= s;
        }
    }
    return out;
}

template <class T>
Tensor<T> softmax_backward(const Tensor<T>& probs, const Tensor<T>& grad_probs) {
    Tensor<T> g(probs.dims);
    const std::size_t sp = probs.dims.spatial();
    const int k = probs.dims.c;
    for (int i = 0; i < probs.dims.n; ++i) {
        const T* p = probs.sample(i);
        const T* gp = grad_probs.sample(i);
        T* o = g.sample(i);
        for (std::size_t j = 0; j < sp; ++j) {
            T dot{};
            for (int c = 0; c < k; ++c) dot += p[c * sp + j] * gp[c * sp + j];
            for (int c = 0; c < k; ++c) o[c * sp + j] = p[c * sp + j] * (gp[c * sp + j] - dot);
        }
    }
    return g;
}

// --------------------------------------------------------- pooling / resizing

struct Factors {
    int d = 1, h = 2, w = 2;
};

template <class T>
struct PoolCache {
    Dims in_dims;
    std::vector<std::uint32_t> argmax;
};

template <class T>
Tensor<T> maxpool_forward(const Tensor<T>& in, Factors f, PoolCache<T>& cache) {
    const Dims di = in.dims;
    if (di.d % f.d || di.h % f.h || di.w % f.w)
        throw ArgumentError("maxpool: spatial extent " + di.str() + " not divisible by pooling factor");
    Dims od{di.n, di.c, di.d / f.d, di.h / f.h, di.w / f.w};
    Tensor<T> out(od);
    cache.in_dims = di;
    cache.argmax.resize(out.size());
    std::size_t o = 0;
    for (int i = 0; i < di.n; ++i)
        for (int c = 0; c < di.c; ++c) {
            const T* p = in.channel(i, c);
            for (int z = 0; z < od.d; ++z)
                for (int y = 0; y < od.h; ++y)
                    for (int x = 0; x < od.w; ++x, ++o) {
                        T best = -std::numeric_limits<T>::infinity();
                        std::uint32_t bi = 0;
                        for (int a = 0; a < f.d; ++a)
                            for (int b = 0; b < f.h; ++b)
                                for (int e = 0; e < f.w; ++e) {
                                    const auto idx = static_cast<std::uint32_t>(
                                        ((z * f.d + a) * di.h + (y * f.h + b)) * di.w + (x * f.w + e));
                                    if (p[idx] > best) {
                                        best = p[idx];
                                        bi = idx;
                                    }
                                }
                        out.data[o] = best;
                        cache.argmax[o] = bi;
                    }
        }
    return out;
}

template <class T>
Tensor<T> maxpool_backward(const Tensor<T>& grad_out, const PoolCache<T>& cache) {
    Tensor<T> g(cache.in_dims);
    const std::size_t osp = grad_out.dims.spatial();
    for (int i = 0; i < grad_out.dims.n; ++i)
        for (int c = 0; c < grad_out.dims.c; ++c) {
            const T* go = grad_out.channel(i, c);
            T* gi = g.channel(i, c);
            const std::uint32_t* am = cache.argmax.data() + (go - grad_out.data.data());
            for (std::size_t j = 0; j < osp; ++j) gi[am[j]] += go[j];
        }
    return g;
}

namespace detail {

// Linear x2 upsampling taps along one axis, half-pixel centres, edge clamp.
struct UpTap {
    int i0, i1;
    double w1;
};

inline std::vector<UpTap> up_taps(int n_in) {
    std::vector<UpTap> taps(2 * n_in);
    for (int j = 0; j < 2 * n_in; ++j) {
        double c = std::clamp((j + 0.5) / 2.0 - 0.5, 0.0, static_cast<double>(n_in - 1));
        const int i0 = static_cast<int>(std::floor(c));
        taps[j] = {i0, std::min(i0 + 1, n_in - 1), c - i0};
    }
    return taps;
}

// Doubles axis `axis` (2 = d, 3 = h, 4 = w). With `transpose`, maps a
// gradient of the doubled tensor back onto the original extent.
template <class T>
Tensor<T> up_axis(const Tensor<T>& in, int axis, bool transpose) {
    Dims di = in.dims;
    Dims od = di;
    int* ext_out = axis == 2 ? &od.d : axis == 3 ? &od.h : &od.w;
    const int n_small = transpose ? *ext_out / 2 : *ext_out;
    *ext_out = transpose ? n_small : n_small * 2;
    const auto taps = up_taps(n_small);
    Tensor<T> out(od);
    // Generic strided walk: outer = n*c*(axes before), inner = product of axes after.
    const std::size_t inner = axis == 2 ? static_cast<std::size_t>(di.h) * di.w : axis == 3 ? di.w : 1;
    const std::size_t outer = static_cast<std::size_t>(di.n) * di.c *
                              (axis == 2 ? 1 : axis == 3 ? di.d : static_cast<std::size_t>(di.d) * di.h);
    const int n_big = 2 * n_small;
    for (std::size_t o = 0; o < outer; ++o) {
        if (!transpose) {
            const T* src = in.data.data() + o * n_small * inner;
            T* dst = out.data.data() + o * n_big * inner;
            for (int j = 0; j < n_big; ++j) {
                const auto& t = taps[j];
                const T w0 = static_cast<T>(1.0 - t.w1), w1 = static_cast<T>(t.w1);
                for (std::size_t r = 0; r < inner; ++r)
                    dst[j * inner + r] = w0 * src[t.i0 * inner + r] + w1 * src[t.i1 * inner + r];
            }
        } else {
            const T* src = in.data.data() + o * n_big * inner;
            T* dst = out.data.data() + o * n_small * inner;
            for (int j = 0; j < n_big; ++j) {
                const auto& t = taps[j];
                const T w0 = static_cast<T>(1.0 - t.w1), w1 = static_cast<T>(t.w1);
                for (std::size_t r = 0; r < inner; ++r) {
                    dst[t.i0 * inner + r] += w0 * src[j * inner + r];
                    dst[t.i1 * inner + r] += w1 * src[j * inner + r];
                }
            }
        }
    }
    return out;
}

}  // namespace detail

/// Separable (bi/tri)linear upsampling by the given factors (each 1 or 2).
template <class T>
Tensor<T> upsample_forward(const Tensor<T>& in, Factors f) {
    Tensor<T> t = in;
    if (f.d == 2) t = detail::up_axis(t, 2, false);
    if (f.h == 2) t = detail::up_axis(t, 3, false);
    if (f.w == 2) t = detail::up_axis(t, 4, false);
    return t;
}

template <class T>
Tensor<T> upsample_backward(const Tensor<T>& grad_out, Factors f) {
    Tensor<T> t = grad_out;
    if (f.w == 2) t = detail::up_axis(t, 4, true);
    if (f.h == 2) t = detail::up_axis(t, 3, true);
    if (f.d == 2) t = detail::up_axis(t, 2, true);
    return t;
}

// ------------------------------------------------------------------- plumbing

template <class T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.dims.n != b.dims.n || a.dims.spatial() != b.dims.spatial())
        throw ArgumentError("concat: incompatible tensors " + a.dims.str() + " and " + b.dims.str());
    Dims od = a.dims;
    od.c = a.dims.c + b.dims.c;
    Tensor<T> out(od);
    for (int i = 0; i < od.n; ++i) {
        std::copy(a.sample(i), a.sample(i) + a.dims.per_sample(), out.sample(i));
        std::copy(b.sample(i), b.sample(i) + b.dims.per_sample(), out.sample(i) + a.dims.per_sample());
    }
    return out;
}

/// Splits a channel-concatenated gradient into its first `c_first` channels and the rest.
template <class T>
void split_channels(const Tensor<T>& g, int c_first, Tensor<T>& first, Tensor<T>& second) {
    Dims d1 = g.dims, d2 = g.dims;
    d1.c = c_first;
    d2.c = g.dims.c - c_first;
    first = Tensor<T>(d1);
    second = Tensor<T>(d2);
    for (int i = 0; i < g.dims.n; ++i) {
        const T* s = g.sample(i);
        std::copy(s, s + d1.per_sample(), first.sample(i));
        std::copy(s + d1.per_sample(), s + g.dims.per_sample(), second.sample(i));
    }
}

template <class T>
void add_inplace(Tensor<T>& a, const Tensor<T>& b) {
    for (std::size_t i = 0; i < a.size(); ++i) a.data[i] += b.data[i];
}

}  // namespace tta::nn
