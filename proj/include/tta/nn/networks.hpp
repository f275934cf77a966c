#pragma once

// The three networks:
//   Normalizer  - shallow residual image-to-normalised-image CNN (adapted per image)
//   UNet (2D)   - normalised-image-to-segmentation CNN
//   UNet (3D)   - denoising autoencoder over K-channel label volumes
//
// Networks own their ParamSet. forward() is const and fills a caller-owned
// cache, so one parameter set can serve several threads; backward() consumes
// that cache and accumulates into a caller-owned Grads.

#include <string>
#include <vector>

#include "json.hpp"

#include "tta/nn/layers.hpp"
#include "tta/nn/params.hpp"
#include "tta/rng.hpp"

namespace tta::nn {

enum class Mode { Train, Eval };

// ================================================================ Normalizer

struct NormalizerArch {
    int hidden = 16;  // channels of layers 1 and 2
    int kernel = 3;
};

/// Three 3x3 convolutions (hidden, hidden, 1) with a trainable Gaussian
/// activation exp(-x^2/sigma_c^2) after the first two; the last layer is
/// linear and added to the input.
template <class T>
class Normalizer {
public:
    struct Cache {
        Tensor<T> x, a1, h1, a2, h2;
    };

    Normalizer() : Normalizer(NormalizerArch{}, 0) {}
    Normalizer(NormalizerArch arch, std::uint64_t seed) : arch_(arch) {
        if (arch.kernel % 2 == 0 || arch.kernel < 1) throw ArgumentError("normalizer: kernel must be odd");
        Rng rng(seed);
        const int k = arch.kernel, c = arch.hidden, kk = k * k;
        w1_ = params_.add("norm.l1.weight", {c, 1, 1, k, k}, T{});
        b1_ = params_.add("norm.l1.bias", {c}, T{});
        s1_ = params_.add("norm.l1.log_sigma", {c}, T{});
        w2_ = params_.add("norm.l2.weight", {c, c, 1, k, k}, T{});
        b2_ = params_.add("norm.l2.bias", {c}, T{});
        s2_ = params_.add("norm.l2.log_sigma", {c}, T{});
        w3_ = params_.add("norm.l3.weight", {1, c, 1, k, k}, T{});
        b3_ = params_.add("norm.l3.bias", {1}, T{});
        he_normal(params_[w1_].value, kk, rng);
        he_normal(params_[w2_].value, c * kk, rng);
        he_normal(params_[w3_].value, c * kk, rng, 0.1);
    }

    template <class U>
    Normalizer<U> cast() const {
        Normalizer<U> out(arch_, 0);
        out.params() = params_.template cast<U>();
        return out;
    }

    const NormalizerArch& arch() const { return arch_; }
    ParamSet<T>& params() { return params_; }
    const ParamSet<T>& params() const { return params_; }

    /// Input (N, 1, 1, H, W); output has the same shape.
    Tensor<T> forward(const Tensor<T>& x, Cache& cache) const {
        if (x.dims.c != 1) throw ArgumentError("normalizer: expected single-channel input, got " + x.dims.str());
        const Kernel3 k{1, arch_.kernel, arch_.kernel};
        const int c = arch_.hidden;
        cache.x = x;
        cache.a1 = conv_forward(x, p(w1_), p(b1_), c, k);
        cache.h1 = gaussian_forward(cache.a1, p(s1_));
        cache.a2 = conv_forward(cache.h1, p(w2_), p(b2_), c, k);
        cache.h2 = gaussian_forward(cache.a2, p(s2_));
        Tensor<T> out = conv_forward(cache.h2, p(w3_), p(b3_), 1, k);
        add_inplace(out, x);
        return out;
    }

    Tensor<T> forward(const Tensor<T>& x) const {
        Cache c;
        return forward(x, c);
    }

    /// grads may be null (no parameter gradients); grad_in may be null.
    void backward(const Cache& cache, const Tensor<T>& grad_out, Grads<T>* grads, Tensor<T>* grad_in) const {
        const Kernel3 k{1, arch_.kernel, arch_.kernel};
        const int c = arch_.hidden;
        auto g = [&](std::size_t i) -> T* { return grads ? (*grads)[i].data() : nullptr; };
        Tensor<T> gh2, ga2, gh1, ga1, gx;
        conv_backward(cache.h2, p(w3_), 1, k, grad_out, g(w3_), g(b3_), &gh2);
        gaussian_backward(cache.a2, cache.h2, p(s2_), gh2, g(s2_), &ga2);
        conv_backward(cache.h1, p(w2_), c, k, ga2, g(w2_), g(b2_), &gh1);
        gaussian_backward(cache.a1, cache.h1, p(s1_), gh1, g(s1_), &ga1);
        conv_backward(cache.x, p(w1_), c, k, ga1, g(w1_), g(b1_), grad_in ? &gx : nullptr);
        if (grad_in) {
            add_inplace(gx, grad_out);
            *grad_in = std::move(gx);
        }
    }

    /// Zeroes the last layer, making the module an exact identity.
    void zero_final_layer() {
        std::fill(params_[w3_].value.begin(), params_[w3_].value.end(), T{});
        std::fill(params_[b3_].value.begin(), params_[b3_].value.end(), T{});
    }

    /// Receptive-field radius in pixels (L-infinity).
    int receptive_radius() const { return 3 * (arch_.kernel / 2); }

private:
    const T* p(std::size_t i) const { return params_[i].value.data(); }

    NormalizerArch arch_;
    ParamSet<T> params_;
    std::size_t w1_{}, b1_{}, s1_{}, w2_{}, b2_{}, s2_{}, w3_{}, b3_{};
};

// ====================================================================== UNet

struct UNetArch {
    int spatial_dims = 2;  // 2: kernels 1x3x3, pooling 1x2x2; 3: 3x3x3 / 2x2x2
    int in_channels = 1;
    int out_channels = 2;
    int levels = 3;
    int base_width = 16;
    int convs_per_block = 2;

    int width(int level) const { return base_width << level; }
    Kernel3 kernel() const { return spatial_dims == 3 ? Kernel3{3, 3, 3} : Kernel3{1, 3, 3}; }
    Factors pool() const { return spatial_dims == 3 ? Factors{2, 2, 2} : Factors{1, 2, 2}; }
    int divisor() const { return 1 << (levels - 1); }
};

inline nlohmann::json to_json(const UNetArch& a) {
    return {{"spatial_dims", a.spatial_dims}, {"in_channels", a.in_channels}, {"out_channels", a.out_channels},
            {"levels", a.levels},             {"base_width", a.base_width},   {"convs_per_block", a.convs_per_block}};
}

inline UNetArch unet_arch_from_json(const nlohmann::json& j) {
    UNetArch a;
    a.spatial_dims = j.at("spatial_dims").get<int>();
    a.in_channels = j.at("in_channels").get<int>();
    a.out_channels = j.at("out_channels").get<int>();
    a.levels = j.at("levels").get<int>();
    a.base_width = j.at("base_width").get<int>();
    a.convs_per_block = j.at("convs_per_block").get<int>();
    return a;
}

/// Encoder-decoder with skip connections: each block is convs_per_block x
/// (conv without bias -> batch norm -> ReLU); max-pool down, linear x2 up,
/// skip concatenated before the upsampled path; 1x1 conv head to logits.
template <class T>
class UNet {
public:
    struct Unit {
        std::size_t w, gamma, beta, mean, var;
        int cin, cout;
    };

    struct UnitCache {
        Tensor<T> in, out;
        BatchNormCache<T> bn;
    };

    struct Cache {
        std::vector<std::vector<UnitCache>> enc, dec;
        std::vector<PoolCache<T>> pool;
        Tensor<T> head_in;
        Mode mode = Mode::Eval;
    };

    UNet() : UNet(UNetArch{}, 0) {}
    UNet(UNetArch arch, std::uint64_t seed) : arch_(arch) {
        if (arch.spatial_dims != 2 && arch.spatial_dims != 3) throw ArgumentError("unet: spatial_dims must be 2 or 3");
        if (arch.levels < 1 || arch.base_width < 1 || arch.convs_per_block < 1 || arch.in_channels < 1 ||
            arch.out_channels < 1)
            throw ArgumentError("unet: non-positive architecture field");
        Rng rng(seed);
        const std::string prefix = arch.spatial_dims == 3 ? "dae" : "seg";
        const int kv = arch.kernel().volume();
        auto make_block = [&](const std::string& name, int cin, int cout) {
            std::vector<Unit> units;
            for (int j = 0; j < arch.convs_per_block; ++j) {
                const std::string n = prefix + "." + name + ".conv" + std::to_string(j);
                const int ci = j == 0 ? cin : cout;
                Unit u{};
                u.cin = ci;
                u.cout = cout;
                u.w = params_.add(n + ".weight", {cout, ci, arch.kernel().d, arch.kernel().h, arch.kernel().w}, T{});
                u.gamma = params_.add(n + ".bn.gamma", {cout}, T(1));
                u.beta = params_.add(n + ".bn.beta", {cout}, T{});
                u.mean = params_.add(n + ".bn.running_mean", {cout}, T{}, false);
                u.var = params_.add(n + ".bn.running_var", {cout}, T(1), false);
                he_normal(params_[u.w].value, ci * kv, rng);
                units.push_back(u);
            }
            return units;
        };
        for (int l = 0; l < arch.levels; ++l)
            enc_.push_back(make_block("enc" + std::to_string(l), l == 0 ? arch.in_channels : arch.width(l - 1),
                                      arch.width(l)));
        for (int l = 0; l + 1 < arch.levels; ++l)
            dec_.push_back(make_block("dec" + std::to_string(l), arch.width(l) + arch.width(l + 1), arch.width(l)));
        head_w_ = params_.add(prefix + ".head.weight", {arch.out_channels, arch.width(0), 1, 1, 1}, T{});
        head_b_ = params_.add(prefix + ".head.bias", {arch.out_channels}, T{});
        he_normal(params_[head_w_].value, arch.width(0), rng);
    }

    template <class U>
    UNet<U> cast() const {
        UNet<U> out(arch_, 0);
        out.params() = params_.template cast<U>();
        return out;
    }

    const UNetArch& arch() const { return arch_; }
    ParamSet<T>& params() { return params_; }
    const ParamSet<T>& params() const { return params_; }

    /// Input (N, in_channels, D, H, W); returns logits (N, out_channels, D, H, W).
    Tensor<T> forward(const Tensor<T>& x, Mode mode, Cache& cache) const {
        if (x.dims.c != arch_.in_channels)
            throw ArgumentError("unet: expected " + std::to_string(arch_.in_channels) + " input channels, got " +
                                x.dims.str());
        const Factors pf = arch_.pool();
        const int div = arch_.divisor();
        if (x.dims.h % div || x.dims.w % div || (arch_.spatial_dims == 3 && x.dims.d % div))
            throw ArgumentError("unet: spatial extent " + x.dims.str() + " not divisible by " + std::to_string(div));
        if (arch_.spatial_dims == 2 && x.dims.d != 1) throw ArgumentError("unet: 2D network expects D == 1");
        cache.mode = mode;
        cache.enc.assign(arch_.levels, {});
        cache.dec.assign(arch_.levels - 1, {});
        cache.pool.assign(arch_.levels, {});
        Tensor<T> h = x;
        for (int l = 0; l < arch_.levels; ++l) {
            if (l > 0) h = maxpool_forward(h, pf, cache.pool[l]);
            h = run_block(enc_[l], h, mode, cache.enc[l]);
        }
        for (int l = arch_.levels - 2; l >= 0; --l) {
            Tensor<T> up = upsample_forward(h, pf);
            h = run_block(dec_[l], concat_channels(cache.enc[l].back().out, up), mode, cache.dec[l]);
        }
        cache.head_in = h;
        return conv_forward(h, p(head_w_), p(head_b_), arch_.out_channels, Kernel3{1, 1, 1});
    }

    Tensor<T> forward(const Tensor<T>& x, Mode mode = Mode::Eval) const {
        Cache c;
        return forward(x, mode, c);
    }

    void backward(const Cache& cache, const Tensor<T>& grad_out, Grads<T>* grads, Tensor<T>* grad_in) const {
        const Factors pf = arch_.pool();
        auto g = [&](std::size_t i) -> T* { return grads ? (*grads)[i].data() : nullptr; };
        Tensor<T> gh;
        conv_backward(cache.head_in, p(head_w_), arch_.out_channels, Kernel3{1, 1, 1}, grad_out, g(head_w_),
                      g(head_b_), &gh);
        std::vector<Tensor<T>> gskip(arch_.levels);
        for (int l = 0; l + 1 < arch_.levels; ++l) {
            Tensor<T> gcat = back_block(dec_[l], cache.dec[l], gh, grads, true);
            Tensor<T> gup;
            split_channels(gcat, arch_.width(l), gskip[l], gup);
            gh = upsample_backward(gup, pf);
        }
        for (int l = arch_.levels - 1; l >= 0; --l) {
            if (l < arch_.levels - 1) add_inplace(gh, gskip[l]);
            const bool need_in = l > 0 || grad_in != nullptr;
            Tensor<T> gin = back_block(enc_[l], cache.enc[l], gh, grads, need_in);
            if (l > 0)
                gh = maxpool_backward(gin, cache.pool[l]);
            else if (grad_in)
                *grad_in = std::move(gin);
        }
    }

    /// Folds the batch statistics recorded by a Train-mode forward into the
    /// running averages: r <- (1 - m) r + m * batch (unbiased variance).
    void update_running_stats(const Cache& cache, double momentum = 0.1) {
        if (cache.mode != Mode::Train) return;
        auto fold = [&](const std::vector<Unit>& units, const std::vector<UnitCache>& uc) {
            for (std::size_t j = 0; j < units.size(); ++j) {
                const auto& bn = uc[j].bn;
                const double count = static_cast<double>(uc[j].out.dims.n) * uc[j].out.dims.spatial();
                const double unbias = count > 1 ? count / (count - 1) : 1.0;
                auto& rm = params_[units[j].mean].value;
                auto& rv = params_[units[j].var].value;
                for (int c = 0; c < units[j].cout; ++c) {
                    rm[c] = static_cast<T>((1 - momentum) * rm[c] + momentum * bn.batch_mean[c]);
                    rv[c] = static_cast<T>((1 - momentum) * rv[c] + momentum * bn.batch_var[c] * unbias);
                }
            }
        };
        for (int l = 0; l < arch_.levels; ++l) fold(enc_[l], cache.enc[l]);
        for (int l = 0; l + 1 < arch_.levels; ++l) fold(dec_[l], cache.dec[l]);
    }

    /// Layer manifest: one entry per convolution in forward order.
    nlohmann::json layer_manifest() const {
        nlohmann::json layers = nlohmann::json::array();
        auto add = [&](const std::vector<Unit>& units) {
            for (const auto& u : units)
                layers.push_back({{"name", params_[u.w].name}, {"shape", params_[u.w].shape}});
        };
        for (const auto& b : enc_) add(b);
        for (int l = arch_.levels - 2; l >= 0; --l) add(dec_[l]);
        layers.push_back({{"name", params_[head_w_].name}, {"shape", params_[head_w_].shape}});
        return {{"arch", to_json(arch_)}, {"layers", layers}, {"parameter_count", params_.parameter_count()}};
    }

private:
    const T* p(std::size_t i) const { return params_[i].value.data(); }

    Tensor<T> run_block(const std::vector<Unit>& units, Tensor<T> h, Mode mode, std::vector<UnitCache>& cache) const {
        cache.resize(units.size());
        const Kernel3 k = arch_.kernel();
        for (std::size_t j = 0; j < units.size(); ++j) {
            const Unit& u = units[j];
            UnitCache& c = cache[j];
            c.in = std::move(h);
            Tensor<T> a = conv_forward(c.in, p(u.w), static_cast<const T*>(nullptr), u.cout, k);
            c.out = batchnorm_forward(a, p(u.gamma), p(u.beta), p(u.mean), p(u.var), mode == Mode::Train, c.bn);
            relu_inplace(c.out);
            h = c.out;
        }
        return h;
    }

    Tensor<T> back_block(const std::vector<Unit>& units, const std::vector<UnitCache>& cache, const Tensor<T>& grad,
                         Grads<T>* grads, bool need_input_grad) const {
        const Kernel3 k = arch_.kernel();
        auto g = [&](std::size_t i) -> T* { return grads ? (*grads)[i].data() : nullptr; };
        Tensor<T> gh = grad;
        for (std::size_t jj = units.size(); jj-- > 0;) {
            const Unit& u = units[jj];
            const UnitCache& c = cache[jj];
            Tensor<T> gb = relu_backward(c.out, gh);
            Tensor<T> ga;
            batchnorm_backward(gb, p(u.gamma), c.bn, g(u.gamma), g(u.beta), &ga);
            const bool want_in = jj > 0 || need_input_grad;
            conv_backward(c.in, p(u.w), u.cout, k, ga, g(u.w), static_cast<T*>(nullptr), want_in ? &gh : nullptr);
        }
        return gh;
    }

    UNetArch arch_;
    ParamSet<T> params_;
    std::vector<std::vector<Unit>> enc_, dec_;
    std::size_t head_w_{}, head_b_{};
};

}  // namespace tta::nn
