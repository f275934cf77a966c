#include <gtest/gtest.h>

#include "gradcheck.hpp"
#include "tta/nn/networks.hpp"

using namespace tta;
using namespace tta::nn;

namespace {

Tensor<double> random_tensor(Dims d, std::uint64_t seed, double lo = -1, double hi = 1) {
    Rng rng(seed);
    Tensor<double> t(d);
    for (auto& v : t.data) v = uniform(rng, lo, hi);
    return t;
}

double weighted_sum(const Tensor<double>& t, const Tensor<double>& r) {
    double s = 0;
    for (std::size_t i = 0; i < t.size(); ++i) s += t.data[i] * r.data[i];
    return s;
}

// Randomises batch-norm affine parameters and running statistics so eval-mode
// checks do not sit at the trivial initial point.
template <class Net>
void perturb_bn(Net& net, std::uint64_t seed) {
    Rng rng(seed);
    for (auto& t : net.params().tensors) {
        if (t.name.find(".bn.gamma") != std::string::npos)
            for (auto& v : t.value) v = uniform(rng, 0.5, 1.5);
        if (t.name.find(".bn.beta") != std::string::npos || t.name.find(".bn.running_mean") != std::string::npos)
            for (auto& v : t.value) v = uniform(rng, -0.3, 0.3);
        if (t.name.find(".bn.running_var") != std::string::npos)
            for (auto& v : t.value) v = uniform(rng, 0.5, 2.0);
    }
}

}  // namespace

TEST(Normalizer, ParameterLayout) {
    Normalizer<float> n(NormalizerArch{}, 1);
    // 16*9+16+16 + 16*16*9+16+16 + 16*9+1
    EXPECT_EQ(n.params().parameter_count(), 176u + 2336u + 145u);
    EXPECT_EQ(n.receptive_radius(), 3);
    EXPECT_EQ(n.params()[0].name, "norm.l1.weight");
    for (std::size_t i : {n.params().index_of("norm.l1.log_sigma"), n.params().index_of("norm.l2.log_sigma")})
        for (float v : n.params()[i].value) EXPECT_EQ(v, 0.0f);  // sigma = 1
}

TEST(Normalizer, ZeroFinalLayerIsIdentity) {
    Normalizer<float> n(NormalizerArch{}, 2);
    n.zero_final_layer();
    Tensor<float> x(Dims{3, 1, 1, 16, 16});
    Rng rng(3);
    for (auto& v : x.data) v = static_cast<float>(uniform(rng, 0, 1));
    EXPECT_EQ(n.forward(x).data, x.data);
}

TEST(Normalizer, MultiChannelInputRejected) {
    Normalizer<float> n(NormalizerArch{}, 2);
    EXPECT_THROW(n.forward(Tensor<float>(Dims{1, 2, 1, 8, 8})), ArgumentError);
}

TEST(Normalizer, SevenBySevenLocality) {
    Normalizer<double> n(NormalizerArch{}, 4);
    auto x = random_tensor({1, 1, 1, 20, 20}, 5, 0, 1);
    const auto base = n.forward(x);
    for (auto [py, px] : {std::pair{10, 10}, std::pair{0, 0}, std::pair{19, 3}}) {
        auto xp = x;
        xp.data[py * 20 + px] += 0.5;
        const auto out = n.forward(xp);
        for (int y = 0; y < 20; ++y)
            for (int xx = 0; xx < 20; ++xx) {
                const bool inside = std::abs(y - py) <= 3 && std::abs(xx - px) <= 3;
                const bool changed = out.data[y * 20 + xx] != base.data[y * 20 + xx];
                if (!inside) {
                    EXPECT_FALSE(changed) << y << "," << xx;
                }
            }
        // the corners of the window are reached
        const int cy = py + 3 <= 19 ? py + 3 : py - 3, cx = px + 3 <= 19 ? px + 3 : px - 3;
        EXPECT_NE(out.data[cy * 20 + cx], base.data[cy * 20 + cx]);
    }
}

TEST(Normalizer, GradientsMatchFiniteDifferences) {
    Normalizer<double> n(NormalizerArch{}, 6);
    Rng rng(7);
    for (auto& t : n.params().tensors)
        if (t.name.find("log_sigma") != std::string::npos)
            for (auto& v : t.value) v = uniform(rng, -0.3, 0.3);
    auto x = random_tensor({2, 1, 1, 16, 16}, 8, 0, 1);
    const auto r = random_tensor({2, 1, 1, 16, 16}, 9);
    Normalizer<double>::Cache c;
    n.forward(x, c);
    Grads<double> g = n.params().zero_grads();
    Tensor<double> gx;
    n.backward(c, r, &g, &gx);
    auto loss = [&] { return weighted_sum(n.forward(x), r); };
    for (std::size_t i = 0; i < n.params().size(); ++i) {
        const auto res = testutil::check_entries(n.params()[i].value, g[i], loss, 40, i);
        EXPECT_LT(res.rel_error, 1e-4) << n.params()[i].name;
    }
    EXPECT_LT(testutil::check_entries(x.data, gx.data, loss, 40, 99).rel_error, 1e-4);
}

TEST(UNet, OutputShapeAndSoftmax) {
    UNet<float> s(UNetArch{2, 1, 4, 3, 8, 2}, 1);
    Tensor<float> x(Dims{2, 1, 1, 16, 16}, 0.5f);
    const auto y = s.forward(x);
    EXPECT_EQ(y.dims, (Dims{2, 4, 1, 16, 16}));
    const auto p = softmax_channels(y);
    for (std::size_t j = 0; j < 256; ++j) {
        float sum = 0;
        for (int c = 0; c < 4; ++c) sum += p.channel(1, c)[j];
        EXPECT_NEAR(sum, 1.0f, 1e-5f);
    }
}

TEST(UNet, Rejections) {
    UNet<float> s(UNetArch{2, 1, 4, 3, 8, 2}, 1);
    EXPECT_THROW(s.forward(Tensor<float>(Dims{1, 1, 1, 18, 16})), ArgumentError);
    EXPECT_THROW(s.forward(Tensor<float>(Dims{1, 2, 1, 16, 16})), ArgumentError);
    EXPECT_THROW(s.forward(Tensor<float>(Dims{1, 1, 2, 16, 16})), ArgumentError);
    UNet<float> d(UNetArch{3, 4, 4, 3, 4, 2}, 1);
    EXPECT_THROW(d.forward(Tensor<float>(Dims{1, 3, 8, 8, 8})), ArgumentError);
}

TEST(UNet, EvalModeIndependentOfBatchComposition) {
    UNet<float> s(UNetArch{2, 1, 3, 3, 8, 2}, 2);
    Rng rng(1);
    Tensor<float> a(Dims{1, 1, 1, 16, 16}), batch(Dims{3, 1, 1, 16, 16});
    for (auto& v : a.data) v = static_cast<float>(uniform(rng, 0, 1));
    for (auto& v : batch.data) v = static_cast<float>(uniform(rng, 0, 1));
    std::copy(a.data.begin(), a.data.end(), batch.sample(1));
    const auto ya = s.forward(a);
    const auto yb = s.forward(batch);
    EXPECT_TRUE(std::equal(ya.data.begin(), ya.data.end(), yb.sample(1)));
}

TEST(UNet, ManifestMatchesShapeWalk) {
    const UNetArch arch{2, 1, 4, 3, 16, 2};
    UNet<float> s(arch, 0);
    const auto m = s.layer_manifest();
    // independent walk: encoder widths 16,32,64; decoder 2 then 1 (cin = skip + up)
    std::vector<std::vector<int>> expect = {
        {16, 1, 1, 3, 3},  {16, 16, 1, 3, 3}, {32, 16, 1, 3, 3}, {32, 32, 1, 3, 3},
        {64, 32, 1, 3, 3}, {64, 64, 1, 3, 3}, {32, 96, 1, 3, 3}, {32, 32, 1, 3, 3},
        {16, 48, 1, 3, 3}, {16, 16, 1, 3, 3}, {4, 16, 1, 1, 1}};
    ASSERT_EQ(m["layers"].size(), expect.size());
    std::size_t count = 0;
    for (std::size_t i = 0; i < expect.size(); ++i) {
        EXPECT_EQ(m["layers"][i]["shape"].get<std::vector<int>>(), expect[i]) << i;
        std::size_t w = 1;
        for (int e : expect[i]) w *= e;
        count += w;
        if (i + 1 < expect.size()) count += 2 * expect[i][0];  // bn gamma, beta
    }
    count += 4;  // head bias
    EXPECT_EQ(s.params().parameter_count(), count);
    EXPECT_EQ(m["parameter_count"].get<std::size_t>(), count);
}

TEST(UNet, SegmenterGradients) {
    for (Mode mode : {Mode::Eval, Mode::Train}) {
        UNet<double> s(UNetArch{2, 1, 3, 3, 4, 2}, 3);
        perturb_bn(s, 4);
        auto x = random_tensor({2, 1, 1, 8, 8}, 5, 0, 1);
        const auto r = random_tensor({2, 3, 1, 8, 8}, 6);
        UNet<double>::Cache c;
        s.forward(x, mode, c);
        Grads<double> g = s.params().zero_grads();
        Tensor<double> gx;
        s.backward(c, r, &g, &gx);
        auto loss = [&] { return weighted_sum(s.forward(x, mode), r); };
        for (std::size_t i = 0; i < s.params().size(); ++i) {
            if (!s.params()[i].trainable) continue;
            const auto res = testutil::check_entries(s.params()[i].value, g[i], loss, 12, i);
            EXPECT_LT(res.rel_error, 1e-4) << s.params()[i].name << (mode == Mode::Train ? " train" : " eval");
        }
        EXPECT_LT(testutil::check_entries(x.data, gx.data, loss, 30, 77).rel_error, 1e-4);
    }
}

TEST(UNet, DaeGradients) {
    UNet<double> d(UNetArch{3, 3, 3, 2, 3, 2}, 7);
    perturb_bn(d, 8);
    auto x = random_tensor({1, 3, 4, 4, 4}, 9, 0, 1);
    const auto r = random_tensor({1, 3, 4, 4, 4}, 10);
    UNet<double>::Cache c;
    d.forward(x, Mode::Train, c);
    Grads<double> g = d.params().zero_grads();
    d.backward(c, r, &g, nullptr);
    auto loss = [&] { return weighted_sum(d.forward(x, Mode::Train), r); };
    for (std::size_t i = 0; i < d.params().size(); ++i) {
        if (!d.params()[i].trainable) continue;
        const auto res = testutil::check_entries(d.params()[i].value, g[i], loss, 12, i);
        EXPECT_LT(res.rel_error, 1e-4) << d.params()[i].name;
    }
}

TEST(UNet, RunningStatsMove) {
    UNet<double> s(UNetArch{2, 1, 2, 2, 4, 1}, 3);
    auto x = random_tensor({4, 1, 1, 8, 8}, 5, 2, 3);
    UNet<double>::Cache c;
    s.forward(x, Mode::Train, c);
    s.update_running_stats(c, 0.1);
    const auto& rm = s.params()[s.params().index_of("seg.enc0.conv0.bn.running_mean")].value;
    double moved = 0;
    for (double v : rm) moved += std::abs(v);
    EXPECT_GT(moved, 0.0);
}

TEST(UNet, CastRoundtrip) {
    UNet<float> s(UNetArch{2, 1, 3, 2, 4, 1}, 3);
    const auto d = s.cast<double>();
    const auto back = d.cast<float>();
    EXPECT_TRUE(back.params() == s.params());
}
