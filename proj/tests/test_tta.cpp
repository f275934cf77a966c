#include <gtest/gtest.h>

#include <cstring>
#include <map>
#include <set>

#include "tta/tta.hpp"
#include "gradcheck.hpp"
#include "test_util.hpp"

using namespace tta;
using namespace tta::adaptation;

namespace {

const Shape3 kShape{4, 16, 16};
const Spacing3 kSpacing{1, 1, 1};

nn::UNetArch seg_arch() {
    nn::UNetArch a;
    a.out_channels = 3;
    a.levels = 2;
    a.base_width = 4;
    return a;
}

nn::UNetArch dae_arch() {
    nn::UNetArch a = seg_arch();
    a.spatial_dims = 3;
    a.in_channels = 3;
    return a;
}

Volume toy_image(std::uint64_t seed) {
    const auto l = testutil::random_labels(kShape, kSpacing, 3, seed, 2);
    Volume v(kShape, kSpacing);
    Rng rng(seed);
    for (std::size_t i = 0; i < v.size(); ++i) v.data[i] = static_cast<float>(0.4 * l.data[i] + 0.1 * normal(rng));
    return v;
}

TTAConfig small_cfg(TTAMode mode, long iters) {
    TTAConfig c;
    c.mode = mode;
    c.iterations = iters;
    c.refresh_every = 3;
    c.batch_size = 2;
    c.learning_rate = 1e-2;
    return c;
}

std::uint64_t hash_probs(const ProbMap& p) {
    std::uint64_t h = 1469598103934665603ULL;
    for (float f : p.data) {
        std::uint32_t u;
        std::memcpy(&u, &f, 4);
        h = (h ^ u) * 1099511628211ULL;
    }
    return h;
}

struct Fixture {
    SegModel model{nn::NormalizerArch{4, 3}, seg_arch(), 7};
    nn::UNet<float> dae{dae_arch(), 8};
    std::vector<LabelMap> sd{testutil::random_labels(kShape, kSpacing, 3, 1, 2),
                             testutil::random_labels(kShape, kSpacing, 3, 2, 2)};
    ProbMap atlas = build_atlas(sd);
    Volume image = toy_image(3);
    LabelMap truth = testutil::random_labels(kShape, kSpacing, 3, 3, 2);
    Priors priors{&dae, &atlas};
};

}  // namespace

TEST(Atlas, SingleMapIsOneHot) {
    const auto l = testutil::random_labels(kShape, kSpacing, 4, 5);
    EXPECT_EQ(build_atlas({l}).data, one_hot(l).data);
}

TEST(Atlas, DisagreementAveragesAndSumsToOne) {
    LabelMap a(kShape, kSpacing, 3), b(kShape, kSpacing, 3);
    b.at(1, 2, 3) = 2;
    const auto at = build_atlas({a, b});
    const std::size_t v = a.index(1, 2, 3);
    EXPECT_EQ(at.at(0, v), 0.5f);
    EXPECT_EQ(at.at(2, v), 0.5f);
    EXPECT_EQ(at.at(1, v), 0.0f);
    const auto three = build_atlas({testutil::random_labels(kShape, kSpacing, 3, 1),
                                    testutil::random_labels(kShape, kSpacing, 3, 2),
                                    testutil::random_labels(kShape, kSpacing, 3, 3)});
    EXPECT_LT(three.max_simplex_error(), 1e-6);
    EXPECT_THROW(build_atlas({a, LabelMap(Shape3{4, 16, 8}, kSpacing, 3)}), ArgumentError);
    EXPECT_THROW(build_atlas({}), ArgumentError);
}

TEST(Switching, RuleExamples) {
    EXPECT_EQ(choose_target(0.6, 0.5, 1.0, 0.25), TargetSource::Dae);
    EXPECT_EQ(choose_target(0.6, 0.1, 1.0, 0.25), TargetSource::Atlas);
    EXPECT_EQ(choose_target(0.2, 0.3, 1.0, 0.25), TargetSource::Atlas);
    EXPECT_EQ(choose_target(0.3, 0.0, 1.0, 0.25), TargetSource::Dae);
    EXPECT_EQ(choose_target(0.0, 0.0, 1.0, 0.25), TargetSource::Atlas);
}

TEST(Switching, GridMatchesInequality) {
    for (int i = 0; i <= 40; ++i)
        for (int j = 1; j <= 40; ++j) {
            const double dd = i / 40.0, da = j / 40.0;
            const bool dae = dd / da >= 1.0 && da >= 0.25;
            EXPECT_EQ(choose_target(dd, da, 1.0, 0.25) == TargetSource::Dae, dae) << dd << " " << da;
        }
}

TEST(Trace, CsvRoundTripAndSelection) {
    TTATrace t;
    t.rows = {{0, TargetSource::Atlas, 0.4, 0.3, std::nullopt},
              {3, TargetSource::Dae, 0.7, 0.5, 0.6},
              {6, TargetSource::Dae, 0.7, std::nullopt, 0.65},
              {9, TargetSource::GroundTruth, 0.1234567890123, 0.2, 0.9}};
    const auto dir = testutil::scratch_dir("trace");
    write_trace_csv(dir / "t.csv", t);
    const auto back = read_trace_csv(dir / "t.csv");
    ASSERT_EQ(back.size(), 4u);
    for (std::size_t i = 0; i < 4; ++i) {
        EXPECT_EQ(back[i].iteration, t.rows[i].iteration);
        EXPECT_EQ(back[i].source, t.rows[i].source);
        EXPECT_EQ(back[i].d_dae, t.rows[i].d_dae);
        EXPECT_EQ(back[i].d_atlas, t.rows[i].d_atlas);
        EXPECT_EQ(back[i].d_gt, t.rows[i].d_gt);
    }
    EXPECT_EQ(select_best_refresh(back), 1u);
}

TEST(Adapt, ZeroIterationsReproducesBaseline) {
    Fixture f;
    const auto base = predict_probs(f.model, f.image);
    for (TTAMode m : {TTAMode::None, TTAMode::Dae, TTAMode::DaeAtlas}) {
        const auto r = adapt(f.image, f.model, f.priors, nullptr, small_cfg(m, 0));
        EXPECT_EQ(r.probs.data, base.data);
        EXPECT_EQ(r.prediction.data, argmax(base).data);
    }
}

TEST(Adapt, OnlyNormalizerChanges) {
    Fixture f;
    const auto seg_before = f.model.seg.params().tensors;
    const auto dae_before = f.dae.params().tensors;
    const auto r = adapt(f.image, f.model, f.priors, nullptr, small_cfg(TTAMode::DaeAtlas, 6));
    for (std::size_t i = 0; i < seg_before.size(); ++i) {
        EXPECT_EQ(r.model.seg.params().tensors[i].value, seg_before[i].value);
        EXPECT_EQ(f.model.seg.params().tensors[i].value, seg_before[i].value);
    }
    for (std::size_t i = 0; i < dae_before.size(); ++i)
        EXPECT_EQ(f.dae.params().tensors[i].value, dae_before[i].value);

    // adapt-all moves the segmenter as well
    const auto all = adapt(f.image, f.model, f.priors, nullptr, small_cfg(TTAMode::AdaptAll, 6));
    if (all.best_iteration > 0) {
        EXPECT_NE(all.model.seg.params().tensors[0].value, seg_before[0].value);
    }
}

TEST(Adapt, TargetFrozenWithinRefreshWindow) {
    Fixture f;
    std::map<long, std::set<std::uint64_t>> by_window;
    std::vector<long> refreshes;
    AdaptHooks hooks;
    hooks.on_refresh = [&](const TraceRow& r) { refreshes.push_back(r.iteration); };
    hooks.on_update = [&](long u, const ProbMap& t) { by_window[u - u % 3].insert(hash_probs(t)); };
    const auto r = adapt(f.image, f.model, f.priors, nullptr, small_cfg(TTAMode::DaeAtlas, 8), hooks);
    EXPECT_EQ(refreshes, (std::vector<long>{0, 3, 6, 8}));
    EXPECT_EQ(by_window.size(), 3u);
    for (const auto& [w, hashes] : by_window) EXPECT_EQ(hashes.size(), 1u) << "window " << w;
    EXPECT_EQ(r.trace.rows.size(), 4u);
}

TEST(Adapt, TraceReselectionReproducesBest) {
    Fixture f;
    const auto r = adapt(f.image, f.model, f.priors, &f.truth, small_cfg(TTAMode::Dae, 9));
    const auto dir = testutil::scratch_dir("trace_best");
    write_trace_csv(dir / "t.csv", r.trace);
    const auto rows = read_trace_csv(dir / "t.csv");
    const std::size_t best = select_best_refresh(rows);
    EXPECT_EQ(best, r.trace.best);
    EXPECT_EQ(rows[best].iteration, r.best_iteration);
    EXPECT_GE(rows[best].d_dae, rows.front().d_dae);
    for (const auto& row : rows) EXPECT_TRUE(row.d_gt.has_value());
    // the returned model reproduces the recorded score
    const auto p = argmax(predict_probs(r.model, f.image));
    EXPECT_EQ(metrics::mean_foreground_dice(p, argmax(dae_forward(f.dae, predict_probs(r.model, f.image)))),
              rows[best].d_dae);
}

TEST(Adapt, OracleUsesGroundTruth) {
    Fixture f;
    const auto r = adapt(f.image, f.model, f.priors, &f.truth, small_cfg(TTAMode::Oracle, 3));
    for (const auto& row : r.trace.rows) EXPECT_EQ(row.source, TargetSource::GroundTruth);
    EXPECT_THROW(adapt(f.image, f.model, f.priors, nullptr, small_cfg(TTAMode::Oracle, 3)), ConfigError);
}

TEST(Adapt, Rejections) {
    Fixture f;
    EXPECT_THROW(adapt(f.image, f.model, Priors{&f.dae, nullptr}, nullptr, small_cfg(TTAMode::DaeAtlas, 3)),
                 ConfigError);
    EXPECT_THROW(adapt(f.image, f.model, Priors{}, nullptr, small_cfg(TTAMode::Dae, 3)), ConfigError);
    auto bad = small_cfg(TTAMode::Dae, 3);
    bad.beta = 1.5;
    EXPECT_THROW(adapt(f.image, f.model, f.priors, nullptr, bad), ConfigError);
    Volume nan_img = f.image;
    nan_img.data[0] = std::nanf("");
    EXPECT_THROW(adapt(nan_img, f.model, f.priors, nullptr, small_cfg(TTAMode::Dae, 3)), NumericalError);
    EXPECT_EQ(parse_mode("dae+atlas"), TTAMode::DaeAtlas);
    EXPECT_THROW(parse_mode("bogus"), ConfigError);
}

TEST(Adapt, DeterministicAndFastSingleSubjectMatches) {
    Fixture f;
    const auto cfg = small_cfg(TTAMode::DaeAtlas, 6);
    const auto a = adapt(f.image, f.model, f.priors, nullptr, cfg);
    const auto fast = adapt_fast({Subject{&f.image, nullptr}}, f.model, f.priors, cfg);
    ASSERT_EQ(fast.size(), 1u);
    EXPECT_EQ(a.probs.data, fast[0].probs.data);
    EXPECT_EQ(a.trace.rows.size(), fast[0].trace.rows.size());

    Volume second = toy_image(11);
    auto fcfg = cfg;
    fcfg.fast_iterations = 2;
    const auto two = adapt_fast({Subject{&f.image, nullptr}, Subject{&second, nullptr}}, f.model, f.priors, fcfg);
    ASSERT_EQ(two.size(), 2u);
    EXPECT_EQ(two[1].trace.rows.back().iteration, 2);
    // warm start begins from the first subject's adapted normaliser
    const auto warm0 = predict_probs(two[0].model, second);
    EXPECT_EQ(two[1].trace.rows.front().d_dae,
              metrics::mean_foreground_dice(argmax(warm0), argmax(dae_forward(f.dae, warm0))));
}

TEST(PostProcess, AlphabetAndPasses) {
    Fixture f;
    const auto probs = predict_probs(f.model, f.image);
    for (int k : {1, 3}) {
        const auto out = dae_postprocess(probs, f.dae, k);
        EXPECT_EQ(out.shape, probs.shape);
        for (auto v : out.data) EXPECT_LT(v, 3);
    }
    EXPECT_EQ(dae_postprocess(probs, f.dae, 1).data, argmax(dae_forward(f.dae, probs)).data);
    EXPECT_THROW(dae_postprocess(probs, f.dae, 0), ArgumentError);
}

// Sweep gradient equals the gradient of the mean per-batch loss computed
// from a single whole-volume forward/backward pass, and both agree with
// central differences.
TEST(GradientAccumulation, MatchesWholeVolumePass) {
    nn::Normalizer<double> norm(nn::NormalizerArch{4, 3}, 21);
    nn::UNet<double> seg(seg_arch(), 22);
    // non-trivial last layer so the normaliser is not the identity
    Rng rng(5);
    for (auto& t : norm.params().tensors)
        for (auto& v : t.value) v += 0.05 * normal(rng);
    const Volume img = toy_image(9);
    nn::Tensor<double> slices(nn::Dims{4, 1, 1, 16, 16});
    for (std::size_t i = 0; i < slices.size(); ++i) slices.data[i] = img.data[i];
    const auto lab = testutil::random_labels(kShape, kSpacing, 3, 12, 2);
    nn::Tensor<double> target(nn::Dims{4, 3, 1, 16, 16});
    for (int z = 0; z < 4; ++z)
        for (int j = 0; j < 256; ++j) target.channel(z, lab.data[z * 256 + j])[j] = 1.0;

    auto g_sweep = norm.params().zero_grads();
    sweep_gradient(norm, seg, slices, target, 2, &g_sweep, nullptr);

    // whole-volume oracle
    nn::Normalizer<double>::Cache nc;
    nn::UNet<double>::Cache sc;
    const auto xn = norm.forward(slices, nc);
    const auto probs = nn::softmax_channels(seg.forward(xn, nn::Mode::Eval, sc));
    nn::Tensor<double> gp(probs.dims);
    for (int b = 0; b < 2; ++b) {
        nn::Tensor<double> gb;
        dice_loss(take_samples(probs, 2 * b, 2), take_samples(target, 2 * b, 2), &gb);
        for (std::size_t i = 0; i < gb.size(); ++i) gp.sample(2 * b)[i] = gb.data[i] / 2.0;
    }
    auto g_whole = norm.params().zero_grads();
    nn::Tensor<double> gxn;
    seg.backward(sc, nn::softmax_backward(probs, gp), nullptr, &gxn);
    norm.backward(nc, gxn, &g_whole, nullptr);

    double num = 0.0, den = 0.0;
    for (std::size_t t = 0; t < g_whole.size(); ++t)
        for (std::size_t i = 0; i < g_whole[t].size(); ++i) {
            num += (g_sweep[t][i] - g_whole[t][i]) * (g_sweep[t][i] - g_whole[t][i]);
            den += g_whole[t][i] * g_whole[t][i];
        }
    EXPECT_LT(std::sqrt(num / den), 1e-5);

    auto mean_loss = [&] {
        double s = 0.0;
        for (int b = 0; b < 2; ++b) {
            const auto p = nn::softmax_channels(seg.forward(norm.forward(take_samples(slices, 2 * b, 2))));
            s += dice_loss(p, take_samples(target, 2 * b, 2));
        }
        return s / 2.0;
    };
    for (std::size_t t = 0; t < g_sweep.size(); ++t)
        EXPECT_LT(testutil::check_entries(norm.params()[t].value, g_sweep[t], mean_loss, 10, t).rel_error, 1e-4)
            << norm.params()[t].name;
}
