#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "tta/training.hpp"
#include "test_util.hpp"

using namespace tta;
using namespace tta::train;

namespace {

const Shape3 kShape{4, 16, 16};
const Spacing3 kSpacing{1, 1, 1};

PreparedSubject toy_subject(std::uint64_t seed, double noise = 0.05) {
    PreparedSubject s;
    s.label = testutil::random_labels(kShape, kSpacing, 3, seed, 2);
    s.image = Volume(kShape, kSpacing);
    Rng rng(derive_seed(seed, "noise"));
    for (std::size_t i = 0; i < s.image.size(); ++i)
        s.image.data[i] = static_cast<float>(0.4 * s.label.data[i] + noise * normal(rng));
    return s;
}

SegModel small_model(std::uint64_t seed) {
    nn::UNetArch a;
    a.out_channels = 3;
    a.levels = 2;
    a.base_width = 4;
    return SegModel(nn::NormalizerArch{4, 3}, a, seed);
}

nn::UNet<float> small_dae(std::uint64_t seed) {
    nn::UNetArch a;
    a.spatial_dims = 3;
    a.in_channels = 3;
    a.out_channels = 3;
    a.levels = 2;
    a.base_width = 4;
    return nn::UNet<float>(a, seed);
}

TrainConfig quick(long iters, long val_every = 10, int batch = 4) {
    TrainConfig c;
    c.iterations = iters;
    c.val_every = val_every;
    c.batch_size = batch;
    c.learning_rate = 1e-2;
    c.seed = 5;
    return c;
}

}  // namespace

TEST(Corruption, ZeroPatchesIsIdentity) {
    const auto z = testutil::random_labels(kShape, kSpacing, 4, 1);
    NoiseConfig w{0, 8, 1};
    int n = -1;
    EXPECT_EQ(corrupt_labels(z, w, 3, &n).data, z.data);
    EXPECT_EQ(n, 0);
    NoiseConfig edge0{10, 0, 1};
    EXPECT_EQ(corrupt_labels(z, edge0, 3).data, z.data);
}

TEST(Corruption, OutputUsesOnlyInputLabels) {
    LabelMap z(kShape, kSpacing, 5);
    for (std::size_t i = 0; i < z.size(); ++i) z.data[i] = (i % 7 == 0) ? 4 : (i % 3 == 0 ? 2 : 0);
    const auto c = corrupt_labels(z, NoiseConfig{50, 6, 1}, 11);
    for (auto v : c.data) EXPECT_TRUE(v == 0 || v == 2 || v == 4);
    EXPECT_NE(c.data, z.data);
}

TEST(Corruption, PatchCountIsUniform) {
    const auto z = testutil::random_labels(kShape, kSpacing, 3, 2);
    const int n1_max = 30;
    const int draws = 600;
    double sum = 0.0;
    std::set<int> seen;
    for (int i = 0; i < draws; ++i) {
        int n = 0;
        corrupt_labels(z, NoiseConfig{n1_max, 2, 1}, derive_seed(9, static_cast<std::uint64_t>(i)), &n);
        ASSERT_GE(n, 0);
        ASSERT_LE(n, n1_max);
        sum += n;
        seen.insert(n);
    }
    const double var = ((n1_max + 1.0) * (n1_max + 1.0) - 1.0) / 12.0;
    EXPECT_NEAR(sum / draws, n1_max / 2.0, 3.0 * std::sqrt(var / draws));
    EXPECT_TRUE(seen.count(0) && seen.count(n1_max));
}

TEST(Corruption, CopiesFromCleanSource) {
    // A single voxel of label 1 in an otherwise empty map: every corrupted
    // voxel of label 1 lies at a destination of a copy whose source held it,
    // so at most n1 such voxels can appear beyond the original one.
    LabelMap z(kShape, kSpacing, 2);
    z.at(2, 8, 8) = 1;
    for (int s = 0; s < 50; ++s) {
        int n = 0;
        const auto c = corrupt_labels(z, NoiseConfig{6, 3, 1}, derive_seed(4, static_cast<std::uint64_t>(s)), &n);
        long ones = 0;
        for (auto v : c.data) ones += v;
        EXPECT_LE(ones, 1 + n);
    }
}

TEST(Corruption, Deterministic) {
    const auto z = testutil::random_labels(kShape, kSpacing, 3, 8);
    NoiseConfig w{20, 5, 1};
    EXPECT_EQ(corrupt_labels(z, w, 77).data, corrupt_labels(z, w, 77).data);
}

TEST(TrainLogTest, CsvRoundTripAndSelection) {
    TrainLog log{{10, 0.5, 0.6}, {20, 0.4, 0.8}, {30, 0.3, 0.8}, {40, 0.2, 0.7}};
    const auto dir = testutil::scratch_dir("trainlog");
    write_log_csv(dir / "log.csv", log);
    const auto back = read_log_csv(dir / "log.csv");
    ASSERT_EQ(back.size(), log.size());
    for (std::size_t i = 0; i < log.size(); ++i) {
        EXPECT_EQ(back[i].step, log[i].step);
        EXPECT_NEAR(back[i].train_loss, log[i].train_loss, 1e-8);
        EXPECT_NEAR(*back[i].val_score, *log[i].val_score, 1e-8);
    }
    EXPECT_EQ(*select_best(back), 1u);  // tie at 0.8 goes to step 20
    EXPECT_FALSE(select_best(TrainLog{{1, 0.1, std::nullopt}}).has_value());
    EXPECT_THROW(read_log_csv(dir / "missing.csv"), DependencyError);
}

TEST(SegTraining, LearnsToyTaskAndKeepsBest) {
    std::vector<PreparedSubject> tr;
    for (int i = 0; i < 12; ++i) tr.push_back(toy_subject(100 + i));
    std::vector<PreparedSubject> va{toy_subject(4)};
    const auto init = small_model(3);
    const double before = validation_dice(init, va);
    const auto res = train_segcnn(tr, va, init, quick(300, 30), aug::AugmentConfig::none());
    EXPECT_GT(res.best_score, 0.9);
    EXPECT_GT(res.best_score, before);

    const auto best = select_best(res.log);
    ASSERT_TRUE(best.has_value());
    EXPECT_EQ(res.log[*best].step, res.best_step);
    EXPECT_NEAR(validation_dice(res.best, va), res.best_score, 1e-12);

    const auto dir = testutil::scratch_dir("segckpt");
    save_seg_model(dir, res.best, res.best_step, res.best_score);
    nn::CheckpointInfo info;
    const auto loaded = load_seg_model(dir, &info);
    EXPECT_EQ(info.global_step, res.best_step);
    EXPECT_NEAR(validation_dice(loaded, va), res.best_score, 1e-12);
}

TEST(SegTraining, DeterministicForFixedSeed) {
    std::vector<PreparedSubject> tr{toy_subject(1), toy_subject(2)};
    std::vector<PreparedSubject> va{toy_subject(4)};
    const auto a = train_segcnn(tr, va, small_model(3), quick(20, 5), aug::AugmentConfig{});
    const auto b = train_segcnn(tr, va, small_model(3), quick(20, 5), aug::AugmentConfig{});
    ASSERT_EQ(a.log.size(), b.log.size());
    for (std::size_t i = 0; i < a.log.size(); ++i) {
        EXPECT_EQ(a.log[i].train_loss, b.log[i].train_loss);
        EXPECT_EQ(*a.log[i].val_score, *b.log[i].val_score);
    }
}

TEST(SegTraining, Rejections) {
    std::vector<PreparedSubject> va{toy_subject(4)};
    EXPECT_THROW(train_segcnn({}, va, small_model(1), quick(5), aug::AugmentConfig::none()), ConfigError);
    EXPECT_THROW(train_segcnn(va, {}, small_model(1), quick(5), aug::AugmentConfig::none()), ConfigError);
    auto bad = toy_subject(5);
    bad.image.data[3] = std::nanf("");
    EXPECT_THROW(train_segcnn({bad}, va, small_model(1), quick(5), aug::AugmentConfig::none()), NumericalError);
}

TEST(DaeTraining, ImprovesOverCorruptedInput) {
    std::vector<LabelMap> tr, va;
    for (int i = 0; i < 3; ++i) tr.push_back(testutil::random_labels(kShape, kSpacing, 3, 100 + i, 2));
    va.push_back(tr[0]);  // memorisation is fine here
    NoiseConfig noise{30, 5, 4};
    auto cfg = quick(300, 50, 1);
    const auto res = train_dae(tr, va, small_dae(2), cfg, noise, aug::AugmentConfig::none());
    const auto cases = corrupted_validation_set(va, noise, derive_seed(cfg.seed, "validation"));
    const auto st = denoise_stats(res.best, va, cases);
    EXPECT_NEAR(st.mean_denoised, res.best_score, 1e-12);
    EXPECT_GT(st.mean_denoised, st.mean_corrupted);
    EXPECT_EQ(res.log[*select_best(res.log)].step, res.best_step);

    const auto dir = testutil::scratch_dir("daeckpt");
    save_dae(dir, res.best, res.best_step, res.best_score);
    EXPECT_NEAR(denoise_stats(load_dae(dir), va, cases).mean_denoised, res.best_score, 1e-12);
}

TEST(DaeTraining, Rejections) {
    std::vector<LabelMap> va{testutil::random_labels(kShape, kSpacing, 3, 1)};
    EXPECT_THROW(train_dae({}, va, small_dae(1), quick(2, 1, 1), NoiseConfig{}, aug::AugmentConfig::none()),
                 ConfigError);
    EXPECT_THROW(train_dae(va, va, small_dae(1), quick(2, 1, 4), NoiseConfig{}, aug::AugmentConfig::none()),
                 ConfigError);
    EXPECT_THROW(dae_forward(small_dae(1), ProbMap(4, kShape, kSpacing)), ArgumentError);
}
