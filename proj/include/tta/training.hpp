#pragma once

// Supervised training of normaliser + segmenter on augmented 2D slices, the
// patch-copy label corruption, and denoising-autoencoder training on 3D
// label volumes. Both loops keep the best-validation parameters.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "tta/augment.hpp"
#include "tta/losses.hpp"
#include "tta/metrics.hpp"
#include "tta/model.hpp"
#include "tta/preprocess.hpp"

namespace tta::train {

namespace fs = std::filesystem;

struct TrainConfig {
    long iterations = 2000;
    int batch_size = 16;
    double learning_rate = 1e-3;
    long val_every = 100;
    std::uint64_t seed = 0;

    void validate() const {
        if (iterations < 1 || batch_size < 1 || val_every < 1 || !(learning_rate > 0.0))
            throw ConfigError("training hyper-parameters must be positive");
    }
};

struct NoiseConfig {
    int n1_max = 200;  // patches per corruption, drawn from U{0..n1_max}
    int n2_max = 20;  // cube edge per patch, drawn from U{0..n2_max}
    int val_corruptions = 50;  // corrupted copies per validation volume

    void validate() const {
        if (n1_max < 0 || n2_max < 0 || val_corruptions < 1) throw ConfigError("noise parameters must be non-negative");
    }
};

/// Copies n1 random cubes of edge n2 (per cube) from a random source corner
/// to a random destination corner. Sources always read the clean input;
/// cubes are clipped where either end leaves the grid.
inline LabelMap corrupt_labels(const LabelMap& z, const NoiseConfig& w, std::uint64_t seed, int* patches = nullptr) {
    Rng rng(seed);
    LabelMap out = z;
    const int n1 = static_cast<int>(uniform_int(rng, 0, w.n1_max));
    if (patches) *patches = n1;
    const Shape3 s = z.shape;
    for (int p = 0; p < n1; ++p) {
        const int e = static_cast<int>(uniform_int(rng, 0, w.n2_max));
        int src[3], dst[3];
        for (int a = 0; a < 3; ++a) src[a] = static_cast<int>(uniform_int(rng, 0, s[a] - 1));
        for (int a = 0; a < 3; ++a) dst[a] = static_cast<int>(uniform_int(rng, 0, s[a] - 1));
        int len[3];
        for (int a = 0; a < 3; ++a) len[a] = std::min({e, s[a] - src[a], s[a] - dst[a]});
        for (int dz = 0; dz < len[0]; ++dz)
            for (int dy = 0; dy < len[1]; ++dy)
                for (int dx = 0; dx < len[2]; ++dx)
                    out.at(dst[0] + dz, dst[1] + dy, dst[2] + dx) = z.at(src[0] + dz, src[1] + dy, src[2] + dx);
    }
    return out;
}

// ----------------------------------------------------------------- logging

struct LogRow {
    long step = 0;
    double train_loss = 0.0;
    std::optional<double> val_score;
};

using TrainLog = std::vector<LogRow>;
using Progress = std::function<void(const LogRow&)>;

inline void write_log_csv(const fs::path& path, const TrainLog& log) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out << "step,train_loss,val_dice\n";
    char buf[96];
    for (const auto& r : log) {
        std::snprintf(buf, sizeof buf, "%ld,%.8f,", r.step, r.train_loss);
        out << buf;
        if (r.val_score) {
            std::snprintf(buf, sizeof buf, "%.8f", *r.val_score);
            out << buf;
        }
        out << '\n';
    }
}

inline TrainLog read_log_csv(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw DependencyError("missing training log: " + path.string());
    TrainLog log;
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string a, b, c;
        std::getline(ss, a, ',');
        std::getline(ss, b, ',');
        std::getline(ss, c, ',');
        LogRow r;
        try {
            r.step = std::stol(a);
            r.train_loss = std::stod(b);
            if (!c.empty()) r.val_score = std::stod(c);
        } catch (const std::exception&) {
            throw FormatError("malformed training log line: " + line);
        }
        log.push_back(r);
    }
    return log;
}

/// Index of the row with the highest validation score; ties go to the
/// earliest step. nullopt when no row carries a score.
inline std::optional<std::size_t> select_best(const TrainLog& log) {
    std::optional<std::size_t> best;
    for (std::size_t i = 0; i < log.size(); ++i)
        if (log[i].val_score && (!best || *log[i].val_score > *log[*best].val_score)) best = i;
    return best;
}

// --------------------------------------------------------- segmentation

inline Tensor<float> one_hot_slices(const std::vector<std::uint8_t>& labels, int n, int k, int h, int w) {
    Tensor<float> t(Dims{n, k, 1, h, w});
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    for (int i = 0; i < n; ++i)
        for (std::size_t j = 0; j < plane; ++j) t.channel(i, labels[i * plane + j])[j] = 1.0f;
    return t;
}

inline double validation_dice(const SegModel& m, const std::vector<PreparedSubject>& val) {
    double s = 0.0;
    for (const auto& v : val) s += metrics::mean_foreground_dice(argmax(predict_probs(m, v.image)), v.label);
    return s / static_cast<double>(val.size());
}

struct SegTrainResult {
    SegModel best;
    long best_step = 0;
    double best_score = -1.0;
    TrainLog log;
};

/// Jointly optimises normaliser and segmenter with the Dice loss.
inline SegTrainResult train_segcnn(const std::vector<PreparedSubject>& train, const std::vector<PreparedSubject>& val,
                                   SegModel model, const TrainConfig& cfg, const aug::AugmentConfig& augment,
                                   const Progress& progress = {}) {
    cfg.validate();
    augment.validate();
    if (train.empty()) throw ConfigError("segmenter training split is empty");
    if (val.empty()) throw ConfigError("segmenter validation split is empty");
    const Shape3 s = train.front().image.shape;
    const int k = model.num_labels();
    const std::size_t plane = static_cast<std::size_t>(s.h) * s.w;

    nn::Adam<float> opt_norm(cfg.learning_rate), opt_seg(cfg.learning_rate);
    Rng pick(derive_seed(cfg.seed, "slices"));
    SegTrainResult res{model, 0, -1.0, {}};
    double loss_sum = 0.0;
    long loss_count = 0;

    for (long step = 1; step <= cfg.iterations; ++step) {
        aug::ImageBatch img(cfg.batch_size, s.h, s.w);
        aug::LabelBatch lbl(cfg.batch_size, s.h, s.w);
        for (int i = 0; i < cfg.batch_size; ++i) {
            const auto& subj = train[static_cast<std::size_t>(uniform_int(pick, 0, static_cast<long>(train.size()) - 1))];
            const int z = static_cast<int>(uniform_int(pick, 0, s.d - 1));
            std::copy_n(subj.image.data.begin() + static_cast<long>(z * plane), plane, img.plane(i));
            std::copy_n(subj.label.data.begin() + static_cast<long>(z * plane), plane, lbl.plane(i));
        }
        aug::augment_pair(img, lbl, augment, derive_seed(cfg.seed, static_cast<std::uint64_t>(step)));

        Tensor<float> x(Dims{cfg.batch_size, 1, 1, s.h, s.w});
        x.data = std::move(img.data);
        const Tensor<float> target = one_hot_slices(lbl.data, cfg.batch_size, k, s.h, s.w);

        nn::Normalizer<float>::Cache nc;
        nn::UNet<float>::Cache sc;
        const auto xn = model.norm.forward(x, nc);
        const auto probs = nn::softmax_channels(model.seg.forward(xn, Mode::Train, sc));
        Tensor<float> gp;
        const float loss = dice_loss(probs, target, &gp);
        if (!std::isfinite(loss))
            throw NumericalError("segmenter training: non-finite loss at step " + std::to_string(step));
        auto gseg = model.seg.params().zero_grads();
        auto gnorm = model.norm.params().zero_grads();
        Tensor<float> gxn;
        model.seg.backward(sc, nn::softmax_backward(probs, gp), &gseg, &gxn);
        model.norm.backward(nc, gxn, &gnorm, nullptr);
        opt_seg.update(model.seg.params(), gseg);
        opt_norm.update(model.norm.params(), gnorm);
        model.seg.update_running_stats(sc);
        loss_sum += loss;
        ++loss_count;

        if (step % cfg.val_every == 0 || step == cfg.iterations) {
            LogRow row{step, loss_sum / static_cast<double>(loss_count), validation_dice(model, val)};
            loss_sum = 0.0;
            loss_count = 0;
            res.log.push_back(row);
            if (*row.val_score > res.best_score) {
                res.best_score = *row.val_score;
                res.best_step = step;
                res.best = model;
            }
            if (progress) progress(row);
        }
    }
    return res;
}

// -------------------------------------------------------------------- DAE

struct CorruptedCase {
    std::size_t subject = 0;
    LabelMap corrupted;
};

/// `val_corruptions` corrupted copies of each validation label map.
inline std::vector<CorruptedCase> corrupted_validation_set(const std::vector<LabelMap>& val, const NoiseConfig& w,
                                                           std::uint64_t seed) {
    std::vector<CorruptedCase> out;
    for (std::size_t i = 0; i < val.size(); ++i)
        for (int c = 0; c < w.val_corruptions; ++c)
            out.push_back({i, corrupt_labels(val[i], w, derive_seed(seed, "val/" + std::to_string(i) + "/" +
                                                                              std::to_string(c)))});
    return out;
}

inline LabelMap denoise(const nn::UNet<float>& dae, const LabelMap& in) { return argmax(dae_forward(dae, one_hot(in))); }

struct DenoiseStats {
    double mean_denoised = 0.0;  // mean foreground Dice(denoised, clean)
    double mean_corrupted = 0.0;  // mean foreground Dice(corrupted, clean)
    double fraction_improved = 0.0;  // share of cases with denoised > corrupted
};

inline DenoiseStats denoise_stats(const nn::UNet<float>& dae, const std::vector<LabelMap>& clean,
                                  const std::vector<CorruptedCase>& cases) {
    DenoiseStats s;
    int improved = 0;
    for (const auto& c : cases) {
        const double dd = metrics::mean_foreground_dice(denoise(dae, c.corrupted), clean[c.subject]);
        const double dc = metrics::mean_foreground_dice(c.corrupted, clean[c.subject]);
        s.mean_denoised += dd;
        s.mean_corrupted += dc;
        improved += dd > dc;
    }
    const double n = static_cast<double>(cases.size());
    s.mean_denoised /= n;
    s.mean_corrupted /= n;
    s.fraction_improved = improved / n;
    return s;
}

/// Mean foreground Dice between clean inputs and their reconstructions.
inline double identity_dice(const nn::UNet<float>& dae, const std::vector<LabelMap>& clean) {
    double s = 0.0;
    for (const auto& c : clean) s += metrics::mean_foreground_dice(denoise(dae, c), c);
    return s / static_cast<double>(clean.size());
}

struct DaeTrainResult {
    nn::UNet<float> best;
    long best_step = 0;
    double best_score = -1.0;
    TrainLog log;
};

/// Minimises Dice(D(corrupt(z)), z) over augmented training labels, one
/// volume per step. Validation score: mean denoised Dice on a fixed
/// corrupted copy of the validation labels.
inline DaeTrainResult train_dae(const std::vector<LabelMap>& train, const std::vector<LabelMap>& val,
                                nn::UNet<float> dae, const TrainConfig& cfg, const NoiseConfig& noise,
                                const aug::AugmentConfig& augment, const Progress& progress = {}) {
    cfg.validate();
    noise.validate();
    augment.validate();
    if (train.empty()) throw ConfigError("autoencoder training split is empty");
    if (val.empty()) throw ConfigError("autoencoder validation split is empty");
    if (cfg.batch_size != 1) throw ConfigError("autoencoder training uses one volume per step");
    const auto cases = corrupted_validation_set(val, noise, derive_seed(cfg.seed, "validation"));
    const Shape3 s = train.front().shape;

    nn::Adam<float> opt(cfg.learning_rate);
    Rng pick(derive_seed(cfg.seed, "volumes"));
    DaeTrainResult res{dae, 0, -1.0, {}};
    double loss_sum = 0.0;
    long loss_count = 0;
    for (long step = 1; step <= cfg.iterations; ++step) {
        LabelMap clean = train[static_cast<std::size_t>(uniform_int(pick, 0, static_cast<long>(train.size()) - 1))];
        const std::uint64_t step_seed = derive_seed(cfg.seed, static_cast<std::uint64_t>(step));
        aug::augment_labels(clean.data, s.d, s.h, s.w, augment, derive_seed(step_seed, "augment"));
        const LabelMap noisy = corrupt_labels(clean, noise, derive_seed(step_seed, "corrupt"));

        nn::UNet<float>::Cache cache;
        const auto probs = nn::softmax_channels(dae.forward(to_tensor(one_hot(noisy)), Mode::Train, cache));
        Tensor<float> gp;
        const float loss = dice_loss(probs, to_tensor(one_hot(clean)), &gp);
        if (!std::isfinite(loss))
            throw NumericalError("autoencoder training: non-finite loss at step " + std::to_string(step));
        auto grads = dae.params().zero_grads();
        dae.backward(cache, nn::softmax_backward(probs, gp), &grads, nullptr);
        opt.update(dae.params(), grads);
        dae.update_running_stats(cache);
        loss_sum += loss;
        ++loss_count;

        if (step % cfg.val_every == 0 || step == cfg.iterations) {
            double score = 0.0;
            for (const auto& c : cases)
                score += metrics::mean_foreground_dice(denoise(dae, c.corrupted), val[c.subject]);
            LogRow row{step, loss_sum / static_cast<double>(loss_count), score / static_cast<double>(cases.size())};
            loss_sum = 0.0;
            loss_count = 0;
            res.log.push_back(row);
            if (*row.val_score > res.best_score) {
                res.best_score = *row.val_score;
                res.best_step = step;
                res.best = dae;
            }
            if (progress) progress(row);
        }
    }
    return res;
}

}  // namespace tta::train
