#pragma once

// Per-subject test-time adaptation of the normaliser. Every `refresh_every`
// updates the current segmentation is recomputed, the autoencoder (or the
// atlas, or the ground truth in oracle mode) provides a frozen soft target,
// and the following updates sweep the volume in slice batches, averaging the
// Dice-loss gradients of all batches into one Adam step.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

#include "tta/losses.hpp"
#include "tta/metrics.hpp"
#include "tta/model.hpp"

namespace tta::adaptation {

namespace fs = std::filesystem;

enum class TTAMode { None, Dae, DaeAtlas, AdaptAll, Oracle };
enum class TargetSource { Dae, Atlas, GroundTruth };

inline std::string to_string(TTAMode m) {
    switch (m) {
        case TTAMode::None: return "none";
        case TTAMode::Dae: return "dae";
        case TTAMode::DaeAtlas: return "dae+atlas";
        case TTAMode::AdaptAll: return "adapt-all";
        case TTAMode::Oracle: return "oracle";
    }
    return "?";
}

inline TTAMode parse_mode(const std::string& s) {
    for (TTAMode m : {TTAMode::None, TTAMode::Dae, TTAMode::DaeAtlas, TTAMode::AdaptAll, TTAMode::Oracle})
        if (to_string(m) == s) return m;
    throw ConfigError("unknown adaptation mode '" + s + "'");
}

inline std::string to_string(TargetSource s) {
    switch (s) {
        case TargetSource::Dae: return "dae";
        case TargetSource::Atlas: return "atlas";
        case TargetSource::GroundTruth: return "gt";
    }
    return "?";
}

inline TargetSource parse_source(const std::string& s) {
    for (TargetSource t : {TargetSource::Dae, TargetSource::Atlas, TargetSource::GroundTruth})
        if (to_string(t) == s) return t;
    throw FormatError("unknown target source '" + s + "'");
}

struct TTAConfig {
    long iterations = 100;  // total Adam updates for a cold start
    long fast_iterations = 20;  // updates for warm-started subjects
    long refresh_every = 25;
    int batch_size = 16;
    double learning_rate = 1e-3;
    double alpha = 1.0;  // ratio threshold d_dae / d_atlas
    double beta = 0.25;  // minimum d_atlas for trusting the autoencoder
    TTAMode mode = TTAMode::DaeAtlas;

    void validate() const {
        if (iterations < 0 || fast_iterations < 0) throw ConfigError("tta: iteration counts must be non-negative");
        if (refresh_every < 1 || batch_size < 1) throw ConfigError("tta: refresh period and batch size must be positive");
        if (!(learning_rate > 0.0) || !(alpha > 0.0)) throw ConfigError("tta: learning rate and alpha must be positive");
        if (!(beta >= 0.0 && beta <= 1.0)) throw ConfigError("tta: beta must lie in [0, 1]");
    }
};

// ------------------------------------------------------------------ atlas

/// Voxel-wise mean of the one-hot encodings.
inline ProbMap build_atlas(const std::vector<LabelMap>& labels) {
    if (labels.empty()) throw ArgumentError("build_atlas: no label maps");
    const LabelMap& first = labels.front();
    const int k = first.num_labels;
    ProbMap a(k, first.shape, first.spacing);
    std::vector<std::uint32_t> counts(a.data.size(), 0);
    const std::size_t n = first.size();
    for (const auto& l : labels) {
        if (!(l.shape == first.shape) || l.num_labels != k) throw ArgumentError("build_atlas: label grids differ");
        for (std::size_t v = 0; v < n; ++v) ++counts[static_cast<std::size_t>(l.data[v]) * n + v];
    }
    const double m = static_cast<double>(labels.size());
    for (std::size_t i = 0; i < counts.size(); ++i) a.data[i] = static_cast<float>(counts[i] / m);
    return a;
}

/// Threshold rule between the autoencoder and the atlas target.
inline TargetSource choose_target(double d_dae, double d_atlas, double alpha, double beta) {
    if (d_atlas == 0.0) return d_dae > 0.0 ? TargetSource::Dae : TargetSource::Atlas;
    return (d_dae / d_atlas >= alpha && d_atlas >= beta) ? TargetSource::Dae : TargetSource::Atlas;
}

inline TargetSource choose_target(const ProbMap& pred, const ProbMap& dae_out, const ProbMap& atlas, double alpha,
                                  double beta) {
    const LabelMap p = argmax(pred);
    return choose_target(metrics::mean_foreground_dice(p, argmax(dae_out)),
                         metrics::mean_foreground_dice(p, argmax(atlas)), alpha, beta);
}

// ------------------------------------------------------------------ trace

struct TraceRow {
    long iteration = 0;  // updates applied before this refresh
    TargetSource source = TargetSource::Dae;
    double d_dae = 0.0;
    std::optional<double> d_atlas, d_gt;
};

struct TTATrace {
    std::vector<TraceRow> rows;
    std::size_t best = 0;
};

/// Refresh with the highest d_dae; ties go to the earliest.
inline std::size_t select_best_refresh(const std::vector<TraceRow>& rows) {
    if (rows.empty()) throw ArgumentError("select_best_refresh: empty trace");
    std::size_t best = 0;
    for (std::size_t i = 1; i < rows.size(); ++i)
        if (rows[i].d_dae > rows[best].d_dae) best = i;
    return best;
}

inline void write_trace_csv(const fs::path& path, const TTATrace& t) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out << "iteration,target_source,d_dae,d_atlas,d_gt\n";
    char buf[64];
    auto opt = [&](const std::optional<double>& v) {
        if (!v) return std::string();
        std::snprintf(buf, sizeof buf, "%.17g", *v);
        return std::string(buf);
    };
    for (const auto& r : t.rows) {
        std::snprintf(buf, sizeof buf, "%.17g", r.d_dae);
        out << r.iteration << ',' << to_string(r.source) << ',' << buf << ',';
        out << opt(r.d_atlas) << ',' << opt(r.d_gt) << '\n';
    }
}

inline std::vector<TraceRow> read_trace_csv(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw DependencyError("missing trace: " + path.string());
    std::vector<TraceRow> rows;
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> f;
        std::stringstream ss(line);
        for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
        while (f.size() < 5) f.emplace_back();
        TraceRow r;
        try {
            r.iteration = std::stol(f[0]);
            r.source = parse_source(f[1]);
            r.d_dae = std::stod(f[2]);
            if (!f[3].empty()) r.d_atlas = std::stod(f[3]);
            if (!f[4].empty()) r.d_gt = std::stod(f[4]);
        } catch (const std::logic_error&) {
            throw FormatError("malformed trace line: " + line);
        }
        rows.push_back(r);
    }
    return rows;
}

// --------------------------------------------------------- gradient sweep

template <class T>
nn::Tensor<T> take_samples(const nn::Tensor<T>& t, int i0, int n) {
    nn::Dims d = t.dims;
    d.n = n;
    nn::Tensor<T> out(d);
    std::copy(t.sample(i0), t.sample(i0) + out.size(), out.data.begin());
    return out;
}

/// One sweep over all slices in batches of `batch`: gradients of the Dice
/// loss of each batch are summed into `g_norm` / `g_seg` (either may be
/// null) and divided by the number of batches, i.e. the result is the
/// gradient of the mean per-batch loss. Batch norm runs in eval mode.
/// Returns that mean loss.
template <class T>
double sweep_gradient(const nn::Normalizer<T>& norm, const nn::UNet<T>& seg, const nn::Tensor<T>& slices,
                      const nn::Tensor<T>& target, int batch, std::type_identity_t<nn::Grads<T>>* g_norm,
                      std::type_identity_t<nn::Grads<T>>* g_seg) {
    const int d = slices.dims.n;
    const int batches = (d + batch - 1) / batch;
    double loss_sum = 0.0;
    for (int z0 = 0; z0 < d; z0 += batch) {
        const int n = std::min(batch, d - z0);
        typename nn::Normalizer<T>::Cache nc;
        typename nn::UNet<T>::Cache sc;
        const auto xn = norm.forward(take_samples(slices, z0, n), nc);
        const auto probs = nn::softmax_channels(seg.forward(xn, nn::Mode::Eval, sc));
        nn::Tensor<T> gp;
        const T loss = dice_loss(probs, take_samples(target, z0, n), &gp);
        if (!std::isfinite(static_cast<double>(loss))) throw NumericalError("tta: non-finite loss");
        loss_sum += loss;
        nn::Tensor<T> gxn;
        seg.backward(sc, nn::softmax_backward(probs, gp), g_seg, g_norm ? &gxn : nullptr);
        if (g_norm) norm.backward(nc, gxn, g_norm, nullptr);
    }
    const T inv = static_cast<T>(1.0 / batches);
    for (auto* g : {g_norm, g_seg})
        if (g)
            for (auto& t : *g)
                for (auto& v : t) v *= inv;
    return loss_sum / batches;
}

/// All planes of a volume as (D, 1, 1, H, W).
inline Tensor<float> volume_slices(const Volume& v) { return slice_batch(v, 0, v.shape.d); }

// ------------------------------------------------------------------ adapt

struct AdaptResult {
    SegModel model;  // adapted normaliser (and segmenter in adapt-all mode) at the best refresh
    ProbMap probs;  // soft prediction of `model`, canonical grid
    LabelMap prediction;
    TTATrace trace;
    long best_iteration = 0;
};

/// Optional observation points for tests and logging.
struct AdaptHooks {
    std::function<void(long update, const ProbMap& target)> on_update;
    std::function<void(const TraceRow&)> on_refresh;
};

struct Priors {
    const nn::UNet<float>* dae = nullptr;
    const ProbMap* atlas = nullptr;
};

/// Adapts a copy of `start` to one canonical-grid image for `iterations`
/// updates. `truth` is only used by oracle mode and for monitoring.
inline AdaptResult adapt(const Volume& image, const SegModel& start, const Priors& priors, const LabelMap* truth,
                         const TTAConfig& cfg, long iterations, const AdaptHooks& hooks = {}) {
    cfg.validate();
    AdaptResult res;
    res.model = start;
    if (cfg.mode == TTAMode::None) {
        res.probs = predict_probs(start, image, cfg.batch_size);
        res.prediction = argmax(res.probs);
        return res;
    }
    if (!priors.dae) throw ConfigError("tta: mode " + to_string(cfg.mode) + " needs a trained autoencoder");
    if (cfg.mode == TTAMode::DaeAtlas && !priors.atlas) throw ConfigError("tta: dae+atlas mode needs an atlas");
    if (cfg.mode == TTAMode::Oracle && !truth) throw ConfigError("tta: oracle mode needs ground truth");

    SegModel cur = start;
    nn::Adam<float> opt_norm(cfg.learning_rate), opt_seg(cfg.learning_rate);
    const bool adapt_seg = cfg.mode == TTAMode::AdaptAll;
    const Tensor<float> slices = volume_slices(image);
    const LabelMap atlas_labels = priors.atlas ? argmax(*priors.atlas) : LabelMap{};
    std::optional<ProbMap> truth_onehot = truth ? std::optional<ProbMap>(one_hot(*truth)) : std::nullopt;

    double best_score = -std::numeric_limits<double>::infinity();
    long done = 0;
    while (true) {
        // refresh: current prediction, priors, frozen target
        ProbMap probs = predict_probs(cur, image, cfg.batch_size);
        const LabelMap pred = argmax(probs);
        ProbMap dae_out = dae_forward(*priors.dae, probs);
        TraceRow row;
        row.iteration = done;
        row.d_dae = metrics::mean_foreground_dice(pred, argmax(dae_out));
        if (priors.atlas) row.d_atlas = metrics::mean_foreground_dice(pred, atlas_labels);
        if (truth) row.d_gt = metrics::mean_foreground_dice(pred, *truth);
        switch (cfg.mode) {
            case TTAMode::DaeAtlas: row.source = choose_target(row.d_dae, *row.d_atlas, cfg.alpha, cfg.beta); break;
            case TTAMode::Oracle: row.source = TargetSource::GroundTruth; break;
            default: row.source = TargetSource::Dae;
        }
        res.trace.rows.push_back(row);
        if (hooks.on_refresh) hooks.on_refresh(row);
        if (row.d_dae > best_score) {
            best_score = row.d_dae;
            res.model = cur;
            res.probs = probs;
            res.best_iteration = done;
            res.trace.best = res.trace.rows.size() - 1;
        }
        if (done >= iterations) break;

        const ProbMap& target = row.source == TargetSource::Dae     ? dae_out
                                : row.source == TargetSource::Atlas ? *priors.atlas
                                                                    : *truth_onehot;
        const Tensor<float> target_slices = slice_batch(target, 0, target.shape.d);
        const long steps = std::min(cfg.refresh_every, iterations - done);
        for (long s = 0; s < steps; ++s) {
            if (hooks.on_update) hooks.on_update(done, target);
            auto g_norm = cur.norm.params().zero_grads();
            std::optional<nn::Grads<float>> g_seg;
            if (adapt_seg) g_seg = cur.seg.params().zero_grads();
            sweep_gradient(cur.norm, cur.seg, slices, target_slices, cfg.batch_size, &g_norm,
                           g_seg ? &*g_seg : nullptr);
            opt_norm.update(cur.norm.params(), g_norm);
            if (adapt_seg) opt_seg.update(cur.seg.params(), *g_seg);
            ++done;
        }
    }
    res.prediction = argmax(res.probs);
    return res;
}

inline AdaptResult adapt(const Volume& image, const SegModel& start, const Priors& priors, const LabelMap* truth,
                         const TTAConfig& cfg, const AdaptHooks& hooks = {}) {
    return adapt(image, start, priors, truth, cfg, cfg.iterations, hooks);
}

struct Subject {
    const Volume* image = nullptr;
    const LabelMap* truth = nullptr;  // may be null
};

/// First subject: full schedule from `start`. The rest warm-start from the
/// first subject's adapted model with `fast_iterations` updates.
inline std::vector<AdaptResult> adapt_fast(const std::vector<Subject>& subjects, const SegModel& start,
                                           const Priors& priors, const TTAConfig& cfg) {
    if (subjects.empty()) throw ArgumentError("adapt_fast: no subjects");
    std::vector<AdaptResult> out;
    out.push_back(adapt(*subjects[0].image, start, priors, subjects[0].truth, cfg, cfg.iterations));
    const SegModel warm = out.front().model;
    for (std::size_t i = 1; i < subjects.size(); ++i)
        out.push_back(adapt(*subjects[i].image, warm, priors, subjects[i].truth, cfg, cfg.fast_iterations));
    return out;
}

/// k passes of argmax(autoencoder(.)), re-encoding one-hot between passes.
inline LabelMap dae_postprocess(const ProbMap& pred, const nn::UNet<float>& dae, int passes) {
    if (passes < 1) throw ArgumentError("dae_postprocess: passes must be >= 1");
    LabelMap cur = argmax(dae_forward(dae, pred));
    for (int i = 1; i < passes; ++i) cur = argmax(dae_forward(dae, one_hot(cur)));
    return cur;
}

}  // namespace tta::adaptation
