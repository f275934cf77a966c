#pragma once

// Pipeline stages behind the CLI. Every stage writes into its own directory
// under the output root and stamps it with a hash of the configuration it
// depends on; rerunning with an unchanged configuration is a no-op.
//
//   data/                    volumes + dataset_manifest.json
//   seg/                     normaliser + segmenter checkpoint, train_log.csv
//   dae/                     autoencoder checkpoint, train_log.csv, quality.json
//   adapt/<method>/<domain>/ predictions on the original grid, traces/, phi/
//   eval/metrics.csv         one row per subject x method x label
//   report/                  results.csv, results.txt, convergence/, plots/

#include <atomic>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "tta/config.hpp"
#include "tta/geometry.hpp"
#include "tta/metrics.hpp"
#include "tta/model.hpp"
#include "tta/plot.hpp"
#include "tta/preprocess.hpp"
#include "tta/synthetic.hpp"
#include "tta/training.hpp"
#include "tta/tta.hpp"
#include "tta/volume_io.hpp"

namespace tta::experiment {

namespace fs = std::filesystem;
using json = nlohmann::json;
using config::ExperimentConfig;

inline std::function<void(const std::string&)>& logger() {
    static std::function<void(const std::string&)> fn = [](const std::string& m) { std::cerr << m << '\n'; };
    return fn;
}

inline void log(const std::string& m) {
    if (logger()) logger()(m);
}

// ------------------------------------------------------------------ layout

struct Layout {
    fs::path root;

    fs::path data() const { return root / "data"; }
    fs::path seg() const { return root / "seg"; }
    fs::path dae() const { return root / "dae"; }
    fs::path adapt(const std::string& method) const { return root / "adapt" / dir_name(method); }
    fs::path eval() const { return root / "eval"; }
    fs::path report() const { return root / "report"; }
    fs::path data_manifest() const { return data() / "dataset_manifest.json"; }

    static std::string dir_name(std::string method) {
        std::replace(method.begin(), method.end(), ':', '-');
        return method;
    }
};

// ------------------------------------------------------------------ stamps

inline std::string hex(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

inline std::string hash_of(const json& j) { return hex(fnv1a(j.dump())); }

inline std::string data_hash(const ExperimentConfig& c) {
    return hash_of({{"seed", c.raw.at("seed")}, {"dataset", c.raw.at("dataset")}});
}
inline std::string seg_hash(const ExperimentConfig& c) {
    return hash_of({{"data", data_hash(c)}, {"segmenter", c.raw.at("segmenter")}});
}
inline std::string dae_hash(const ExperimentConfig& c) {
    return hash_of({{"data", data_hash(c)}, {"dae", c.raw.at("dae")}});
}
inline std::string adapt_hash(const ExperimentConfig& c, const std::string& method) {
    const bool adapts = method != "baseline" && method.rfind("postproc:", 0) != 0;
    return hash_of({{"seg", seg_hash(c)},
                    {"dae", dae_hash(c)},
                    {"tta", adapts ? c.raw.at("tta") : json()},
                    {"domains", c.eval.domains},
                    {"method", method}});
}
inline std::string eval_hash(const ExperimentConfig& c) {
    json parts = json::array();
    for (const auto& m : c.eval.methods) parts.push_back(adapt_hash(c, m));
    return hash_of({{"adapt", parts}, {"domains", c.eval.domains}});
}

inline bool stamped(const fs::path& dir, const std::string& hash) {
    std::ifstream in(dir / "stage.json");
    if (!in) return false;
    try {
        return json::parse(in).at("hash").get<std::string>() == hash;
    } catch (const json::exception&) {
        return false;
    }
}

inline void stamp(const fs::path& dir, const std::string& stage, const std::string& hash) {
    std::ofstream out(dir / "stage.json", std::ios::trunc);
    if (!out) throw IoError("cannot write " + (dir / "stage.json").string());
    out << json{{"stage", stage}, {"hash", hash}}.dump(2) << '\n';
}

/// Upstream stage must have completed with the current configuration.
inline void require_stage(const fs::path& dir, const std::string& hash, const std::string& command) {
    if (!fs::exists(dir / "stage.json"))
        throw DependencyError("missing " + (dir / "stage.json").string() + "; run `" + command + "` first");
    if (!stamped(dir, hash))
        throw DependencyError((dir / "stage.json").string() + " was produced by a different configuration; rerun `" +
                              command + "`");
}

// ---------------------------------------------------------------- workers

/// Calls f(i) for i in [0, n) on up to `workers` threads. Results must be
/// written to per-index slots; the first exception is rethrown.
template <class F>
void parallel_for(std::size_t n, int workers, F&& f) {
    if (workers <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) f(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr err;
    std::mutex mu;
    std::vector<std::thread> pool;
    const std::size_t threads = std::min<std::size_t>(n, static_cast<std::size_t>(workers));
    for (std::size_t t = 0; t < threads; ++t)
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < n; i = next++) {
                try {
                    f(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(mu);
                    if (!err) err = std::current_exception();
                    next = n;
                }
            }
        });
    for (auto& th : pool) th.join();
    if (err) std::rethrow_exception(err);
}

// ------------------------------------------------------------------- data

struct Subject {
    synth::SubjectRecord record;
    LabelMap label;  // original grid
    PreparedSubject prepared;
};

inline std::vector<Subject> load_subjects(const Layout& L, const ExperimentConfig& c, const std::string& domain,
                                          const std::string& split) {
    const auto manifest = synth::read_manifest(L.data_manifest());
    std::vector<Subject> out;
    for (const auto& r : manifest.select(domain, split)) {
        Subject s;
        s.record = r;
        const auto image = io::read_volume<Volume>(L.data() / r.image);
        s.label = io::read_volume<LabelMap>(L.data() / r.label);
        s.prepared = prepare_subject(image, &s.label, c.dataset.canonical);
        out.push_back(std::move(s));
    }
    return out;
}

inline std::vector<LabelMap> canonical_labels(const std::vector<Subject>& subjects) {
    std::vector<LabelMap> out;
    for (const auto& s : subjects) out.push_back(s.prepared.label);
    return out;
}

inline void gen_data(const ExperimentConfig& c, const Layout& L) {
    const std::string h = data_hash(c);
    if (stamped(L.data(), h)) {
        log("[gen-data] up to date");
        return;
    }
    fs::remove_all(L.data());
    const auto m = synth::build_dataset(c.dataset.anatomy, c.dataset.domains, L.data(), c.seed, true);
    stamp(L.data(), "gen-data", h);
    log("[gen-data] wrote " + std::to_string(m.subjects.size()) + " subjects to " + L.data().string());
}

// --------------------------------------------------------------- training

inline void train_seg(const ExperimentConfig& c, const Layout& L) {
    const std::string h = seg_hash(c);
    if (stamped(L.seg(), h)) {
        log("[train-seg] up to date");
        return;
    }
    require_stage(L.data(), data_hash(c), "gen-data");
    const auto tr = load_subjects(L, c, c.dataset.source_domain, "train");
    const auto va = load_subjects(L, c, c.dataset.source_domain, "val");
    std::vector<PreparedSubject> trp, vap;
    for (const auto& s : tr) trp.push_back(s.prepared);
    for (const auto& s : va) vap.push_back(s.prepared);
    const SegModel init(c.segmenter.normalizer, c.segmenter.unet, derive_seed(c.seed, "segmenter/init"));
    const auto res = train::train_segcnn(trp, vap, init, c.segmenter.train, c.segmenter.augment, [](const train::LogRow& r) {
        char buf[128];
        std::snprintf(buf, sizeof buf, "[train-seg] step %ld  loss %.4f  val dice %.4f", r.step, r.train_loss,
                      r.val_score.value_or(0.0));
        log(buf);
    });
    fs::remove_all(L.seg());
    save_seg_model(L.seg(), res.best, res.best_step, res.best_score);
    train::write_log_csv(L.seg() / "train_log.csv", res.log);
    stamp(L.seg(), "train-seg", h);
    log("[train-seg] best step " + std::to_string(res.best_step));
}

inline void train_dae(const ExperimentConfig& c, const Layout& L) {
    const std::string h = dae_hash(c);
    if (stamped(L.dae(), h)) {
        log("[train-dae] up to date");
        return;
    }
    require_stage(L.data(), data_hash(c), "gen-data");
    const auto tr = canonical_labels(load_subjects(L, c, c.dataset.source_domain, "train"));
    const auto va = canonical_labels(load_subjects(L, c, c.dataset.source_domain, "val"));
    const nn::UNet<float> init(c.dae.unet, derive_seed(c.seed, "dae/init"));
    const auto res =
        train::train_dae(tr, va, init, c.dae.train, c.dae.noise, c.dae.augment, [](const train::LogRow& r) {
            char buf[128];
            std::snprintf(buf, sizeof buf, "[train-dae] step %ld  loss %.4f  val denoised dice %.4f", r.step,
                          r.train_loss, r.val_score.value_or(0.0));
            log(buf);
        });
    fs::remove_all(L.dae());
    save_dae(L.dae(), res.best, res.best_step, res.best_score);
    train::write_log_csv(L.dae() / "train_log.csv", res.log);

    // quality of the selected prior on the validation labels
    const auto cases = train::corrupted_validation_set(va, c.dae.noise, derive_seed(c.dae.train.seed, "validation"));
    const auto st = train::denoise_stats(res.best, va, cases);
    const json q = {{"identity_dice", train::identity_dice(res.best, va)},
                    {"mean_denoised_dice", st.mean_denoised},
                    {"mean_corrupted_dice", st.mean_corrupted},
                    {"fraction_improved", st.fraction_improved},
                    {"cases", cases.size()}};
    std::ofstream(L.dae() / "quality.json") << q.dump(2) << '\n';
    stamp(L.dae(), "train-dae", h);
    log("[train-dae] best step " + std::to_string(res.best_step) + ", quality " + q.dump());
}

// -------------------------------------------------------------- adaptation

/// CLI --mode values map onto method names; method names pass through.
inline std::string method_from_mode(const std::string& mode) {
    if (mode == "none") return "baseline";
    if (mode == "dae") return "tta-dae";
    if (mode == "dae+atlas") return "tta";
    if (config::detail::valid_method(mode)) return mode;
    throw ConfigError("unknown --mode '" + mode + "'");
}

inline std::optional<adaptation::TTAMode> tta_mode(const std::string& method) {
    using adaptation::TTAMode;
    if (method == "tta" || method == "tta-fast") return TTAMode::DaeAtlas;
    if (method == "tta-dae") return TTAMode::Dae;
    if (method == "adapt-all") return TTAMode::AdaptAll;
    if (method == "oracle") return TTAMode::Oracle;
    return std::nullopt;
}

inline int postproc_passes(const std::string& method) {
    return method.rfind("postproc:", 0) == 0 ? std::stoi(method.substr(9)) : 0;
}

struct Outcome {
    LabelMap prediction;  // canonical grid
    std::optional<adaptation::AdaptResult> adapted;
};

inline void write_outcome(const fs::path& dir, const Subject& s, const Outcome& o, const std::string& method) {
    fs::create_directories(dir);
    io::write_volume(dir / (s.record.id + "_pred"), restore_to_original(o.prediction, s.prepared.record));
    if (!o.adapted) return;
    fs::create_directories(dir / "traces");
    adaptation::write_trace_csv(dir / "traces" / (s.record.id + ".csv"), o.adapted->trace);
    std::vector<const nn::ParamSet<float>*> sets{&o.adapted->model.norm.params()};
    if (method == "adapt-all") sets.push_back(&o.adapted->model.seg.params());
    const auto& best = o.adapted->trace.rows[o.adapted->trace.best];
    nn::save_checkpoint(dir / "phi" / s.record.id, sets,
                        {o.adapted->best_iteration, best.d_dae, o.adapted->model.arch_json()});
}

inline void adapt_method(const ExperimentConfig& c, const Layout& L, const std::string& method) {
    const std::string h = adapt_hash(c, method);
    const fs::path out = L.adapt(method);
    if (stamped(out, h)) {
        log("[adapt] " + method + " up to date");
        return;
    }
    require_stage(L.seg(), seg_hash(c), "train-seg");
    require_stage(L.dae(), dae_hash(c), "train-dae");
    const SegModel model = load_seg_model(L.seg());
    const nn::UNet<float> dae = load_dae(L.dae());
    const ProbMap atlas = adaptation::build_atlas(canonical_labels(load_subjects(L, c, c.dataset.source_domain, "train")));
    const adaptation::Priors priors{&dae, &atlas};
    fs::remove_all(out);

    auto cfg = c.tta;
    if (auto m = tta_mode(method)) cfg.mode = *m;
    const int passes = postproc_passes(method);

    for (const auto& domain : c.eval.domains) {
        const auto subjects = load_subjects(L, c, domain, "test");
        const fs::path dir = out / domain;
        if (method == "tta-fast") {
            if (subjects.empty()) continue;
            std::vector<adaptation::Subject> list;
            for (const auto& s : subjects) list.push_back({&s.prepared.image, &s.prepared.label});
            auto results = adaptation::adapt_fast(list, model, priors, cfg);
            for (std::size_t i = 0; i < subjects.size(); ++i) {
                Outcome o{results[i].prediction, std::move(results[i])};
                write_outcome(dir, subjects[i], o, method);
            }
        } else {
            parallel_for(subjects.size(), c.workers, [&](std::size_t i) {
                const Subject& s = subjects[i];
                Outcome o;
                if (method == "baseline") {
                    o.prediction = argmax(predict_probs(model, s.prepared.image));
                } else if (passes > 0) {
                    o.prediction = adaptation::dae_postprocess(predict_probs(model, s.prepared.image), dae, passes);
                } else {
                    o.adapted = adaptation::adapt(s.prepared.image, model, priors, &s.prepared.label, cfg);
                    o.prediction = o.adapted->prediction;
                }
                write_outcome(dir, s, o, method);
            });
        }
        log("[adapt] " + method + " " + domain + ": " + std::to_string(subjects.size()) + " subjects");
    }
    fs::create_directories(out);
    stamp(out, "adapt", h);
}

// -------------------------------------------------------------- evaluation

struct MetricsRow {
    std::string subject, domain, method;
    int label = 0;
    double dice = 0.0;
    std::optional<double> hd95;
};

inline std::vector<MetricsRow> read_metrics_csv(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw DependencyError("missing " + path.string() + "; run `evaluate` first");
    std::vector<MetricsRow> rows;
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> f;
        std::stringstream ss(line);
        for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
        while (f.size() < 7) f.emplace_back();
        try {
            MetricsRow r{f[0], f[1], f[2], std::stoi(f[3]), std::stod(f[4]), std::nullopt};
            if (!f[5].empty()) r.hd95 = std::stod(f[5]);
            rows.push_back(r);
        } catch (const std::logic_error&) {
            throw FormatError("malformed metrics line: " + line);
        }
    }
    return rows;
}

inline void evaluate(const ExperimentConfig& c, const Layout& L) {
    const std::string h = eval_hash(c);
    if (stamped(L.eval(), h)) {
        log("[evaluate] up to date");
        return;
    }
    for (const auto& m : c.eval.methods) require_stage(L.adapt(m), adapt_hash(c, m), "adapt");
    const auto manifest = synth::read_manifest(L.data_manifest());
    std::ostringstream csv;
    metrics::write_csv_header(csv);
    for (const auto& method : c.eval.methods)
        for (const auto& domain : c.eval.domains) {
            const auto subjects = manifest.select(domain, "test");
            std::vector<metrics::MetricsRecord> recs(subjects.size());
            parallel_for(subjects.size(), c.workers, [&](std::size_t i) {
                const auto& r = subjects[i];
                const fs::path pred = L.adapt(method) / domain / (r.id + "_pred");
                if (!io::volume_exists(pred)) throw DependencyError("missing prediction " + pred.string());
                recs[i] = metrics::evaluate(io::read_volume<LabelMap>(pred), io::read_volume<LabelMap>(L.data() / r.label),
                                            r.id, domain, method);
            });
            for (const auto& rec : recs) metrics::write_csv_rows(csv, rec);
        }
    fs::create_directories(L.eval());
    std::ofstream(L.eval() / "metrics.csv", std::ios::trunc) << csv.str();
    stamp(L.eval(), "evaluate", h);
    log("[evaluate] wrote " + (L.eval() / "metrics.csv").string());
}

// ------------------------------------------------------------------ report

struct SubjectScore {
    double dice = 0.0;
    std::optional<double> hd95;
};

struct Cell {
    std::string method, domain;
    std::vector<std::string> subjects;
    std::vector<SubjectScore> scores;
    double dice_mean = 0.0, dice_std = 0.0;
    std::optional<double> hd95_mean;
    std::optional<double> p_vs_baseline, p_vs_postproc;
};

/// Per-subject mean over labels, grouped by method and domain.
inline std::map<std::pair<std::string, std::string>, std::map<std::string, SubjectScore>> per_subject(
    const std::vector<MetricsRow>& rows) {
    std::map<std::pair<std::string, std::string>, std::map<std::string, std::vector<const MetricsRow*>>> g;
    for (const auto& r : rows) g[{r.method, r.domain}][r.subject].push_back(&r);
    std::map<std::pair<std::string, std::string>, std::map<std::string, SubjectScore>> out;
    for (const auto& [key, subs] : g)
        for (const auto& [sid, labels] : subs) {
            SubjectScore s;
            double hs = 0.0;
            int hn = 0;
            for (const auto* r : labels) {
                s.dice += r->dice;
                if (r->hd95) {
                    hs += *r->hd95;
                    ++hn;
                }
            }
            s.dice /= static_cast<double>(labels.size());
            if (hn > 0) s.hd95 = hs / hn;
            out[key][sid] = s;
        }
    return out;
}

inline std::optional<double> paired_p(const std::map<std::string, SubjectScore>& a,
                                      const std::map<std::string, SubjectScore>& b, long n_perm, std::uint64_t seed) {
    std::vector<double> x, y;
    for (const auto& [sid, s] : a) {
        auto it = b.find(sid);
        if (it == b.end()) continue;
        x.push_back(s.dice);
        y.push_back(it->second.dice);
    }
    if (x.size() < 2) return std::nullopt;
    return metrics::permutation_test(x, y, n_perm, seed).p_value;
}

inline std::vector<Cell> summarize(const ExperimentConfig& c, const std::vector<MetricsRow>& rows) {
    const auto scores = per_subject(rows);
    const std::string pp = "postproc:1";
    std::vector<Cell> cells;
    for (const auto& method : c.eval.methods)
        for (const auto& domain : c.eval.domains) {
            auto it = scores.find({method, domain});
            if (it == scores.end()) continue;
            Cell cell{method, domain, {}, {}, 0.0, 0.0, std::nullopt, std::nullopt, std::nullopt};
            double hs = 0.0;
            int hn = 0;
            for (const auto& [sid, s] : it->second) {
                cell.subjects.push_back(sid);
                cell.scores.push_back(s);
                cell.dice_mean += s.dice;
                if (s.hd95) {
                    hs += *s.hd95;
                    ++hn;
                }
            }
            const double n = static_cast<double>(cell.scores.size());
            cell.dice_mean /= n;
            for (const auto& s : cell.scores) cell.dice_std += (s.dice - cell.dice_mean) * (s.dice - cell.dice_mean);
            cell.dice_std = n > 1 ? std::sqrt(cell.dice_std / (n - 1)) : 0.0;
            if (hn > 0) cell.hd95_mean = hs / hn;
            const std::uint64_t seed = derive_seed(c.eval.seed, method + "/" + domain);
            if (method != "baseline")
                if (auto b = scores.find({"baseline", domain}); b != scores.end())
                    cell.p_vs_baseline = paired_p(it->second, b->second, c.eval.n_perm, derive_seed(seed, "baseline"));
            if (method != pp)
                if (auto b = scores.find({pp, domain}); b != scores.end())
                    cell.p_vs_postproc = paired_p(it->second, b->second, c.eval.n_perm, derive_seed(seed, "postproc"));
            cells.push_back(std::move(cell));
        }
    return cells;
}

inline std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

inline std::string opt_fmt(const char* f, const std::optional<double>& v) { return v ? fmt(f, *v) : ""; }

inline void write_results(const fs::path& dir, const std::vector<Cell>& cells) {
    std::ofstream csv(dir / "results.csv", std::ios::trunc);
    csv << "method,domain,n,dice_mean,dice_std,hd95_mean,p_vs_baseline,p_vs_postproc\n";
    for (const auto& c : cells)
        csv << c.method << ',' << c.domain << ',' << c.scores.size() << ',' << fmt("%.4f", c.dice_mean) << ','
            << fmt("%.4f", c.dice_std) << ',' << opt_fmt("%.3f", c.hd95_mean) << ','
            << opt_fmt("%.4g", c.p_vs_baseline) << ',' << opt_fmt("%.4g", c.p_vs_postproc) << '\n';

    // aligned text: one row per method, Dice (HD95) per domain, * marks p < 0.05 vs post-processing
    std::vector<std::string> methods, domains;
    for (const auto& c : cells) {
        if (std::find(methods.begin(), methods.end(), c.method) == methods.end()) methods.push_back(c.method);
        if (std::find(domains.begin(), domains.end(), c.domain) == domains.end()) domains.push_back(c.domain);
    }
    std::ofstream txt(dir / "results.txt", std::ios::trunc);
    char buf[256];
    std::snprintf(buf, sizeof buf, "%-14s", "method");
    txt << buf;
    for (const auto& d : domains) {
        std::snprintf(buf, sizeof buf, " | %-22s", d.c_str());
        txt << buf;
    }
    txt << '\n' << std::string(14 + 25 * domains.size(), '-') << '\n';
    for (const auto& m : methods) {
        std::snprintf(buf, sizeof buf, "%-14s", m.c_str());
        txt << buf;
        for (const auto& d : domains) {
            auto it = std::find_if(cells.begin(), cells.end(), [&](const Cell& c) { return c.method == m && c.domain == d; });
            std::string v = "-";
            if (it != cells.end()) {
                v = fmt("%.3f", it->dice_mean) + (it->p_vs_postproc && *it->p_vs_postproc < 0.05 ? "*" : " ");
                v += " (" + (it->hd95_mean ? fmt("%.2f", *it->hd95_mean) : std::string("n/a")) + ")";
            }
            std::snprintf(buf, sizeof buf, " | %-22s", v.c_str());
            txt << buf;
        }
        txt << '\n';
    }
    txt << "\nmean foreground Dice (mean HD95, mm); * p < 0.05 vs postproc:1, paired permutation test\n";
}

inline void report(const ExperimentConfig& c, const Layout& L, bool plots) {
    const std::string h = hash_of({{"eval", eval_hash(c)}, {"eval_cfg", c.raw.at("eval")}, {"plots", plots}});
    if (stamped(L.report(), h)) {
        log("[report] up to date");
        return;
    }
    require_stage(L.eval(), eval_hash(c), "evaluate");
    const auto rows = read_metrics_csv(L.eval() / "metrics.csv");
    const auto cells = summarize(c, rows);
    fs::remove_all(L.report());
    fs::create_directories(L.report());
    write_results(L.report(), cells);

    // convergence curves: copies of the per-subject traces
    for (const auto& method : c.eval.methods) {
        if (!tta_mode(method)) continue;
        for (const auto& domain : c.eval.domains) {
            const fs::path src = L.adapt(method) / domain / "traces";
            if (!fs::exists(src)) continue;
            const fs::path dst = L.report() / "convergence" / Layout::dir_name(method) / domain;
            fs::create_directories(dst);
            std::vector<fs::path> files;
            for (const auto& e : fs::directory_iterator(src)) files.push_back(e.path());
            std::sort(files.begin(), files.end());
            std::vector<plot::Series> series;
            for (const auto& f : files) {
                fs::copy_file(f, dst / f.filename(), fs::copy_options::overwrite_existing);
                if (!plots) continue;
                plot::Series dae{{}, {}, {30, 90, 200}}, gt{{}, {}, {200, 60, 30}};
                for (const auto& r : adaptation::read_trace_csv(f)) {
                    dae.x.push_back(static_cast<double>(r.iteration));
                    dae.y.push_back(r.d_dae);
                    if (r.d_gt) {
                        gt.x.push_back(static_cast<double>(r.iteration));
                        gt.y.push_back(*r.d_gt);
                    }
                }
                series.push_back(dae);
                series.push_back(gt);
            }
            if (plots && !series.empty()) {
                fs::create_directories(L.report() / "plots");
                plot::line_chart(series).write_ppm(L.report() / "plots" /
                                                   (Layout::dir_name(method) + "_" + domain + ".ppm"));
            }
        }
    }
    stamp(L.report(), "report", h);
    log("[report] wrote " + (L.report() / "results.csv").string());
}

inline void run_all(const ExperimentConfig& c, const Layout& L, bool plots) {
    gen_data(c, L);
    train_seg(c, L);
    train_dae(c, L);
    for (const auto& m : c.eval.methods) adapt_method(c, L, m);
    evaluate(c, L);
    report(c, L, plots);
}

}  // namespace tta::experiment
