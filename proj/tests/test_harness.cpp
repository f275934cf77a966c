#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "tta/experiment.hpp"
#include "test_util.hpp"

using namespace tta;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

// A few seconds end to end.
json tiny_overrides() {
    using config::structure_json;
    return {{"dataset",
             {{"anatomy",
               {{"shape", {8, 20, 20}},
                {"structures",
                 {structure_json(1, 1, {2.5, 6, 6}, {3.2, 8, 8}, 1.0), structure_json(1, 1, {1.5, 3, 3}, {2, 4.5, 4.5}, 1.5),
                  structure_json(1, 1, {1, 1.5, 1.5}, {1.5, 2.5, 2.5}, 2.0)}}}},
              {"canonical", {{"shape", {8, 16, 16}}}},
              {"domains",
               {{{"counts", {{"train", 3}, {"val", 2}, {"test", 2}}}},
                {{"counts", {{"train", 0}, {"val", 0}, {"test", 3}}}},
                {{"counts", {{"train", 0}, {"val", 0}, {"test", 2}}}}}}}},
            {"segmenter",
             {{"unet", {{"levels", 2}, {"base_width", 4}}},
              {"normalizer", {{"hidden", 4}}},
              {"train", {{"iterations", 12}, {"batch_size", 4}, {"val_every", 6}}}}},
            {"dae",
             {{"unet", {{"levels", 2}, {"base_width", 4}}},
              {"train", {{"iterations", 6}, {"val_every", 3}}},
              {"noise", {{"n1_max", 4}, {"n2_max", 2}, {"val_corruptions", 2}}}}},
            {"tta", {{"iterations", 4}, {"fast_iterations", 2}, {"refresh_every", 2}, {"batch_size", 4}}},
            {"eval", {{"n_perm", 200}, {"methods", {"baseline", "postproc:2", "tta", "tta-fast", "oracle"}}}}};
}

config::ExperimentConfig tiny_config() { return config::parse(config::merged("desk", tiny_overrides())); }

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

struct QuietLog : ::testing::Test {
    void SetUp() override {
        saved = experiment::logger();
        experiment::logger() = [this](const std::string& m) { lines.push_back(m); };
    }
    void TearDown() override { experiment::logger() = saved; }
    std::function<void(const std::string&)> saved;
    std::vector<std::string> lines;
};

}  // namespace

TEST(HarnessConfig, UnknownKeyNamesItsPath) {
    try {
        config::merged("desk", {{"dae", {{"noise", {{"n1_maxx", 3}}}}}});
        FAIL() << "expected ConfigError";
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("dae.noise.n1_maxx"), std::string::npos) << e.what();
        EXPECT_EQ(e.exit_code(), 2);
    }
    try {
        config::merged("desk", {{"dataset", {{"domains", {{{"nmae", "x"}}}}}}});
        FAIL() << "expected ConfigError";
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("dataset.domains[0].nmae"), std::string::npos) << e.what();
    }
}

TEST(HarnessConfig, InvalidValuesAreRejected) {
    EXPECT_THROW(config::parse(config::merged("desk", {{"eval", {{"methods", {"nope"}}}}})), ConfigError);
    EXPECT_THROW(config::parse(config::merged("desk", {{"eval", {{"domains", {"TD-huge"}}}}})), ConfigError);
    EXPECT_THROW(config::parse(config::merged("desk", {{"tta", {{"beta", 2.0}}}})), ConfigError);
    EXPECT_THROW(config::parse(config::merged("desk", {{"tta", {{"iterations", "many"}}}})), ConfigError);
    EXPECT_THROW(config::parse(config::merged("desk", {{"dae", {{"train", {{"batch_size", 4}}}}}})), ConfigError);
    EXPECT_THROW(config::profile("huge"), ConfigError);
    EXPECT_NO_THROW(config::parse(config::profile("paper")));
}

TEST(HarnessConfig, SeedsDeriveFromRoot) {
    const auto a = config::load("desk", std::nullopt, 1, std::nullopt);
    const auto b = config::load("desk", std::nullopt, 2, 3);
    EXPECT_NE(a.segmenter.train.seed, b.segmenter.train.seed);
    EXPECT_NE(a.segmenter.train.seed, a.dae.train.seed);
    EXPECT_EQ(b.workers, 3);
    EXPECT_EQ(config::load("desk", std::nullopt, 1, std::nullopt).segmenter.train.seed, a.segmenter.train.seed);
}

TEST(HarnessConfig, ModeMapping) {
    EXPECT_EQ(experiment::method_from_mode("none"), "baseline");
    EXPECT_EQ(experiment::method_from_mode("dae"), "tta-dae");
    EXPECT_EQ(experiment::method_from_mode("dae+atlas"), "tta");
    EXPECT_EQ(experiment::method_from_mode("adapt-all"), "adapt-all");
    EXPECT_EQ(experiment::method_from_mode("oracle"), "oracle");
    EXPECT_EQ(experiment::method_from_mode("postproc:3"), "postproc:3");
    EXPECT_THROW(experiment::method_from_mode("postproc:x"), ConfigError);
    EXPECT_THROW(experiment::method_from_mode("magic"), ConfigError);
}

TEST(HarnessWorkers, ParallelForCoversAllAndRethrows) {
    std::vector<int> hit(50, 0);
    experiment::parallel_for(hit.size(), 4, [&](std::size_t i) { hit[i] += 1; });
    for (int h : hit) EXPECT_EQ(h, 1);
    EXPECT_THROW(experiment::parallel_for(20, 3,
                                          [](std::size_t i) {
                                              if (i == 7) throw NumericalError("boom");
                                          }),
                 NumericalError);
}

TEST_F(QuietLog, MissingUpstreamIsADependencyError) {
    const auto cfg = tiny_config();
    const experiment::Layout L{testutil::scratch_dir("harness_dep")};
    try {
        experiment::train_seg(cfg, L);
        FAIL() << "expected DependencyError";
    } catch (const DependencyError& e) {
        EXPECT_NE(std::string(e.what()).find("data/stage.json"), std::string::npos) << e.what();
        EXPECT_NE(std::string(e.what()).find("gen-data"), std::string::npos);
        EXPECT_EQ(e.exit_code(), 3);
    }
    EXPECT_THROW(experiment::evaluate(cfg, L), DependencyError);
    EXPECT_THROW(experiment::report(cfg, L, false), DependencyError);
}

TEST_F(QuietLog, EvaluateOnGroundTruthIsPerfect) {
    auto cfg = tiny_config();
    cfg.eval.methods = {"baseline"};
    const experiment::Layout L{testutil::scratch_dir("harness_gt")};
    experiment::gen_data(cfg, L);
    // hand the ground truth in as the predictions
    const auto manifest = synth::read_manifest(L.data_manifest());
    for (const auto& d : cfg.eval.domains)
        for (const auto& r : manifest.select(d, "test")) {
            fs::create_directories(L.adapt("baseline") / d);
            io::write_volume(L.adapt("baseline") / d / (r.id + "_pred"), io::read_volume<LabelMap>(L.data() / r.label));
        }
    experiment::stamp(L.adapt("baseline"), "adapt", experiment::adapt_hash(cfg, "baseline"));
    experiment::evaluate(cfg, L);
    const auto rows = experiment::read_metrics_csv(L.eval() / "metrics.csv");
    ASSERT_EQ(rows.size(), 7u * 3u);  // subjects x foreground labels
    for (const auto& r : rows) {
        EXPECT_EQ(r.dice, 1.0);
        ASSERT_TRUE(r.hd95.has_value());
        EXPECT_EQ(*r.hd95, 0.0);
    }
}

TEST_F(QuietLog, PipelineIsCachedAndDeterministic) {
    const auto cfg = tiny_config();
    const experiment::Layout a{testutil::scratch_dir("harness_a")}, b{testutil::scratch_dir("harness_b")};
    experiment::run_all(cfg, a, true);
    experiment::run_all(cfg, b, false);
    for (const char* f : {"eval/metrics.csv", "report/results.csv", "report/results.txt"})
        EXPECT_EQ(slurp(a.root / f), slurp(b.root / f)) << f;

    // one results row per method x domain, each traceable to metrics rows
    const auto metrics = experiment::read_metrics_csv(a.eval() / "metrics.csv");
    std::istringstream res(slurp(a.report() / "results.csv"));
    std::string line;
    std::getline(res, line);
    int n = 0;
    while (std::getline(res, line)) {
        const auto method = line.substr(0, line.find(','));
        const auto rest = line.substr(line.find(',') + 1);
        const auto domain = rest.substr(0, rest.find(','));
        EXPECT_TRUE(std::any_of(metrics.begin(), metrics.end(),
                                [&](const auto& m) { return m.method == method && m.domain == domain; }))
            << line;
        ++n;
    }
    EXPECT_EQ(n, static_cast<int>(cfg.eval.methods.size() * cfg.eval.domains.size()));
    EXPECT_TRUE(fs::exists(a.report() / "convergence" / "tta" / "TD-small"));
    EXPECT_TRUE(fs::exists(a.report() / "plots" / "tta_TD-small.ppm"));

    // every adapted subject keeps its trace and the selected normaliser
    for (const auto& d : cfg.eval.domains)
        for (const auto& e : fs::directory_iterator(a.adapt("tta") / d / "traces")) {
            const auto trace = adaptation::read_trace_csv(e.path());
            const auto ck = nn::load_checkpoint(a.adapt("tta") / d / "phi" / e.path().stem());
            EXPECT_EQ(trace[adaptation::select_best_refresh(trace)].iteration, ck.info.global_step);
        }

    // second run: every stage reports up to date and nothing is rewritten
    const auto stamp_time = fs::last_write_time(a.seg() / "stage.json");
    lines.clear();
    experiment::run_all(cfg, a, true);
    EXPECT_EQ(fs::last_write_time(a.seg() / "stage.json"), stamp_time);
    ASSERT_FALSE(lines.empty());
    for (const auto& l : lines) EXPECT_NE(l.find("up to date"), std::string::npos) << l;

    // a changed adaptation setting reruns adaptation only
    auto cfg2 = cfg;
    cfg2.raw["tta"]["iterations"] = 2;
    cfg2.tta.iterations = 2;
    lines.clear();
    experiment::run_all(cfg2, a, false);
    int reran = 0;
    for (const auto& l : lines)
        if (l.find("up to date") == std::string::npos) ++reran;
    EXPECT_GT(reran, 0);
    for (const char* s : {"[gen-data] up to date", "[train-seg] up to date", "[train-dae] up to date",
                          "[adapt] baseline up to date"})
        EXPECT_NE(std::find(lines.begin(), lines.end(), s), lines.end()) << s;
}

TEST_F(QuietLog, WorkerCountDoesNotChangeMetrics) {
    auto cfg = tiny_config();
    cfg.eval.methods = {"baseline", "tta"};
    const experiment::Layout a{testutil::scratch_dir("harness_w1")}, b{testutil::scratch_dir("harness_w3")};
    experiment::run_all(cfg, a, false);
    cfg.workers = 3;
    experiment::run_all(cfg, b, false);
    EXPECT_EQ(slurp(a.eval() / "metrics.csv"), slurp(b.eval() / "metrics.csv"));
}
