#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "polar_probe/experiment.hpp"
#include "unit/helpers.hpp"

using namespace polar;
namespace fs = std::filesystem;

namespace {

void write_text(const fs::path& p, const std::string& text) {
    std::ofstream f(p);
    f << text;
}

std::vector<std::string> read_lines(const fs::path& p) {
    std::ifstream f(p);
    std::vector<std::string> out;
    for (std::string line; std::getline(f, line);) out.push_back(line);
    return out;
}

PlantedSpec small_spec() {
    PlantedSpec s;
    s.num_labels = 6;
    s.code_dim = 16;
    s.ambient_dim = 48;
    s.min_length = 4;
    s.max_length = 9;
    s.train_count = 80;
    s.validation_count = 15;
    s.test_count = 15;
    s.seed = 5;
    return s;
}

// Planted data plus its generated experiment.json, with short training.
struct SmallExperiment {
    testutil::TempDir dir{"experiment"};
    ExperimentConfig cfg;

    explicit SmallExperiment(PlantedSpec spec = small_spec()) {
        cmd_synth(spec, dir.path());
        cfg = load_config(dir / "experiment.json",
                          {"train.epochs=4", "train.probe_dim=16", "train.batch_sentences=20",
                           "report.formats=[\"csv\",\"json\"]"});
        cfg.output_dir = dir / "runs";
    }
};

}  // namespace

TEST(Config, DefaultsWhenEmpty) {
    const ExperimentConfig c = config_from_json(nlohmann::json::object());
    EXPECT_EQ(c.layers, std::vector<int>{0});
    EXPECT_EQ(c.train.kind, ProbeKind::polar);
    EXPECT_EQ(c.train.probe_dim, 128);
    EXPECT_EQ(c.jobs, 1);
    EXPECT_TRUE(c.filter_web_addresses);
}

TEST(Config, OverridesApplyBeforeInterpretation) {
    testutil::TempDir dir("config");
    write_text(dir / "c.json", R"({"train": {"lambda": 3, "epochs": 7}, "layer": 2})");
    const auto c = load_config(dir / "c.json", {"train.lambda=0.5", "train.selection=las", "layer=[4,5]",
                                                "metrics.exclude_punct=false", "output_dir=out/x"});
    EXPECT_DOUBLE_EQ(c.train.lambda, 0.5);
    EXPECT_EQ(c.train.epochs, 7);
    EXPECT_EQ(c.train.selection, SelectionCriterion::validation_las);
    EXPECT_EQ(c.layers, (std::vector<int>{4, 5}));
    EXPECT_FALSE(c.eval.metric.exclude_punct);
    EXPECT_EQ(c.output_dir, fs::path("out/x"));
}

TEST(Config, LayerRange) {
    const auto c = config_from_json(nlohmann::json::parse(R"({"layers": {"from": 3, "to": 6}})"));
    EXPECT_EQ(c.layers, (std::vector<int>{3, 4, 5, 6}));
}

TEST(Config, UnknownKeysAreRejected) {
    EXPECT_THROW(config_from_json(nlohmann::json::parse(R"({"trian": {}})")), ConfigError);
    EXPECT_THROW(config_from_json(nlohmann::json::parse(R"({"train": {"lamda": 1}})")), ConfigError);
    EXPECT_THROW(config_from_json(nlohmann::json::parse(R"({"data": {"dev": "x"}})")), ConfigError);
    try {
        config_from_json(nlohmann::json::parse(R"({"metrics": {"auc_budget": 5}})"));
        FAIL();
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("metrics.auc_budget"), std::string::npos);
    }
    EXPECT_THROW(load_config({}, {"train.bogus=1"}), ConfigError);
}

TEST(Config, BadValuesAreRejected) {
    auto bad = [](const char* text) { return config_from_json(nlohmann::json::parse(text)); };
    EXPECT_THROW(bad(R"({"jobs": 0})"), ConfigError);
    EXPECT_THROW(bad(R"({"layers": []})"), ConfigError);
    EXPECT_THROW(bad(R"({"layers": {"from": 4, "to": 1}})"), ConfigError);
    EXPECT_THROW(bad(R"({"layer": 1, "layers": [1]})"), ConfigError);
    EXPECT_THROW(bad(R"({"report": {"formats": ["pdf"]}})"), ConfigError);
    EXPECT_THROW(bad(R"({"train": {"epochs": "many"}})"), ConfigError);
    EXPECT_THROW(bad(R"({"train": {"kind": "cubic"}})"), ConfigError);
    EXPECT_THROW(bad(R"({"metrics": {"auc_pair_budget": 0}})"), ConfigError);
    EXPECT_THROW(load_config({}, {"novalue"}), ConfigError);
    EXPECT_THROW(load_config("/nonexistent/config.json"), ConfigError);
}

TEST(Config, ZeroLambdaPolarIsStructural) {
    const auto c = load_config({}, {"train.kind=polar", "train.lambda=0"});
    EXPECT_EQ(c.train.kind, ProbeKind::structural);
    EXPECT_EQ(c.train.effective_lambda(), 0.0);
    EXPECT_EQ(to_json(c)["train"]["kind"], "structural");
    EXPECT_EQ(to_json(c)["train"]["lambda"], 0.0);
}

TEST(Config, RelativeDataPaths) {
    testutil::TempDir dir("paths");
    write_text(dir / "c.json", R"({"data": {"train": "tb/train.conllu", "bundle": "/abs/bundle"}})");

    ::unsetenv(kDataRootEnv);
    auto c = load_config(dir / "c.json");
    EXPECT_EQ(c.data.train, dir.path() / "tb/train.conllu");
    EXPECT_EQ(c.data.bundle, fs::path("/abs/bundle"));

    ::setenv(kDataRootEnv, "/data/root", 1);
    c = load_config(dir / "c.json");
    ::unsetenv(kDataRootEnv);
    EXPECT_EQ(c.data.train, fs::path("/data/root/tb/train.conllu"));
    EXPECT_EQ(c.data.bundle, fs::path("/abs/bundle"));
}

TEST(Config, JsonSnapshotReloads) {
    const auto c = load_config({}, {"train.lambda=4", "layers=[1,2]", "sweep.probe_dims=[8,16]",
                                    "report.formats=[\"svg\"]", "eval.gold_injection=true"});
    const auto back = config_from_json(to_json(c));
    EXPECT_EQ(to_json(back), to_json(c));
}

TEST(RunDir, TimestampedNamesDoNotCollide) {
    testutil::TempDir dir("rundir");
    ExperimentConfig cfg;
    cfg.output_dir = dir / "runs";
    const fs::path a = make_run_dir(cfg, "train");
    const fs::path b = make_run_dir(cfg, "train");
    const fs::path c = make_run_dir(cfg, "train");
    EXPECT_NE(a, b);
    EXPECT_NE(b, c);
    EXPECT_NE(a, c);
    for (const auto& d : {a, b, c}) {
        EXPECT_EQ(d.filename().string().rfind("train-", 0), 0u);
        EXPECT_TRUE(fs::exists(d / "config.json"));
    }
    const fs::path x = make_run_dir(cfg, "evaluate", dir / "explicit");
    EXPECT_EQ(x, dir / "explicit");
    std::ifstream f(x / "config.json");
    EXPECT_NO_THROW(config_from_json(nlohmann::json::parse(f)));
}

TEST(ExitCodes, Mapping) {
    EXPECT_EQ(exit_code_for(ConfigError("x")), 2);
    EXPECT_EQ(exit_code_for(IoError("x")), 3);
    EXPECT_EQ(exit_code_for(ParseError("x", 3)), 3);
    EXPECT_EQ(exit_code_for(TreeError("s", "x")), 3);
    EXPECT_EQ(exit_code_for(ValidationError("f", "x")), 3);
    EXPECT_EQ(exit_code_for(DimensionError("x")), 3);
    EXPECT_EQ(exit_code_for(AlignmentError("x")), 3);
    EXPECT_EQ(exit_code_for(NumericError("x")), 4);
    EXPECT_EQ(exit_code_for(DegenerateVectorError("x")), 4);
    EXPECT_EQ(exit_code_for(std::runtime_error("x")), 1);
}

TEST(Pipeline, TrainThenEvaluateWritesArtifacts) {
    SmallExperiment ex;
    const fs::path run = make_run_dir(ex.cfg, "train", ex.dir / "run");
    const TrainOutcome t = cmd_train(ex.cfg, run);
    for (const char* f : {"probe.bin", "training_log.csv", "inventory.csv", "config.json"})
        EXPECT_TRUE(fs::exists(run / f)) << f;
    EXPECT_EQ(read_lines(run / "training_log.csv").size(), 1u + 1u + 4u);

    const EvalReport rep = cmd_evaluate(ex.cfg, t.probe_path, run);
    for (const char* f : {"prototypes.bin", "report.json", "report.csv", "strata.csv", "predictions.conllu",
                          "cosine_matrix.csv", "pca.csv"})
        EXPECT_TRUE(fs::exists(run / f)) << f;
    EXPECT_FALSE(fs::exists(run / "cosine_matrix.svg"));

    // denominators: every non-root word of the test split is scored, one root per sentence
    const auto test = read_conllu_file(ex.cfg.data.test.string());
    std::size_t edges = 0;
    for (const auto& s : test) edges += s.size() - 1;
    EXPECT_EQ(rep.metrics.sentences, test.size());
    EXPECT_EQ(rep.metrics.uuas.denominator, edges);
    EXPECT_EQ(rep.metrics.las.denominator, edges);
    EXPECT_EQ(rep.metrics.root.denominator, test.size());

    std::ifstream jf(run / "report.json");
    const auto j = nlohmann::json::parse(jf);
    EXPECT_EQ(j["probe"]["kind"], "polar");
    EXPECT_EQ(j["probe"]["k_probe"], 16);
    EXPECT_EQ(j["gold_injection"], false);
    // predicted heads come from per-edge direction calls and need not form a tree,
    // so only the layout is checked here
    std::size_t ids = 0, word_lines = 0;
    for (const auto& line : read_lines(run / "predictions.conllu")) {
        if (line.rfind("# sent_id", 0) == 0) ++ids;
        else if (!line.empty() && line[0] != '#') ++word_lines;
    }
    EXPECT_EQ(ids, test.size());
    EXPECT_EQ(word_lines, edges + test.size());
}

TEST(Pipeline, GoldInjectionScoresPerfectly) {
    SmallExperiment ex;
    const fs::path run = make_run_dir(ex.cfg, "train", ex.dir / "run");
    const TrainOutcome t = cmd_train(ex.cfg, run);
    ex.cfg.eval.gold_injection = true;
    const EvalReport rep = cmd_evaluate(ex.cfg, t.probe_path, run);
    EXPECT_EQ(rep.metrics.uuas.value(), 1.0);
    EXPECT_EQ(rep.metrics.las.value(), 1.0);
    EXPECT_EQ(rep.metrics.root.value(), 1.0);
    EXPECT_EQ(rep.metrics.type_accuracy.value(), 1.0);
    EXPECT_EQ(rep.metrics.direction_accuracy.value(), 1.0);
}

TEST(Pipeline, MissingInputsNameThePath) {
    SmallExperiment ex;
    ExperimentConfig cfg = ex.cfg;
    cfg.data.bundle = ex.dir / "nope";
    try {
        cmd_train(cfg, ex.dir / "run");
        FAIL();
    } catch (const IoError& e) {
        EXPECT_NE(std::string(e.what()).find("nope"), std::string::npos);
    }
    cfg = ex.cfg;
    cfg.data.validation = ex.dir / "missing.conllu";
    EXPECT_THROW(cmd_train(cfg, ex.dir / "run"), IoError);
    cfg = ex.cfg;
    cfg.data.validation.clear();
    EXPECT_THROW(cmd_train(cfg, ex.dir / "run"), ConfigError);
    EXPECT_THROW(cmd_evaluate(ex.cfg, ex.dir / "missing.bin", ex.dir / "run"), IoError);
}

TEST(Pipeline, LayerAbsentFromBundle) {
    SmallExperiment ex;
    ex.cfg.layers = {3};
    fs::create_directories(ex.dir / "run");
    EXPECT_THROW(cmd_train(ex.cfg, ex.dir / "run"), ValidationError);
}

TEST(Sweep, SingleValueMatchesTrainThenEvaluate) {
    SmallExperiment ex;
    ex.cfg.sweep_probe_dims = {12};
    const auto rows = cmd_sweep(ex.cfg, SweepAxis::probe_dim, ex.dir / "sweep");
    ASSERT_EQ(rows.size(), 1u);
    ASSERT_TRUE(rows[0].ok) << rows[0].error;

    ExperimentConfig direct = ex.cfg;
    direct.train.probe_dim = 12;
    const fs::path run = ex.dir / "direct";
    fs::create_directories(run);
    const TrainOutcome t = cmd_train(direct, run);
    const EvalReport rep = cmd_evaluate(direct, t.probe_path, run);

    EXPECT_EQ(rows[0].selected_epoch, t.result.probe.selected_epoch);
    EXPECT_EQ(rows[0].metrics->las.numerator, rep.metrics.las.numerator);
    EXPECT_EQ(rows[0].metrics->uuas.numerator, rep.metrics.uuas.numerator);
    EXPECT_EQ(rows[0].auc, rep.auc->auc);
    EXPECT_TRUE(fs::exists(ex.dir / "sweep" / "probe_dim_12" / "probe.bin"));
}

TEST(Sweep, OneRowPerLayerAndFailuresAreRecorded) {
    PlantedSpec spec = small_spec();
    spec.num_layers = 2;
    SmallExperiment ex(spec);
    ex.cfg.layers = {0, 1, 9};
    const auto rows = cmd_sweep(ex.cfg, SweepAxis::layer, ex.dir / "sweep");
    ASSERT_EQ(rows.size(), 3u);
    EXPECT_TRUE(rows[0].ok) << rows[0].error;
    EXPECT_TRUE(rows[1].ok) << rows[1].error;
    EXPECT_FALSE(rows[2].ok);
    EXPECT_NE(rows[2].error.find("layer 9"), std::string::npos);

    const auto lines = read_lines(ex.dir / "sweep" / "sweep.csv");
    ASSERT_EQ(lines.size(), 4u);
    EXPECT_EQ(lines[0].rfind("layer,status,", 0), 0u);
    EXPECT_EQ(lines[1].rfind("0,ok,", 0), 0u);
    EXPECT_EQ(lines[2].rfind("1,ok,", 0), 0u);
    EXPECT_EQ(lines[3].rfind("9,failed,", 0), 0u);
}

TEST(Sweep, ParallelJobsMatchSerial) {
    SmallExperiment ex;
    ex.cfg.sweep_probe_dims = {8, 12};
    const auto serial = cmd_sweep(ex.cfg, SweepAxis::probe_dim, ex.dir / "serial");
    ex.cfg.jobs = 2;
    const auto parallel = cmd_sweep(ex.cfg, SweepAxis::probe_dim, ex.dir / "parallel");
    ASSERT_EQ(serial.size(), parallel.size());
    for (std::size_t i = 0; i < serial.size(); ++i) {
        ASSERT_TRUE(serial[i].ok && parallel[i].ok);
        EXPECT_EQ(serial[i].metrics->las.numerator, parallel[i].metrics->las.numerator);
        EXPECT_EQ(serial[i].auc, parallel[i].auc);
    }
}

TEST(Validate, ReportsMissingIdsAndWordMismatch) {
    SmallExperiment ex;
    auto test = read_conllu_file(ex.cfg.data.test.string());
    test[0].id = "not-in-bundle";
    test[0].comments.clear();
    // an extra word keeps the tree valid but disagrees with the bundle
    Word extra = test[1].words.back();
    extra.index = static_cast<int>(test[1].size()) + 1;
    extra.head = 1;
    extra.deprel = "dep";
    test[1].words.push_back(extra);
    const fs::path tb = ex.dir / "edited.conllu";
    write_conllu_file(tb.string(), {test[0], test[1]});
    const auto checks = cmd_validate({tb}, ex.cfg.data.bundle);
    bool saw_missing = false, saw_mismatch = false;
    for (const auto& c : checks) {
        if (c.name == "coverage" && !c.passed && c.detail.find("not-in-bundle") != std::string::npos)
            saw_missing = true;
        if (c.name == "alignment" && !c.passed && c.detail.find(test[1].id) != std::string::npos)
            saw_mismatch = true;
    }
    EXPECT_TRUE(saw_missing);
    EXPECT_TRUE(saw_mismatch);

    const auto ok = cmd_validate({ex.cfg.data.test}, ex.cfg.data.bundle);
    for (const auto& c : ok) EXPECT_TRUE(c.passed) << c.name << ": " << c.detail;

    const auto broken = cmd_validate({tb}, ex.dir / "no-bundle");
    EXPECT_FALSE(broken.front().passed);
}
