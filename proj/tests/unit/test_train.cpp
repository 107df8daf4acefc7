#include <gtest/gtest.h>

#include <sstream>

#include "polar_probe/synth.hpp"
#include "polar_probe/train.hpp"
#include "support/planted.hpp"
#include "unit/helpers.hpp"

using namespace polar;

namespace {

// Words placed so that squared distances equal tree distances exactly: every edge of a
// sentence gets its own orthonormal direction inside the first `code` coordinates.
// The remaining coordinates carry Gaussian distractors.
ProbeDataset exact_distance_split(Rng& rng, int count, int k, int code, const std::string& prefix) {
    ProbeDataset ds;
    ds.labels = {"dep"};
    for (int si = 0; si < count; ++si) {
        const int n = 4 + static_cast<int>(rng.below(static_cast<std::uint64_t>(code - 3)));
        const auto heads = testutil::random_heads(n, rng);
        const DepSentence s = testutil::sentence_from_heads(heads, {}, prefix + std::to_string(si));
        Eigen::MatrixXd g(code, code);
        for (Eigen::Index i = 0; i < g.size(); ++i) g.data()[i] = rng.normal();
        const Eigen::MatrixXd basis = Eigen::HouseholderQR<Eigen::MatrixXd>(g).householderQ();
        Eigen::MatrixXd pos = Eigen::MatrixXd::Zero(n, k);
        std::vector<bool> done(static_cast<std::size_t>(n), false);
        int next_dir = 0;
        std::vector<int> dir_of(static_cast<std::size_t>(n), -1);
        for (int w = 0; w < n; ++w)
            if (heads[static_cast<std::size_t>(w)] != 0) dir_of[static_cast<std::size_t>(w)] = next_dir++;
        std::function<void(int)> place = [&](int w) {
            if (done[static_cast<std::size_t>(w)]) return;
            const int h = heads[static_cast<std::size_t>(w)];
            if (h != 0) {
                place(h - 1);
                pos.row(w).head(code) = pos.row(h - 1).head(code) +
                                        basis.col(dir_of[static_cast<std::size_t>(w)]).transpose();
            }
            done[static_cast<std::size_t>(w)] = true;
        };
        for (int w = 0; w < n; ++w) place(w);
        for (int w = 0; w < n; ++w)
            for (int d = code; d < k; ++d) pos(w, d) = rng.normal();
        SentenceData sd;
        sd.id = s.id;
        sd.words = pos.cast<float>();
        sd.distances = tree_distances(s);
        for (const auto& e : gold_edges(s)) sd.edges.push_back({e.head - 1, e.dep - 1, 0});
        ds.sentences.push_back(std::move(sd));
    }
    return ds;
}

ProbeDataset small_random_split(Rng& rng, int count, int k, int labels, const std::string& prefix) {
    ProbeDataset ds;
    for (int l = 0; l < labels; ++l) ds.labels.push_back("l" + std::to_string(l));
    for (int si = 0; si < count; ++si) {
        const int n = 3 + static_cast<int>(rng.below(6));
        const DepSentence s = testutil::sentence_from_heads(testutil::random_heads(n, rng), {}, prefix + std::to_string(si));
        SentenceData sd;
        sd.id = s.id;
        sd.words.resize(n, k);
        for (Eigen::Index i = 0; i < sd.words.size(); ++i) sd.words.data()[i] = static_cast<float>(rng.normal());
        sd.distances = tree_distances(s);
        for (const auto& e : gold_edges(s))
            sd.edges.push_back({e.head - 1, e.dep - 1, static_cast<int>(rng.below(static_cast<std::uint64_t>(labels)))});
        ds.sentences.push_back(std::move(sd));
    }
    return ds;
}

}  // namespace

TEST(Train, ExactDistanceCodeDropsStructuralLossTenfold) {
    Rng rng(21);
    const int k = 24, code = 12;
    const ProbeDataset tr = exact_distance_split(rng, 400, k, code, "t");
    const ProbeDataset va = exact_distance_split(rng, 100, k, code, "v");
    TrainConfig cfg;
    cfg.kind = ProbeKind::structural;
    cfg.lambda = 0.0;
    cfg.probe_dim = k;
    cfg.batch_sentences = 20;
    cfg.epochs = 30;
    const TrainResult r = train(cfg, tr, va);
    ASSERT_EQ(r.log.size(), 31u);
    const double initial = r.log.front().val_structural;
    double selected = -1;
    for (const auto& row : r.log)
        if (row.selected) selected = row.val_structural;
    EXPECT_LE(selected * 10.0, initial) << "initial " << initial << " selected " << selected;
}

TEST(Train, LambdaZeroReproducesStructuralTrajectory) {
    Rng rng(22);
    const ProbeDataset tr = small_random_split(rng, 40, 10, 3, "t");
    const ProbeDataset va = small_random_split(rng, 10, 10, 3, "v");
    TrainConfig polar0;
    polar0.kind = ProbeKind::polar;
    polar0.lambda = 0.0;
    polar0.probe_dim = 4;
    polar0.batch_sentences = 8;
    polar0.epochs = 5;
    TrainConfig structural = polar0;
    structural.kind = ProbeKind::structural;
    structural.lambda = 10.0;  // ignored by the structural objective
    const auto ra = train(polar0, tr, va);
    const auto rb = train(structural, tr, va);
    EXPECT_EQ(ra.probe.matrix, rb.probe.matrix);
    EXPECT_EQ(ra.probe.selected_epoch, rb.probe.selected_epoch);
    EXPECT_EQ(ra.probe.lambda, 0.0);
    EXPECT_EQ(rb.probe.lambda, 0.0);
    ASSERT_EQ(ra.log.size(), rb.log.size());
    for (std::size_t i = 0; i < ra.log.size(); ++i) {
        EXPECT_EQ(ra.log[i].train_structural, rb.log[i].train_structural);
        EXPECT_EQ(ra.log[i].val_total, rb.log[i].val_total);
        EXPECT_EQ(ra.log[i].train_angular, 0.0);
    }
}

TEST(Train, SameSeedIsBitwiseReproducible) {
    Rng rng(23);
    const ProbeDataset tr = small_random_split(rng, 30, 8, 3, "t");
    const ProbeDataset va = small_random_split(rng, 8, 8, 3, "v");
    TrainConfig cfg;
    cfg.probe_dim = 4;
    cfg.batch_sentences = 7;
    cfg.epochs = 4;
    cfg.pair_cap = 50;
    cfg.seed = 99;
    const auto r1 = train(cfg, tr, va);
    const auto r2 = train(cfg, tr, va);
    EXPECT_EQ(r1.probe.matrix, r2.probe.matrix);
    std::ostringstream l1, l2;
    write_training_log_csv(l1, r1.log);
    write_training_log_csv(l2, r2.log);
    EXPECT_EQ(l1.str(), l2.str());
    cfg.seed = 100;
    EXPECT_NE(train(cfg, tr, va).probe.matrix, r1.probe.matrix);
}

TEST(Train, SelectionPicksLowestValidationLoss) {
    Rng rng(24);
    const ProbeDataset tr = small_random_split(rng, 30, 8, 3, "t");
    const ProbeDataset va = small_random_split(rng, 8, 8, 3, "v");
    TrainConfig cfg;
    cfg.probe_dim = 4;
    cfg.batch_sentences = 10;
    cfg.epochs = 6;
    const auto r = train(cfg, tr, va);
    int selected = 0;
    double best = 1e300;
    int best_epoch = -1;
    for (const auto& row : r.log) {
        selected += row.selected;
        if (row.val_total < best) {
            best = row.val_total;
            best_epoch = row.epoch;
        }
    }
    EXPECT_EQ(selected, 1);
    EXPECT_EQ(r.probe.selected_epoch, best_epoch);
}

TEST(Train, DivergenceRaisesNumericError) {
    Rng rng(25);
    ProbeDataset tr = small_random_split(rng, 10, 6, 2, "t");
    const ProbeDataset va = small_random_split(rng, 4, 6, 2, "v");
    for (auto& s : tr.sentences) s.words *= 1e30f;
    TrainConfig cfg;
    cfg.probe_dim = 3;
    cfg.epochs = 3;
    cfg.learning_rate = 1e300;
    EXPECT_THROW(train(cfg, tr, va), NumericError);
}

TEST(Train, ConfigValidation) {
    Rng rng(26);
    const ProbeDataset tr = small_random_split(rng, 4, 6, 2, "t");
    TrainConfig cfg;
    cfg.probe_dim = 7;
    EXPECT_THROW(train(cfg, tr, tr), ConfigError);
    cfg.probe_dim = 3;
    cfg.learning_rate = 0.0;
    EXPECT_THROW(train(cfg, tr, tr), ConfigError);
    cfg.learning_rate = 0.005;
    cfg.kind = ProbeKind::identity;
    EXPECT_THROW(train(cfg, tr, tr), ConfigError);
    cfg.kind = ProbeKind::polar;
    EXPECT_THROW(train(cfg, tr, ProbeDataset{}), ConfigError);
    cfg.selection = SelectionCriterion::validation_las;
    EXPECT_THROW(train(cfg, tr, tr), ConfigError);
    EXPECT_EQ(parse_selection("las"), SelectionCriterion::validation_las);
    EXPECT_THROW(parse_selection("uuas"), ConfigError);
}

TEST(Train, LasSelectionOnPlantedData) {
    testutil::TempDir dir("train-las");
    PlantedSpec spec;
    spec.ambient_dim = 48;
    spec.code_dim = 16;
    spec.num_labels = 5;
    spec.train_count = 60;
    spec.validation_count = 20;
    spec.test_count = 5;
    const auto p = testutil::load_planted(spec, dir.path());
    TrainConfig cfg;
    cfg.probe_dim = 16;
    cfg.epochs = 4;
    cfg.batch_sentences = 20;
    cfg.selection = SelectionCriterion::validation_las;
    const auto r = train(cfg, p.train, p.validation, 0, &p.data.splits.validation);
    double best = -1;
    for (const auto& row : r.log) {
        ASSERT_TRUE(row.val_las.has_value());
        best = std::max(best, *row.val_las);
    }
    for (const auto& row : r.log)
        if (row.selected) EXPECT_EQ(*row.val_las, best);
}

TEST(TrainingLog, CsvColumns) {
    std::vector<EpochLog> log(2);
    log[1].epoch = 1;
    log[1].selected = true;
    std::ostringstream out;
    write_training_log_csv(out, log);
    std::istringstream in(out.str());
    std::string header;
    std::getline(in, header);
    EXPECT_EQ(header.rfind("epoch,train_LS,train_LA,val_LS,val_LA,selected", 0), 0u);
    std::string line;
    int rows = 0;
    while (std::getline(in, line)) ++rows;
    EXPECT_EQ(rows, 2);
}
