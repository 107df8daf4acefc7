#include <gtest/gtest.h>

#include "polar_probe/evaluate.hpp"
#include "polar_probe/metrics.hpp"
#include "support/oracles.hpp"
#include "unit/helpers.hpp"

using namespace polar;
using testutil::sentence_from_heads;

namespace {

PredictedTree tree_of(std::size_t n, std::vector<PredictedEdge> edges) {
    PredictedTree t;
    t.num_words = n;
    t.edges = std::move(edges);
    assign_heads(t);
    return t;
}

}  // namespace

TEST(Uuas, Examples) {
    const auto gold = sentence_from_heads({2, 0, 2});  // edges 2-1, 2-3
    EXPECT_EQ(uuas(gold, {{1, 2}, {1, 3}}, 3).value(), 0.5);
    EXPECT_EQ(uuas(gold, {{2, 1}, {3, 2}}, 3).value(), 1.0);
    auto punct = sentence_from_heads({2, 0, 2, 3});
    punct.words[3].upos = "PUNCT";
    const Ratio r = uuas(punct, {{1, 2}, {2, 3}, {1, 4}}, 4);
    EXPECT_EQ(r.denominator, 2u);
    EXPECT_EQ(r.numerator, 2u);
    MetricOptions keep;
    keep.exclude_punct = false;
    EXPECT_EQ(uuas(punct, {{1, 2}, {2, 3}, {1, 4}}, 4, keep).denominator, 3u);
    EXPECT_THROW(uuas(gold, {{1, 2}}, 4), DimensionError);
}

TEST(Las, Examples) {
    const auto gold = sentence_from_heads({2, 0, 2, 3}, {"det", "root", "obj", "nmod"});
    auto t = tree_of(4, {{2, 1, "det", 1}, {2, 3, "obj", 1}, {4, 3, "nmod", 1}});
    EXPECT_EQ(las(gold, t).las.numerator, 2u);
    EXPECT_EQ(las(gold, t).las.denominator, 3u);
    t = tree_of(4, {{2, 1, "amod", 1}, {2, 3, "obj", 1}, {3, 4, "nmod", 1}});
    EXPECT_EQ(las(gold, t).las.numerator, 2u);  // wrong label counts 0
    t = tree_of(4, {{1, 2, "det", 1}, {2, 3, "obj", 1}, {3, 4, "nmod", 1}});
    EXPECT_EQ(las(gold, t).las.numerator, 2u);  // flipped direction counts 0
}

TEST(Las, RootIdentification) {
    const auto gold = sentence_from_heads({2, 0, 2});
    EXPECT_EQ(las(gold, tree_of(3, {{2, 1, "dep", 1}, {2, 3, "dep", 1}})).root.value(), 1.0);
    // gold root given a predicted head
    EXPECT_EQ(las(gold, tree_of(3, {{2, 1, "dep", 1}, {3, 2, "dep", 1}})).root.value(), 0.0);
}

TEST(TypeAccuracy, WorkedExamples) {
    auto r = type_accuracy({"a", "a", "b", "b"}, {"a", "a", "b", "a"});
    EXPECT_DOUBLE_EQ(*r.balanced, 0.75);
    r = type_accuracy({"a", "b"}, {"a", "b"});
    EXPECT_EQ(r.accuracy.value(), 1.0);
    EXPECT_EQ(*r.balanced, 1.0);
    EXPECT_THROW(type_accuracy({}, {}), Error);
    EXPECT_THROW(type_accuracy({"a"}, {}), DimensionError);
}

TEST(TypeAccuracy, ConstructedConfusionCases) {
    const auto cases = oracle::confusion_cases();
    ASSERT_EQ(cases.size(), 20u);
    EXPECT_DOUBLE_EQ(cases[0].balanced, 0.75);
    EXPECT_DOUBLE_EQ(cases[2].accuracy, 0.9);
    EXPECT_DOUBLE_EQ(cases[2].balanced, 0.5);
    for (std::size_t i = 0; i < cases.size(); ++i) {
        const auto& c = cases[i];
        const auto r = type_accuracy(c.gold, c.predicted);
        EXPECT_NEAR(r.accuracy.value_or(-1), c.accuracy, 1e-15) << "case " << i;
        EXPECT_NEAR(*r.balanced, c.balanced, 1e-15) << "case " << i;

        // the same through per-sentence records and aggregation
        SentenceEval e;
        for (std::size_t j = 0; j < c.gold.size(); ++j) e.edges.push_back({c.gold[j], c.predicted[j], true, false});
        const auto m = aggregate(std::vector<SentenceEval>{e});
        EXPECT_NEAR(*m.balanced_accuracy, c.balanced, 1e-15) << "case " << i;
    }
    // uniform labels with equal recalls: balanced equals plain accuracy
    EXPECT_DOUBLE_EQ(cases[5].balanced, cases[5].accuracy);
}

TEST(Auc, WorkedExamples) {
    EXPECT_EQ(auc_from_scores({0.9, 0.8, 0.2}, {true, false, false}), 1.0);
    EXPECT_EQ(auc_from_scores({0.5, 0.5}, {true, false}), 0.5);
    EXPECT_EQ(auc_from_scores({0.1, 0.9}, {true, false}), 0.0);
    EXPECT_THROW(auc_from_scores({0.1, 0.9}, {true, true}), Error);
}

TEST(Auc, MatchesEnumerationOnSmallInputs) {
    Rng rng(41);
    for (int t = 0; t < 30; ++t) {
        const int m = 2 + static_cast<int>(rng.below(199));
        const int labels = 2 + static_cast<int>(rng.below(5));
        Eigen::MatrixXd z(m, 3);
        std::vector<std::string> lab;
        for (int i = 0; i < m; ++i) {
            lab.push_back("l" + std::to_string(rng.below(static_cast<std::uint64_t>(labels))));
            for (int d = 0; d < 3; ++d) z(i, d) = rng.normal();
            // duplicate earlier rows now and then to force tied scores
            if (i > 0 && rng.uniform() < 0.2) z.row(i) = z.row(static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(i))));
        }
        if (std::set<std::string>(lab.begin(), lab.end()).size() < 2) continue;
        const auto r = type_auc(z, lab);
        EXPECT_EQ(r.pairs, static_cast<std::size_t>(m) * (m - 1) / 2);
        EXPECT_NEAR(r.auc, oracle::enumerated_pair_auc(z, lab), 1e-12);
    }
}

TEST(Auc, SampledBudgetAndErrors) {
    Rng rng(42);
    Eigen::MatrixXd z(300, 4);
    std::vector<std::string> lab;
    for (int i = 0; i < 300; ++i) {
        lab.push_back(i % 3 ? "a" : "b");
        for (int d = 0; d < 4; ++d) z(i, d) = rng.normal();
    }
    const auto r = type_auc(z, lab, 5000, 3);
    EXPECT_EQ(r.pairs, 5000u);
    EXPECT_EQ(type_auc(z, lab, 5000, 3).auc, r.auc);
    // class-independent scores sit near chance
    EXPECT_NEAR(type_auc(z, lab).auc, 0.5, 0.03);
    EXPECT_THROW(type_auc(z.topRows(1), {"a"}), Error);
    EXPECT_THROW(type_auc(z.topRows(2), {"a", "a"}), Error);
    Eigen::MatrixXd zero = z.topRows(2);
    zero.row(0).setZero();
    EXPECT_THROW(type_auc(zero, {"a", "b"}), DegenerateVectorError);
}

TEST(CosineMatrix, BlockStructure) {
    std::map<std::string, std::vector<Vector>> by;
    by["a"] = {Eigen::Vector3d(1, 0, 0), Eigen::Vector3d(2, 0, 0), Eigen::Vector3d(-1, 0, 0)};
    by["b"] = {Eigen::Vector3d(0, 3, 0), Eigen::Vector3d(0, 1, 0)};
    by["c"] = {};
    const auto cm = cosine_matrix(by, 40);
    ASSERT_EQ(cm.blocks.size(), 2u);
    EXPECT_EQ(cm.skipped, std::vector<std::string>{"c"});
    EXPECT_EQ(cm.blocks[0].begin, 0u);
    EXPECT_EQ(cm.blocks[0].end, 3u);
    EXPECT_EQ(cm.blocks[1].end, 5u);
    for (Eigen::Index i = 0; i < 5; ++i)
        for (Eigen::Index j = 0; j < 5; ++j) EXPECT_EQ(cm.values(i, j), (i < 3) == (j < 3) ? 1.0 : 0.0);
    EXPECT_EQ(cosine_matrix(by, 1).values.rows(), 2);
    EXPECT_THROW(cosine_matrix(by, 0), Error);
}

TEST(CosineMatrix, SymmetricUnitDiagonal) {
    Rng rng(43);
    std::map<std::string, std::vector<Vector>> by;
    for (int l = 0; l < 4; ++l)
        for (int i = 0; i < 30; ++i) by["l" + std::to_string(l)].push_back(Vector::NullaryExpr(5, [&] { return rng.normal(); }));
    const auto cm = cosine_matrix(by, 10, 9);
    EXPECT_EQ(cm.values.rows(), 40);
    EXPECT_EQ(cm.values, cm.values.transpose());
    EXPECT_TRUE((cm.values.diagonal().array() == 1.0).all());
    EXPECT_LE(cm.values.maxCoeff(), 1.0);
}

TEST(Depth, Examples) {
    EXPECT_EQ(tree_depth(sentence_from_heads({0, 1, 2, 3})), 3);
    EXPECT_EQ(tree_depth(sentence_from_heads({0, 1, 1, 1})), 1);
    EXPECT_EQ(tree_depth(sentence_from_heads({0})), 0);
}

TEST(Stratify, BucketsAndIdentity) {
    Rng rng(44);
    std::vector<SentenceEval> items;
    for (int i = 0; i < 40; ++i) {
        const int n = 1 + static_cast<int>(rng.below(30));
        const auto gold = sentence_from_heads(testutil::random_heads(n, rng), {}, "s" + std::to_string(i));
        std::vector<TypePrediction> types;
        std::vector<bool> dirs;
        for (const auto& e : gold_edges(gold)) {
            types.push_back({0, rng.uniform() < 0.7 ? e.label : "other", 1.0});
            dirs.push_back(rng.uniform() < 0.8);
        }
        items.push_back(evaluate_sentence(gold, gold_as_prediction(gold), types, dirs));
    }
    const auto whole = aggregate(items);
    const auto one = stratify(items, StratumAxis::length, {0, 1000});
    ASSERT_EQ(one.size(), 1u);
    ASSERT_TRUE(one[0].metrics.has_value());
    EXPECT_EQ(one[0].metrics->type_accuracy.numerator, whole.type_accuracy.numerator);
    EXPECT_EQ(one[0].metrics->las.denominator, whole.las.denominator);
    EXPECT_EQ(*one[0].metrics->balanced_accuracy, *whole.balanced_accuracy);

    const auto parts = stratify(items, StratumAxis::depth, {0, 2, 4, 8, 100, 200});
    std::size_t sentences = 0;
    for (const auto& p : parts)
        if (p.metrics) sentences += p.metrics->sentences;
    EXPECT_EQ(sentences, items.size());
    EXPECT_FALSE(parts.back().metrics.has_value());  // empty bucket kept, null metrics
    EXPECT_THROW(stratify(items, StratumAxis::length, {5}), Error);
    EXPECT_THROW(stratify(items, StratumAxis::length, {5, 5}), Error);
}

TEST(Aggregate, OrderInvariant) {
    Rng rng(45);
    std::vector<SentenceEval> items;
    for (int i = 0; i < 20; ++i) {
        SentenceEval e;
        e.uuas = {rng.below(5), 5};
        e.las = {rng.below(5), 5};
        for (int j = 0; j < 4; ++j) e.edges.push_back({"l" + std::to_string(rng.below(3)), "l" + std::to_string(rng.below(3)), rng.uniform() < 0.5, false});
        items.push_back(e);
    }
    const auto a = aggregate(items);
    rng.shuffle(items);
    const auto b = aggregate(items);
    EXPECT_EQ(a.uuas.numerator, b.uuas.numerator);
    EXPECT_EQ(a.las.numerator, b.las.numerator);
    EXPECT_EQ(a.type_accuracy.numerator, b.type_accuracy.numerator);
    EXPECT_EQ(*a.balanced_accuracy, *b.balanced_accuracy);
}

TEST(GoldInjection, ScoresOne) {
    Rng rng(46);
    std::vector<DepSentence> gold;
    ProbeDataset data;
    data.labels = {"a", "b", "c"};
    for (int i = 0; i < 15; ++i) {
        const int n = 1 + static_cast<int>(rng.below(12));
        std::vector<std::string> labels;
        for (int w = 0; w < n; ++w) labels.push_back(data.labels[rng.below(3)]);
        auto s = sentence_from_heads(testutil::random_heads(n, rng), labels, "g" + std::to_string(i));
        if (n > 2) s.words[1].upos = "PUNCT";
        SentenceData d;
        d.id = s.id;
        d.words = Eigen::MatrixXf::Random(n, 4);
        gold.push_back(s);
        data.sentences.push_back(std::move(d));
    }
    LinearProbe probe = LinearProbe::identity(4);
    PrototypeBank bank;
    bank.labels = data.labels;
    bank.vectors = Eigen::MatrixXd::Identity(3, 4);
    EvalOptions opt;
    opt.gold_injection = true;
    const auto rep = evaluate(probe, bank, gold, data, opt);
    EXPECT_EQ(rep.metrics.uuas.value(), 1.0);
    EXPECT_EQ(rep.metrics.las.value(), 1.0);
    EXPECT_EQ(rep.metrics.root.value(), 1.0);
    EXPECT_EQ(rep.metrics.type_accuracy.value(), 1.0);
    EXPECT_GT(rep.metrics.las.denominator, 0u);
}

TEST(Report, CsvAndJsonCarryCounts) {
    EvalReport rep;
    rep.metrics.sentences = 3;
    rep.metrics.uuas = {7, 8};
    rep.metrics.las = {5, 8};
    rep.metrics.balanced_accuracy = 0.5;
    rep.auc = AucResult{0.75, 120, 30};
    std::ostringstream out;
    write_report_csv(out, rep);
    EXPECT_NE(out.str().find("uuas,0.875,7,8\n"), std::string::npos);
    EXPECT_NE(out.str().find("las,0.625,5,8\n"), std::string::npos);
    EXPECT_NE(out.str().find("root_identification,,0,0\n"), std::string::npos);
    EXPECT_NE(out.str().find("auc,0.75,,120\n"), std::string::npos);
    const auto j = to_json(rep);
    EXPECT_EQ(j["metrics"]["uuas"]["denominator"], 8);
    EXPECT_TRUE(j["metrics"]["root_identification"]["value"].is_null());
    EXPECT_EQ(j["auc"]["pairs"], 120);
}
