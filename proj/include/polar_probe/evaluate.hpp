#pragma once

// End-to-end evaluation of a probe on a split, and report serialization.

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "polar_probe/decode.hpp"
#include "polar_probe/metrics.hpp"
#include "polar_probe/probe.hpp"
#include "polar_probe/rng.hpp"
#include "polar_probe/treebank.hpp"

namespace polar {

struct EvalOptions {
    MetricOptions metric;
    std::size_t auc_pair_budget = kDefaultAucPairBudget;
    std::size_t auc_relations = 10000;  // edges pooled from the split for AUC
    std::uint64_t seed = 0;
    bool gold_injection = false;  // skip decoding, score the gold tree itself
    std::vector<long> length_bounds = {1, 11, 21, 31, 41, 1000000};
    std::vector<long> depth_bounds = {0, 3, 5, 7, 9, 1000000};
};

struct EvalReport {
    CoreMetrics metrics;
    std::optional<AucResult> auc;
    std::vector<Stratum> by_length;
    std::vector<Stratum> by_depth;
    std::vector<SentenceEval> sentences;
    std::vector<PredictedTree> predictions;
};

/// Decodes every sentence of `data` (aligned with `gold`) and scores it.
inline EvalReport evaluate(const LinearProbe& probe, const PrototypeBank& bank,
                           const std::vector<DepSentence>& gold, const ProbeDataset& data,
                           const EvalOptions& opt = {}) {
    if (gold.size() != data.sentences.size())
        throw DimensionError("evaluate: treebank and dataset differ in sentence count");
    EvalReport rep;
    std::vector<Vector> auc_edges;
    std::vector<std::string> auc_labels;
    for (std::size_t si = 0; si < gold.size(); ++si) {
        const DepSentence& g = gold[si];
        const SentenceData& d = data.sentences[si];
        if (g.id != d.id) throw Error("evaluate: sentence order mismatch at " + g.id);
        const Eigen::MatrixXd h = d.words.cast<double>();
        const Eigen::MatrixXd p = h * probe.matrix.transpose();
        PredictedTree tree = opt.gold_injection ? gold_as_prediction(g) : decode_tree(probe, bank, h, g.id);

        std::vector<TypePrediction> types;
        std::vector<bool> directions;
        for (const auto& e : gold_edges(g)) {
            if (opt.gold_injection) {
                types.push_back({bank.index_of(e.label), e.label, 1.0});
                directions.push_back(true);
                continue;
            }
            const int lo = std::min(e.head, e.dep) - 1;
            const int hi = std::max(e.head, e.dep) - 1;
            const Vector z = (p.row(lo) - p.row(hi)).transpose();
            TypePrediction tp = classify_projected(bank, z);
            const bool head_first = direction_from_cosine(tp.cosine) == HeadSide::first;
            directions.push_back(head_first == (e.head - 1 == lo));
            types.push_back(std::move(tp));
        }
        rep.sentences.push_back(evaluate_sentence(g, tree, types, directions, opt.metric));
        rep.predictions.push_back(std::move(tree));
        for (const auto& e : gold_edges(g)) {
            if (!scorable_dependent(g, e.dep, opt.metric)) continue;
            auc_edges.push_back((p.row(e.head - 1) - p.row(e.dep - 1)).transpose());
            auc_labels.push_back(e.label);
        }
    }
    rep.metrics = aggregate(rep.sentences);
    rep.by_length = stratify(rep.sentences, StratumAxis::length, opt.length_bounds);
    rep.by_depth = stratify(rep.sentences, StratumAxis::depth, opt.depth_bounds);

    // AUC over a seeded pool of canonical edges
    if (std::set<std::string>(auc_labels.begin(), auc_labels.end()).size() >= 2) {
        Rng rng(opt.seed ^ 0xA0C0FFEEULL);
        auto pool = sample_without_replacement(rng, auc_edges.size(), opt.auc_relations);
        std::sort(pool.begin(), pool.end());
        Eigen::MatrixXd z(static_cast<Eigen::Index>(pool.size()), probe.output_dim());
        std::vector<std::string> labels;
        for (std::size_t i = 0; i < pool.size(); ++i) {
            z.row(static_cast<Eigen::Index>(i)) = auc_edges[pool[i]].transpose();
            labels.push_back(auc_labels[pool[i]]);
        }
        if (std::set<std::string>(labels.begin(), labels.end()).size() >= 2)
            rep.auc = type_auc(z, labels, opt.auc_pair_budget, opt.seed);
    }
    return rep;
}

// ---------------------------------------------------------------------------

namespace detail {

inline nlohmann::json ratio_json(const Ratio& r) {
    nlohmann::json j = {{"numerator", r.numerator}, {"denominator", r.denominator}};
    if (auto v = r.value()) j["value"] = *v;
    else j["value"] = nullptr;
    return j;
}

inline nlohmann::json optional_json(const std::optional<double>& v) {
    return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

}  // namespace detail

inline nlohmann::json to_json(const CoreMetrics& m) {
    nlohmann::json labels = nlohmann::json::object();
    for (const auto& [label, b] : m.per_label)
        labels[label] = {{"type_recall", detail::ratio_json(b.type)},
                         {"direction", detail::ratio_json(b.direction)},
                         {"las", detail::ratio_json(b.las)}};
    return {{"sentences", m.sentences},
            {"uuas", detail::ratio_json(m.uuas)},
            {"las", detail::ratio_json(m.las)},
            {"root_identification", detail::ratio_json(m.root)},
            {"type_accuracy", detail::ratio_json(m.type_accuracy)},
            {"direction_accuracy", detail::ratio_json(m.direction_accuracy)},
            {"balanced_accuracy", detail::optional_json(m.balanced_accuracy)},
            {"per_label", labels}};
}

inline nlohmann::json to_json(const EvalReport& r) {
    nlohmann::json j = {{"metrics", to_json(r.metrics)}};
    if (r.auc)
        j["auc"] = {{"value", r.auc->auc}, {"pairs", r.auc->pairs}, {"positives", r.auc->positives}};
    else
        j["auc"] = nullptr;
    for (const auto* strata : {&r.by_length, &r.by_depth}) {
        nlohmann::json arr = nlohmann::json::array();
        for (const auto& s : *strata)
            arr.push_back({{"lo", s.lo},
                           {"hi", s.hi},
                           {"metrics", s.metrics ? to_json(*s.metrics) : nlohmann::json(nullptr)}});
        j[strata == &r.by_length ? "by_length" : "by_depth"] = arr;
    }
    return j;
}

/// Flat CSV: metric,value,numerator,denominator.
inline void write_report_csv(std::ostream& out, const EvalReport& r) {
    out.precision(10);
    out << "metric,value,numerator,denominator\n";
    auto ratio = [&](const std::string& name, const Ratio& x) {
        out << name << ',';
        if (auto v = x.value()) out << *v;
        out << ',' << x.numerator << ',' << x.denominator << '\n';
    };
    const CoreMetrics& m = r.metrics;
    out << "sentences," << m.sentences << ",,\n";
    ratio("uuas", m.uuas);
    ratio("las", m.las);
    ratio("root_identification", m.root);
    ratio("type_accuracy", m.type_accuracy);
    ratio("direction_accuracy", m.direction_accuracy);
    out << "balanced_accuracy,";
    if (m.balanced_accuracy) out << *m.balanced_accuracy;
    out << ",,\n";
    out << "auc,";
    if (r.auc) out << r.auc->auc << ",," << r.auc->pairs;
    else out << ",,";
    out << '\n';
    for (const auto& [label, b] : m.per_label) {
        ratio("type_recall[" + label + "]", b.type);
        ratio("las[" + label + "]", b.las);
    }
}

}  // namespace polar
