#pragma once

// Attachment scores, type accuracy, rank-statistic AUC, cosine matrices.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "polar_probe/decode.hpp"
#include "polar_probe/error.hpp"
#include "polar_probe/geometry.hpp"
#include "polar_probe/rng.hpp"
#include "polar_probe/treebank.hpp"

namespace polar {

/// A ratio that keeps its counts.
struct Ratio {
    std::size_t numerator = 0;
    std::size_t denominator = 0;

    std::optional<double> value() const {
        if (denominator == 0) return std::nullopt;
        return static_cast<double>(numerator) / static_cast<double>(denominator);
    }
    double value_or(double fallback) const { return value().value_or(fallback); }
    Ratio& operator+=(const Ratio& o) {
        numerator += o.numerator;
        denominator += o.denominator;
        return *this;
    }
    void count(bool hit) {
        ++denominator;
        numerator += hit ? 1 : 0;
    }
};

struct MetricOptions {
    bool exclude_punct = true;
};

inline bool scorable_dependent(const DepSentence& s, int dep, const MetricOptions& opt) {
    return !(opt.exclude_punct && s.word(dep).upos == kPunctTag);
}

/// Fraction of scorable gold edges (unordered, 1-based) found among `predicted`.
inline Ratio uuas(const DepSentence& gold, const std::vector<std::pair<int, int>>& predicted,
                  std::size_t predicted_words, const MetricOptions& opt = {}) {
    if (predicted_words != gold.size())
        throw DimensionError("uuas: sentence " + gold.id + " has " + std::to_string(gold.size()) +
                             " words, prediction has " + std::to_string(predicted_words));
    std::set<std::pair<int, int>> pred;
    for (auto [a, b] : predicted) pred.emplace(std::min(a, b), std::max(a, b));
    Ratio r;
    for (const auto& e : gold_edges(gold)) {
        if (!scorable_dependent(gold, e.dep, opt)) continue;
        r.count(pred.count({std::min(e.head, e.dep), std::max(e.head, e.dep)}) > 0);
    }
    return r;
}

inline Ratio uuas(const DepSentence& gold, const PredictedTree& t, const MetricOptions& opt = {}) {
    std::vector<std::pair<int, int>> und;
    for (const auto& e : t.edges) und.emplace_back(e.head, e.dep);
    return uuas(gold, und, t.num_words, opt);
}

struct LasResult {
    Ratio las;
    Ratio root;  // gold root word left without a predicted head
};

/// Scorable gold edges recovered with the same head, dependent and label.
inline LasResult las(const DepSentence& gold, const PredictedTree& t, const MetricOptions& opt = {}) {
    if (t.num_words != gold.size())
        throw DimensionError("las: sentence " + gold.id + " has " + std::to_string(gold.size()) +
                             " words, prediction has " + std::to_string(t.num_words));
    std::set<std::tuple<int, int, std::string>> pred;
    std::set<int> dependents;
    for (const auto& e : t.edges) {
        pred.emplace(e.head, e.dep, e.label);
        dependents.insert(e.dep);
    }
    LasResult r;
    for (const auto& e : gold_edges(gold)) {
        if (!scorable_dependent(gold, e.dep, opt)) continue;
        r.las.count(pred.count({e.head, e.dep, e.label}) > 0);
    }
    if (gold.size() > 0) r.root.count(dependents.count(gold.root()) == 0);
    return r;
}

struct TypeAccuracy {
    Ratio accuracy;
    std::optional<double> balanced;
    std::map<std::string, Ratio> recall;  // per gold label
};

inline TypeAccuracy type_accuracy(const std::vector<std::string>& gold,
                                  const std::vector<std::string>& predicted) {
    if (gold.size() != predicted.size())
        throw DimensionError("type_accuracy: label vectors differ in length");
    if (gold.empty()) throw Error("type_accuracy: empty edge set");
    TypeAccuracy r;
    for (std::size_t i = 0; i < gold.size(); ++i) {
        const bool hit = gold[i] == predicted[i];
        r.accuracy.count(hit);
        r.recall[gold[i]].count(hit);
    }
    double sum = 0.0;
    for (const auto& [label, rec] : r.recall) sum += rec.value_or(0.0);
    r.balanced = sum / static_cast<double>(r.recall.size());
    return r;
}

/// Mean per-label recall from aggregated per-label counts.
inline std::optional<double> balanced_from_recall(const std::map<std::string, Ratio>& recall) {
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& [label, r] : recall)
        if (r.denominator > 0) {
            sum += r.value_or(0.0);
            ++n;
        }
    if (n == 0) return std::nullopt;
    return sum / static_cast<double>(n);
}

/// ROC AUC via the Mann-Whitney rank statistic; tied scores count one half.
inline double auc_from_scores(const std::vector<double>& scores, const std::vector<bool>& positive) {
    if (scores.size() != positive.size()) throw DimensionError("auc: length mismatch");
    std::vector<std::size_t> order(scores.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    double rank_sum = 0.0;  // ranks of positives, scaled by 2 to stay integral
    std::size_t npos = 0;
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
        const double twice_avg_rank = static_cast<double>(i + 1 + j);  // 2 * mean of i+1..j
        for (std::size_t q = i; q < j; ++q)
            if (positive[order[q]]) {
                rank_sum += twice_avg_rank;
                ++npos;
            }
        i = j;
    }
    const std::size_t nneg = scores.size() - npos;
    if (npos == 0 || nneg == 0) throw Error("auc undefined: all pairs belong to one class");
    const double u2 = rank_sum - static_cast<double>(npos) * static_cast<double>(npos + 1);
    return u2 / (2.0 * static_cast<double>(npos) * static_cast<double>(nneg));
}

struct AucResult {
    double auc = 0.5;
    std::size_t pairs = 0;
    std::size_t positives = 0;
};

inline constexpr std::size_t kDefaultAucPairBudget = 1000000;

/// Pairwise-cosine AUC over projected edges (rows), positive class = same label.
/// All unordered pairs are scored when they fit in `pair_budget`, otherwise a
/// seeded uniform sample of `pair_budget` of them.
inline AucResult type_auc(const Eigen::MatrixXd& projected, const std::vector<std::string>& labels,
                          std::size_t pair_budget = kDefaultAucPairBudget, std::uint64_t seed = 0) {
    const std::size_t m = static_cast<std::size_t>(projected.rows());
    if (labels.size() != m) throw DimensionError("type_auc: labels and edges differ in count");
    if (m < 2) throw Error("type_auc: need at least two edges");
    if (std::set<std::string>(labels.begin(), labels.end()).size() < 2)
        throw Error("type_auc: need at least two labels");
    Eigen::MatrixXd unit = projected;
    for (Eigen::Index r = 0; r < unit.rows(); ++r) {
        const double n = unit.row(r).norm();
        if (n == 0.0) throw DegenerateVectorError("type_auc: edge " + std::to_string(r) +
                                                  " has zero norm");
        unit.row(r) /= n;
    }
    Rng rng(seed);
    const auto picks = sample_without_replacement(rng, static_cast<std::uint64_t>(m) * (m - 1) / 2,
                                                  pair_budget);
    std::vector<double> scores;
    std::vector<bool> pos;
    scores.reserve(picks.size());
    pos.reserve(picks.size());
    AucResult r;
    for (auto idx : picks) {
        auto [i, j] = unordered_pair_at(idx, m);
        scores.push_back(std::clamp(unit.row(static_cast<Eigen::Index>(i))
                                        .dot(unit.row(static_cast<Eigen::Index>(j))),
                                    -1.0, 1.0));
        const bool same = labels[i] == labels[j];
        pos.push_back(same);
        r.positives += same ? 1 : 0;
    }
    r.pairs = picks.size();
    r.auc = auc_from_scores(scores, pos);
    return r;
}

struct LabelBlock {
    std::string label;
    std::size_t begin = 0;
    std::size_t end = 0;
};

struct CosineMatrix {
    Eigen::MatrixXd values;  // |cosine|
    std::vector<LabelBlock> blocks;
    std::vector<std::string> skipped;
};

/// |cosine| between up to `per_label` sampled edges of each label, grouped by label.
inline CosineMatrix cosine_matrix(const std::map<std::string, std::vector<Vector>>& by_label,
                                  std::size_t per_label, std::uint64_t seed = 0) {
    if (per_label == 0) throw Error("cosine_matrix: per_label must be positive");
    Rng rng(seed);
    CosineMatrix out;
    std::vector<Vector> rows;
    for (const auto& [label, edges] : by_label) {
        if (edges.empty()) {
            out.skipped.push_back(label);
            continue;
        }
        auto picks = sample_without_replacement(rng, edges.size(), per_label);
        std::sort(picks.begin(), picks.end());
        LabelBlock b{label, rows.size(), 0};
        for (auto i : picks) {
            const double n = edges[i].norm();
            if (n == 0.0) throw DegenerateVectorError("cosine_matrix: zero-norm edge in " + label);
            rows.push_back(edges[i] / n);
        }
        b.end = rows.size();
        out.blocks.push_back(b);
    }
    const auto n = static_cast<Eigen::Index>(rows.size());
    out.values.resize(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        out.values(i, i) = 1.0;
        for (Eigen::Index j = i + 1; j < n; ++j)
            out.values(i, j) = out.values(j, i) =
                std::min(1.0, std::abs(rows[static_cast<std::size_t>(i)].dot(
                                  rows[static_cast<std::size_t>(j)])));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Per-sentence evaluation records and their aggregation.

struct EdgeTypeRecord {
    std::string gold;
    std::string predicted;
    bool direction_correct = false;
    bool las_correct = false;  // edge recovered with head and label in the decoded tree
};

struct SentenceEval {
    std::string id;
    std::size_t length = 0;
    int depth = 0;
    Ratio uuas;
    Ratio las;
    Ratio root;
    std::vector<EdgeTypeRecord> edges;  // scorable gold edges, gold structure
};

inline SentenceEval evaluate_sentence(const DepSentence& gold, const PredictedTree& decoded,
                                      const std::vector<TypePrediction>& gold_structure_types,
                                      const std::vector<bool>& gold_structure_directions,
                                      const MetricOptions& opt = {}) {
    SentenceEval e;
    e.id = gold.id;
    e.length = gold.size();
    e.depth = tree_depth(gold);
    e.uuas = uuas(gold, decoded, opt);
    const LasResult l = las(gold, decoded, opt);
    e.las = l.las;
    e.root = l.root;
    std::set<std::tuple<int, int, std::string>> pred;
    for (const auto& pe : decoded.edges) pred.emplace(pe.head, pe.dep, pe.label);
    const auto edges = gold_edges(gold);
    if (gold_structure_types.size() != edges.size() ||
        gold_structure_directions.size() != edges.size())
        throw DimensionError("evaluate_sentence: one type prediction per gold edge required");
    for (std::size_t i = 0; i < edges.size(); ++i) {
        if (!scorable_dependent(gold, edges[i].dep, opt)) continue;
        e.edges.push_back({edges[i].label, gold_structure_types[i].label,
                           gold_structure_directions[i],
                           pred.count({edges[i].head, edges[i].dep, edges[i].label}) > 0});
    }
    return e;
}

struct LabelBreakdown {
    Ratio type;       // recall of the label on gold structure
    Ratio direction;  // head recovered on gold structure
    Ratio las;
};

struct CoreMetrics {
    std::size_t sentences = 0;
    Ratio uuas;
    Ratio las;
    Ratio root;
    Ratio type_accuracy;
    Ratio direction_accuracy;
    std::optional<double> balanced_accuracy;
    std::map<std::string, LabelBreakdown> per_label;
};

inline CoreMetrics aggregate(const std::vector<const SentenceEval*>& items) {
    CoreMetrics m;
    for (const SentenceEval* s : items) {
        ++m.sentences;
        m.uuas += s->uuas;
        m.las += s->las;
        m.root += s->root;
        for (const auto& e : s->edges) {
            const bool hit = e.gold == e.predicted;
            m.type_accuracy.count(hit);
            m.direction_accuracy.count(e.direction_correct);
            auto& b = m.per_label[e.gold];
            b.type.count(hit);
            b.direction.count(e.direction_correct);
            b.las.count(e.las_correct);
        }
    }
    std::map<std::string, Ratio> recall;
    for (const auto& [label, b] : m.per_label) recall[label] = b.type;
    m.balanced_accuracy = balanced_from_recall(recall);
    return m;
}

inline CoreMetrics aggregate(const std::vector<SentenceEval>& items) {
    std::vector<const SentenceEval*> ptrs;
    for (const auto& s : items) ptrs.push_back(&s);
    return aggregate(ptrs);
}

enum class StratumAxis { length, depth };

inline std::string_view to_string(StratumAxis a) {
    return a == StratumAxis::length ? "length" : "depth";
}

struct Stratum {
    StratumAxis axis = StratumAxis::length;
    long lo = 0;  // inclusive
    long hi = 0;  // exclusive
    std::optional<CoreMetrics> metrics;  // empty bucket -> nullopt
};

/// Buckets [bounds[i], bounds[i+1]) over sentence length or tree depth.
inline std::vector<Stratum> stratify(const std::vector<SentenceEval>& items, StratumAxis axis,
                                     const std::vector<long>& bounds) {
    if (bounds.size() < 2) throw Error("stratify: need at least two bucket bounds");
    for (std::size_t i = 1; i < bounds.size(); ++i)
        if (bounds[i] <= bounds[i - 1]) throw Error("stratify: bounds must be strictly increasing");
    std::vector<Stratum> out;
    for (std::size_t b = 0; b + 1 < bounds.size(); ++b) {
        Stratum st{axis, bounds[b], bounds[b + 1], std::nullopt};
        std::vector<const SentenceEval*> in;
        for (const auto& s : items) {
            const long v = axis == StratumAxis::length ? static_cast<long>(s.length) : s.depth;
            if (v >= st.lo && v < st.hi) in.push_back(&s);
        }
        if (!in.empty()) st.metrics = aggregate(in);
        out.push_back(std::move(st));
    }
    return out;
}

}  // namespace polar
