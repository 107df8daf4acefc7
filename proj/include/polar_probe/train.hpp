#pragma once

// Dataset assembly and the epoch/batch training loop with validation-based
// snapshot selection.

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "polar_probe/bundle.hpp"
#include "polar_probe/decode.hpp"
#include "polar_probe/error.hpp"
#include "polar_probe/metrics.hpp"
#include "polar_probe/probe.hpp"
#include "polar_probe/rng.hpp"
#include "polar_probe/treebank.hpp"

namespace polar {

enum class SelectionCriterion { validation_loss, validation_las };

inline SelectionCriterion parse_selection(std::string_view s) {
    if (s == "loss" || s == "validation_loss") return SelectionCriterion::validation_loss;
    if (s == "las" || s == "validation_las") return SelectionCriterion::validation_las;
    throw ConfigError("unknown selection criterion '" + std::string(s) + "'");
}

struct TrainConfig {
    double learning_rate = 0.005;
    int batch_sentences = 200;
    int epochs = 30;
    double lambda = 10.0;
    int probe_dim = 128;
    std::size_t pair_cap = 100000;
    std::uint64_t seed = 0;
    ProbeKind kind = ProbeKind::polar;
    SelectionCriterion selection = SelectionCriterion::validation_loss;

    void validate() const {
        if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
        if (batch_sentences <= 0) throw ConfigError("batch_sentences must be positive");
        if (epochs <= 0) throw ConfigError("epochs must be positive");
        if (lambda < 0.0) throw ConfigError("lambda must be non-negative");
        if (probe_dim <= 0) throw ConfigError("probe_dim must be positive");
        if (pair_cap == 0) throw ConfigError("pair_cap must be positive");
        if (kind == ProbeKind::identity) throw ConfigError("identity probes are not trained");
    }
    /// lambda as recorded on the probe: zero unless the angular term is weighted.
    double effective_lambda() const {
        switch (kind) {
            case ProbeKind::structural: return 0.0;
            case ProbeKind::angular: return 1.0;
            default: return lambda;
        }
    }
};

struct EpochLog {
    int epoch = 0;  // 0 = initial probe
    double train_structural = 0.0;
    double train_angular = 0.0;
    double val_structural = 0.0;
    double val_angular = 0.0;
    double val_total = 0.0;
    std::optional<double> val_las;
    std::size_t skipped_edge_pairs = 0;
    bool selected = false;
};

struct TrainResult {
    LinearProbe probe;
    std::vector<EpochLog> log;
};

/// Word embeddings, distances and gold edges for every sentence of a split.
inline ProbeDataset make_dataset(const std::vector<DepSentence>& sentences, const Bundle& bundle,
                                 int layer, std::vector<std::string> labels) {
    std::sort(labels.begin(), labels.end());
    ProbeDataset ds;
    ds.labels = std::move(labels);
    ds.sentences.reserve(sentences.size());
    for (const auto& s : sentences) {
        if (!bundle.has_sentence(s.id))
            throw ValidationError("sentences", "sentence " + s.id + " missing from bundle");
        WordEmbeddings we = word_embeddings(bundle, layer, s.id);
        if (static_cast<std::size_t>(we.vectors.rows()) != s.size())
            throw AlignmentError("sentence " + s.id + ": bundle has " +
                                 std::to_string(we.vectors.rows()) + " words, treebank has " +
                                 std::to_string(s.size()));
        SentenceData d;
        d.id = s.id;
        d.words = we.vectors.cast<float>();
        d.distances = tree_distances(s);
        for (const auto& e : gold_edges(s)) {
            const int li = ds.label_index(e.label);
            if (li < 0) continue;  // label outside the training inventory
            d.edges.push_back({e.head - 1, e.dep - 1, li});
        }
        ds.sentences.push_back(std::move(d));
    }
    return ds;
}

/// Canonical (head minus dependent) edge samples with gold labels.
inline std::vector<EdgeSample> canonical_edges(const ProbeDataset& ds) {
    std::vector<EdgeSample> out;
    for (const auto& s : ds.sentences)
        for (const auto& e : s.edges) {
            EdgeSample x;
            x.sentence_id = s.id;
            x.head_index = e.head + 1;
            x.dep_index = e.dep + 1;
            x.vector = (s.words.row(e.head).cast<double>() - s.words.row(e.dep).cast<double>()).transpose();
            x.gold_label = ds.labels[static_cast<std::size_t>(e.label)];
            x.orientation = Orientation::canonical;
            out.push_back(std::move(x));
        }
    return out;
}

/// Batch over the given sentences with a fresh edge-pair sample.
inline Batch make_batch(std::string id, std::vector<const SentenceData*> sentences,
                        std::size_t pair_cap, Rng* pair_rng) {
    Batch b;
    b.id = std::move(id);
    b.sentences = std::move(sentences);
    if (pair_rng) b.edge_pairs = sample_edge_pairs(b.edge_count(), pair_cap, *pair_rng);
    return b;
}

inline Batch whole_split_batch(const ProbeDataset& ds, std::string id, std::size_t pair_cap,
                               Rng* pair_rng) {
    std::vector<const SentenceData*> all;
    for (const auto& s : ds.sentences) all.push_back(&s);
    return make_batch(std::move(id), std::move(all), pair_cap, pair_rng);
}

/// Decoded validation LAS for a probe (prototypes from the training edges).
inline double decoded_las(const LinearProbe& probe, const ProbeDataset& train,
                          const std::vector<DepSentence>& gold, const ProbeDataset& val,
                          std::uint64_t seed, const MetricOptions& opt = {}) {
    const auto bank = build_prototypes(probe, canonical_edges(train), kDefaultPrototypePool, seed,
                                       train.labels).bank;
    Ratio r;
    for (std::size_t i = 0; i < val.sentences.size(); ++i) {
        const auto t = decode_tree(probe, bank, val.sentences[i].words.cast<double>(),
                                   val.sentences[i].id);
        r += las(gold[i], t, opt).las;
    }
    return r.value_or(0.0);
}

using EpochCallback = std::function<void(const EpochLog&)>;

/// Adam over shuffled sentence batches; returns the best validation snapshot.
/// `val_gold` is only needed for LAS-based selection.
inline TrainResult train(const TrainConfig& cfg, const ProbeDataset& train_set,
                         const ProbeDataset& val_set, int layer = 0,
                         const std::vector<DepSentence>* val_gold = nullptr,
                         const EpochCallback& on_epoch = {}) {
    cfg.validate();
    if (train_set.sentences.empty()) throw ConfigError("training split is empty");
    if (val_set.sentences.empty()) throw ConfigError("validation split is empty");
    if (cfg.selection == SelectionCriterion::validation_las && !val_gold)
        throw ConfigError("LAS-based selection needs the validation treebank");
    const Eigen::Index k = train_set.sentences.front().words.cols();
    if (cfg.probe_dim > k)
        throw ConfigError("probe_dim " + std::to_string(cfg.probe_dim) +
                          " exceeds embedding width " + std::to_string(k));

    const Objective obj = Objective::for_probe(cfg.kind, cfg.lambda);
    Rng init_rng(cfg.seed);
    Rng order_rng(cfg.seed ^ 0x5851F42D4C957F2DULL);
    Rng pair_rng(cfg.seed ^ 0x14057B7EF767814FULL);
    Rng val_rng(cfg.seed ^ 0x2545F4914F6CDD1DULL);

    LinearProbe probe;
    probe.matrix = init_probe_matrix(k, cfg.probe_dim, init_rng);
    probe.kind = cfg.kind;
    probe.lambda = cfg.effective_lambda();
    probe.layer = layer;
    probe.seed = cfg.seed;

    const Batch val_batch =
        whole_split_batch(val_set, "validation", cfg.pair_cap, obj.angular ? &val_rng : nullptr);

    TrainResult result;
    double best = std::numeric_limits<double>::infinity();
    Eigen::MatrixXd best_matrix = probe.matrix;
    int best_epoch = 0;

    auto score_snapshot = [&](EpochLog& row) {
        const LossTerms v = evaluate_batch(probe.matrix, val_batch, obj, nullptr);
        row.val_structural = v.structural;
        row.val_angular = v.angular;
        row.val_total = v.total;
        if (!std::isfinite(v.total))
            throw NumericError("epoch " + std::to_string(row.epoch) + ": non-finite validation loss");
        double score = v.total;
        if (cfg.selection == SelectionCriterion::validation_las) {
            row.val_las = decoded_las(probe, train_set, *val_gold, val_set, cfg.seed);
            score = -*row.val_las;
        }
        if (score < best) {
            best = score;
            best_matrix = probe.matrix;
            best_epoch = row.epoch;
        }
    };

    {
        EpochLog row;
        row.epoch = 0;
        Rng tmp(cfg.seed ^ 0x9E3779B97F4A7C15ULL);
        const LossTerms t = evaluate_batch(
            probe.matrix, whole_split_batch(train_set, "train", cfg.pair_cap, obj.angular ? &tmp : nullptr),
            obj, nullptr);
        row.train_structural = t.structural;
        row.train_angular = t.angular;
        score_snapshot(row);
        result.log.push_back(row);
        if (on_epoch) on_epoch(row);
    }

    OptimizerState opt = OptimizerState::like(probe.matrix);
    std::vector<std::size_t> order(train_set.sentences.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Eigen::MatrixXd grad;

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        order_rng.shuffle(order);
        EpochLog row;
        row.epoch = epoch;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < order.size();
             start += static_cast<std::size_t>(cfg.batch_sentences)) {
            const std::size_t stop =
                std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_sentences));
            std::vector<const SentenceData*> members;
            for (std::size_t i = start; i < stop; ++i) members.push_back(&train_set.sentences[order[i]]);
            const Batch batch =
                make_batch("epoch " + std::to_string(epoch) + " batch " + std::to_string(batches),
                           std::move(members), cfg.pair_cap, obj.angular ? &pair_rng : nullptr);
            LossTerms t;
            try {
                t = evaluate_batch(probe.matrix, batch, obj, &grad);
            } catch (const NumericError& e) {
                throw NumericError("training diverged at epoch " + std::to_string(epoch) + ": " +
                                   e.what());
            }
            row.train_structural += t.structural;
            row.train_angular += t.angular;
            row.skipped_edge_pairs += t.skipped_edge_pairs;
            adam_step(probe.matrix, grad, opt, cfg.learning_rate);
            ++batches;
        }
        row.train_structural /= static_cast<double>(batches);
        row.train_angular /= static_cast<double>(batches);
        if (!probe.matrix.allFinite())
            throw NumericError("training diverged at epoch " + std::to_string(epoch));
        score_snapshot(row);
        result.log.push_back(row);
        if (on_epoch) on_epoch(row);
    }

    for (auto& row : result.log) row.selected = row.epoch == best_epoch;
    probe.matrix = best_matrix;
    probe.selected_epoch = best_epoch;
    result.probe = std::move(probe);
    return result;
}

/// Coverage-checked training from treebank splits and a bundle.
inline TrainResult train(const TrainConfig& cfg, const Splits& splits, const Bundle& bundle,
                         int layer, const EpochCallback& on_epoch = {}) {
    if (!bundle.has_layer(layer))
        throw ValidationError("layers", "layer " + std::to_string(layer) + " not in bundle");
    for (const auto* part : {&splits.train, &splits.validation}) {
        const auto issues = cross_validate(bundle, *part);
        if (!issues.empty())
            throw ValidationError("coverage", "sentence " + issues.front().sentence_id + ": " +
                                                  issues.front().problem);
    }
    const auto labels = label_inventory(splits.train);
    const ProbeDataset tr = make_dataset(splits.train, bundle, layer, labels);
    const ProbeDataset va = make_dataset(splits.validation, bundle, layer, labels);
    return train(cfg, tr, va, layer, &splits.validation, on_epoch);
}

inline void write_training_log_csv(std::ostream& out, const std::vector<EpochLog>& log) {
    out << "epoch,train_LS,train_LA,val_LS,val_LA,selected\n";
    out.precision(10);
    for (const auto& r : log)
        out << r.epoch << ',' << r.train_structural << ',' << r.train_angular << ','
            << r.val_structural << ',' << r.val_angular << ',' << (r.selected ? 1 : 0) << '\n';
}

}  // namespace polar
