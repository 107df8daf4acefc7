#pragma once

// Tree decoding from a trained probe: pairwise predicted distances -> minimum
// spanning tree -> per-edge label and head from the nearest label prototype.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <ostream>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "polar_probe/error.hpp"
#include "polar_probe/geometry.hpp"
#include "polar_probe/linear_probe.hpp"
#include "polar_probe/probe.hpp"
#include "polar_probe/rng.hpp"
#include "polar_probe/treebank.hpp"

namespace polar {

inline constexpr std::size_t kDefaultPrototypePool = 10000;

/// One prototype per label, rows aligned with `labels` (sorted).
struct PrototypeBank {
    std::vector<std::string> labels;
    Eigen::MatrixXd vectors;  // labels x k''
    std::vector<std::size_t> support;
    std::uint64_t pool_seed = 0;
    std::size_t pool_size = kDefaultPrototypePool;

    bool empty() const { return labels.empty(); }
    Eigen::Index dim() const { return vectors.cols(); }
    int index_of(const std::string& label) const {
        auto it = std::lower_bound(labels.begin(), labels.end(), label);
        if (it == labels.end() || *it != label) return -1;
        return static_cast<int>(it - labels.begin());
    }
};

struct PrototypeBuild {
    PrototypeBank bank;
    std::vector<std::string> dropped;  // labels with no (or cancelling) pooled support
};

/// Mean projected edge per label over a seeded pool of up to `pool_size` edges.
/// Edges must be canonical (head minus dependent). Labels listed in `inventory`
/// (or present in `edges`) without pooled support are dropped and reported.
inline PrototypeBuild build_prototypes(const LinearProbe& probe,
                                       const std::vector<EdgeSample>& edges,
                                       std::size_t pool_size = kDefaultPrototypePool,
                                       std::uint64_t seed = 0,
                                       const std::vector<std::string>& inventory = {}) {
    if (edges.empty() || pool_size == 0) throw Error("build_prototypes: empty edge pool");
    Rng rng(seed);
    const auto pool = sample_without_replacement(rng, edges.size(), pool_size);

    std::map<std::string, std::pair<Vector, std::size_t>> acc;
    for (const auto& l : inventory) acc.try_emplace(l, Vector::Zero(probe.output_dim()), 0);
    for (const auto& e : edges)
        if (e.gold_label) acc.try_emplace(*e.gold_label, Vector::Zero(probe.output_dim()), 0);
    for (auto idx : pool) {
        const EdgeSample& e = edges[idx];
        if (!e.gold_label) continue;
        if (e.orientation != Orientation::canonical)
            throw Error("build_prototypes: edge " + e.sentence_id + ":" +
                        std::to_string(e.head_index) + "-" + std::to_string(e.dep_index) +
                        " is not in head-minus-dependent orientation");
        auto& slot = acc.at(*e.gold_label);
        slot.first += project(probe, e.vector);
        ++slot.second;
    }

    PrototypeBuild out;
    out.bank.pool_seed = seed;
    out.bank.pool_size = pool_size;
    std::vector<Vector> rows;
    for (auto& [label, slot] : acc) {
        if (slot.second == 0 || slot.first.squaredNorm() == 0.0) {
            out.dropped.push_back(label);
            continue;
        }
        out.bank.labels.push_back(label);
        out.bank.support.push_back(slot.second);
        rows.push_back(slot.first / static_cast<double>(slot.second));
    }
    if (rows.empty()) throw Error("build_prototypes: no label has pooled support");
    out.bank.vectors.resize(static_cast<Eigen::Index>(rows.size()), probe.output_dim());
    for (std::size_t i = 0; i < rows.size(); ++i)
        out.bank.vectors.row(static_cast<Eigen::Index>(i)) = rows[i].transpose();
    return out;
}

struct TypePrediction {
    int label_index = -1;
    std::string label;
    double cosine = 0.0;  // signed cosine to the winning prototype
};

/// Nearest prototype by |cosine| for an already projected edge. Ties keep the
/// lexicographically first label.
inline TypePrediction classify_projected(const PrototypeBank& bank,
                                         const Eigen::Ref<const Vector>& z) {
    if (bank.empty()) throw Error("prototype bank is empty");
    if (z.size() != bank.dim())
        throw DimensionError("projected edge has " + std::to_string(z.size()) +
                             " dims, prototypes have " + std::to_string(bank.dim()));
    const double nz = z.norm();
    if (nz == 0.0) throw DegenerateVectorError("edge projects to a zero-norm vector");
    TypePrediction best;
    double best_abs = -1.0;
    for (Eigen::Index c = 0; c < bank.vectors.rows(); ++c) {
        const auto v = bank.vectors.row(c);
        const double cos = std::clamp(v.dot(z) / (v.norm() * nz), -1.0, 1.0);
        if (std::abs(cos) > best_abs) {
            best_abs = std::abs(cos);
            best.label_index = static_cast<int>(c);
            best.cosine = cos;
        }
    }
    best.label = bank.labels[static_cast<std::size_t>(best.label_index)];
    return best;
}

/// Type of a positional edge (lower index minus higher index).
inline TypePrediction predict_type(const LinearProbe& probe, const PrototypeBank& bank,
                                   const Eigen::Ref<const Vector>& s_positional) {
    return classify_projected(bank, project(probe, s_positional));
}

enum class HeadSide { first, second };

/// The lower-index word heads the edge when its cosine to the label prototype is >= 0.
inline HeadSide direction_from_cosine(double cos) {
    return cos >= 0.0 ? HeadSide::first : HeadSide::second;
}

inline HeadSide predict_direction(const LinearProbe& probe, const PrototypeBank& bank,
                                  const Eigen::Ref<const Vector>& s_positional,
                                  const std::string& label) {
    const int c = bank.index_of(label);
    if (c < 0) throw Error("predict_direction: label '" + label + "' not in prototype bank");
    return direction_from_cosine(cosine(project(probe, s_positional),
                                        bank.vectors.row(c).transpose()));
}

/// Predicted squared distances between all words (rows of `words`).
inline Eigen::MatrixXd distance_matrix(const LinearProbe& probe, const Eigen::MatrixXd& words) {
    if (words.cols() != probe.input_dim())
        throw DimensionError("distance_matrix: embeddings have " + std::to_string(words.cols()) +
                             " dims, probe expects " + std::to_string(probe.input_dim()));
    const Eigen::Index n = words.rows();
    const Eigen::MatrixXd p = words * probe.matrix.transpose();
    Eigen::MatrixXd d = Eigen::MatrixXd::Zero(n, n);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = i + 1; j < n; ++j) {
            const double v = (p.row(i) - p.row(j)).squaredNorm();
            d(i, j) = v;
            d(j, i) = v;
        }
    return d;
}

/// Undirected edge between 0-based positions, first < second.
using UndirectedEdge = std::pair<int, int>;

/// Exact minimum spanning tree (Prim, O(n^2)). Edges are totally ordered by
/// (weight, i, j) with i < j, so the result is unique under ties. Output sorted.
inline std::vector<UndirectedEdge> mst_decode(const Eigen::MatrixXd& distances) {
    const Eigen::Index n = distances.rows();
    if (distances.cols() != n) throw DimensionError("mst_decode: matrix is not square");
    if (!distances.allFinite()) throw NumericError("mst_decode: non-finite weight");
    std::vector<UndirectedEdge> out;
    if (n <= 1) return out;

    using Key = std::tuple<double, int, int>;
    auto key = [&](int u, int v) {
        const int a = std::min(u, v), b = std::max(u, v);
        return Key{distances(a, b), a, b};
    };
    std::vector<bool> in_tree(static_cast<std::size_t>(n), false);
    std::vector<Key> best(static_cast<std::size_t>(n));
    in_tree[0] = true;
    for (int v = 1; v < n; ++v) best[static_cast<std::size_t>(v)] = key(0, v);
    for (Eigen::Index step = 1; step < n; ++step) {
        int pick = -1;
        for (int v = 0; v < n; ++v)
            if (!in_tree[static_cast<std::size_t>(v)] &&
                (pick < 0 || best[static_cast<std::size_t>(v)] < best[static_cast<std::size_t>(pick)]))
                pick = v;
        const auto& [w, a, b] = best[static_cast<std::size_t>(pick)];
        out.emplace_back(a, b);
        in_tree[static_cast<std::size_t>(pick)] = true;
        for (int v = 0; v < n; ++v)
            if (!in_tree[static_cast<std::size_t>(v)]) {
                const Key k = key(pick, v);
                if (k < best[static_cast<std::size_t>(v)]) best[static_cast<std::size_t>(v)] = k;
            }
    }
    std::sort(out.begin(), out.end());
    return out;
}

struct PredictedEdge {
    int head = 0;  // 1-based
    int dep = 0;
    std::string label;
    double confidence = 0.0;  // |cosine| to the winning prototype
};

struct PredictedTree {
    std::string sentence_id;
    std::size_t num_words = 0;
    std::vector<PredictedEdge> edges;
    /// Per-word head (index by word - 1); 0 when no edge names the word as dependent.
    /// If several edges do, the most confident one is kept.
    std::vector<int> heads;
    std::vector<std::string> labels;
};

/// Derives the per-word head map from the edge list.
inline void assign_heads(PredictedTree& t) {
    t.heads.assign(t.num_words, 0);
    t.labels.assign(t.num_words, std::string(kRootLabel));
    std::vector<double> conf(t.num_words, -1.0);
    for (const auto& e : t.edges) {
        const auto d = static_cast<std::size_t>(e.dep - 1);
        if (e.confidence > conf[d]) {
            conf[d] = e.confidence;
            t.heads[d] = e.head;
            t.labels[d] = e.label;
        }
    }
}

/// MST over predicted distances, then label and head for every tree edge.
/// Directions are reported as predicted; no root repair is applied.
inline PredictedTree decode_tree(const LinearProbe& probe, const PrototypeBank& bank,
                                 const Eigen::MatrixXd& words, const std::string& sentence_id = {}) {
    PredictedTree t;
    t.sentence_id = sentence_id;
    t.num_words = static_cast<std::size_t>(words.rows());
    const Eigen::MatrixXd p = words * probe.matrix.transpose();
    for (const auto& [i, j] : mst_decode(distance_matrix(probe, words))) {
        const Vector z = (p.row(i) - p.row(j)).transpose();
        TypePrediction tp;
        try {
            tp = classify_projected(bank, z);
        } catch (const DegenerateVectorError&) {
            throw DegenerateVectorError("sentence " + sentence_id + ": words " +
                                        std::to_string(i + 1) + " and " + std::to_string(j + 1) +
                                        " project to the same point");
        }
        const bool first_is_head = direction_from_cosine(tp.cosine) == HeadSide::first;
        t.edges.push_back({first_is_head ? i + 1 : j + 1, first_is_head ? j + 1 : i + 1, tp.label,
                           std::abs(tp.cosine)});
    }
    assign_heads(t);
    return t;
}

inline PredictedTree decode_tree(const LinearProbe& probe, const PrototypeBank& bank,
                                 const WordEmbeddings& we) {
    return decode_tree(probe, bank, we.vectors, we.sentence_id);
}

/// The gold tree expressed as a prediction (oracle mode).
inline PredictedTree gold_as_prediction(const DepSentence& s) {
    PredictedTree t;
    t.sentence_id = s.id;
    t.num_words = s.size();
    for (const auto& e : gold_edges(s)) t.edges.push_back({e.head, e.dep, e.label, 1.0});
    assign_heads(t);
    return t;
}

/// Gold sentence with HEAD/DEPREL replaced by the prediction.
inline DepSentence with_predicted_heads(const DepSentence& gold, const PredictedTree& t) {
    if (gold.size() != t.num_words)
        throw DimensionError("sentence " + gold.id + ": prediction has " +
                             std::to_string(t.num_words) + " words");
    DepSentence out = gold;
    for (std::size_t i = 0; i < out.words.size(); ++i) {
        out.words[i].head = t.heads[i];
        out.words[i].deprel = t.labels[i];
        out.words[i].deps = "_";
    }
    return out;
}

// ---------------------------------------------------------------------------
// Prototype-bank file: "POLARPROTO\n", JSON header line, labels x k'' f32le.

inline constexpr std::string_view kBankMagic = "POLARPROTO";

inline void save_prototypes(const PrototypeBank& bank, const std::filesystem::path& path) {
    const nlohmann::json header = {{"labels", bank.labels},     {"support", bank.support},
                                   {"k_probe", bank.dim()},     {"pool_seed", bank.pool_seed},
                                   {"pool_size", bank.pool_size}, {"dtype", kBundleDtype}};
    detail::write_header_and_floats(path, kBankMagic, header, bank.vectors);
}

inline PrototypeBank load_prototypes(const std::filesystem::path& path) {
    auto [h, blob] = detail::read_header_and_blob(path, kBankMagic);
    PrototypeBank bank;
    try {
        bank.labels = h.at("labels").get<std::vector<std::string>>();
        bank.support = h.at("support").get<std::vector<std::size_t>>();
        bank.pool_seed = h.at("pool_seed").get<std::uint64_t>();
        bank.pool_size = h.at("pool_size").get<std::size_t>();
        const auto dim = h.at("k_probe").get<Eigen::Index>();
        if (h.at("dtype").get<std::string>() != kBundleDtype)
            throw ValidationError("dtype", "unsupported prototype dtype");
        if (bank.support.size() != bank.labels.size())
            throw ValidationError("support", "length differs from labels");
        if (!std::is_sorted(bank.labels.begin(), bank.labels.end()))
            throw ValidationError("labels", "must be sorted");
        bank.vectors = detail::floats_to_matrix(
            blob, static_cast<Eigen::Index>(bank.labels.size()), dim, "vectors");
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError("header", e.what());
    }
    for (Eigen::Index r = 0; r < bank.vectors.rows(); ++r)
        if (bank.vectors.row(r).squaredNorm() == 0.0)
            throw ValidationError("vectors", "prototype for '" +
                                                 bank.labels[static_cast<std::size_t>(r)] +
                                                 "' has zero norm");
    return bank;
}

}  // namespace polar
