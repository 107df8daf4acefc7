#pragma once

// Probe objectives (structural distance loss, angular contrastive loss and
// their weighted sum), analytic gradients, Adam, and probe files.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "polar_probe/bundle.hpp"
#include "polar_probe/error.hpp"
#include "polar_probe/geometry.hpp"
#include "polar_probe/linear_probe.hpp"
#include "polar_probe/rng.hpp"
#include "polar_probe/treebank.hpp"

namespace polar {

/// An edge vector with its gold tree distance (an element of the all-pairs set).
struct DistancePair {
    Vector s;
    double gold_distance = 0.0;
};

/// Two gold-linked edge vectors and whether they share a label.
struct EdgePair {
    Vector s;
    Vector t;
    bool same_type = false;
};

struct LossTerms {
    double structural = 0.0;
    double angular = 0.0;
    double total = 0.0;
    std::size_t distance_pairs = 0;
    std::size_t edge_pairs = 0;
    std::size_t skipped_edge_pairs = 0;  // zero-norm projections (training only)
};

/// Which terms enter the objective.
struct Objective {
    bool structural = true;
    bool angular = true;
    double lambda = 10.0;

    static Objective for_probe(ProbeKind kind, double lambda) {
        switch (kind) {
            case ProbeKind::structural: return {true, false, 0.0};
            case ProbeKind::angular: return {false, true, 1.0};
            case ProbeKind::polar: return {true, lambda != 0.0, lambda};
            case ProbeKind::identity: break;
        }
        throw ConfigError("identity probes are not trained");
    }
    double combine(double ls, double la) const {
        return (structural ? ls : 0.0) + (angular ? lambda * la : 0.0);
    }
};

inline double sign0(double x) { return (x > 0.0) - (x < 0.0); }

/// |B s|^2.
inline double predicted_distance(const LinearProbe& probe, const Eigen::Ref<const Vector>& s) {
    return project(probe, s).squaredNorm();
}

/// Mean |d - |B s|^2| over the pairs.
inline double structural_loss(const LinearProbe& probe, std::span<const DistancePair> pairs) {
    if (pairs.empty()) throw Error("structural_loss: empty pair set");
    double sum = 0.0;
    for (const auto& p : pairs) sum += std::abs(p.gold_distance - predicted_distance(probe, p.s));
    return sum / static_cast<double>(pairs.size());
}

/// Mean (cos(B s, B t) - [same type])^2 over the edge pairs.
inline double angular_loss(const LinearProbe& probe, std::span<const EdgePair> pairs) {
    if (pairs.empty()) throw Error("angular_loss: empty edge-pair set");
    double sum = 0.0;
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        const Vector a = project(probe, pairs[i].s);
        const Vector b = project(probe, pairs[i].t);
        if (a.squaredNorm() == 0.0 || b.squaredNorm() == 0.0)
            throw DegenerateVectorError("angular_loss: edge pair " + std::to_string(i) +
                                        " projects to a zero-norm vector");
        const double r = a.dot(b) / (a.norm() * b.norm()) - (pairs[i].same_type ? 1.0 : 0.0);
        sum += r * r;
    }
    return sum / static_cast<double>(pairs.size());
}

inline LossTerms polar_loss(const LinearProbe& probe, std::span<const DistancePair> pairs,
                            std::span<const EdgePair> edge_pairs, double lambda) {
    LossTerms t;
    t.structural = structural_loss(probe, pairs);
    t.distance_pairs = pairs.size();
    if (lambda != 0.0 || !edge_pairs.empty()) {
        t.angular = angular_loss(probe, edge_pairs);
        t.edge_pairs = edge_pairs.size();
    }
    t.total = t.structural + lambda * t.angular;
    return t;
}

/// d/dB of the structural loss; subgradient uses sign(0) = 0.
inline Eigen::MatrixXd structural_gradient(const LinearProbe& probe,
                                           std::span<const DistancePair> pairs) {
    if (pairs.empty()) throw Error("structural_gradient: empty pair set");
    Eigen::MatrixXd g = Eigen::MatrixXd::Zero(probe.matrix.rows(), probe.matrix.cols());
    for (const auto& p : pairs) {
        const Vector z = project(probe, p.s);
        const double c = sign0(z.squaredNorm() - p.gold_distance);
        if (c != 0.0) g.noalias() += (2.0 * c) * z * p.s.transpose();
    }
    return g / static_cast<double>(pairs.size());
}

namespace detail {

/// d/da and d/db of (cos(a, b) - y)^2, accumulated into ga, gb. Returns the residual.
inline double cosine_residual_grad(const Eigen::Ref<const Vector>& a,
                                   const Eigen::Ref<const Vector>& b, double y,
                                   Eigen::Ref<Vector> ga, Eigen::Ref<Vector> gb) {
    const double na = a.norm();
    const double nb = b.norm();
    const double cos = a.dot(b) / (na * nb);
    const double r = cos - y;
    const double w = 2.0 * r;
    ga.noalias() += w * (b / (na * nb) - cos * a / (na * na));
    gb.noalias() += w * (a / (na * nb) - cos * b / (nb * nb));
    return r;
}

}  // namespace detail

/// d/dB of the angular loss. Throws on zero-norm projections.
inline Eigen::MatrixXd angular_gradient(const LinearProbe& probe, std::span<const EdgePair> pairs) {
    if (pairs.empty()) throw Error("angular_gradient: empty edge-pair set");
    Eigen::MatrixXd g = Eigen::MatrixXd::Zero(probe.matrix.rows(), probe.matrix.cols());
    const Eigen::Index m = probe.output_dim();
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        const Vector a = project(probe, pairs[i].s);
        const Vector b = project(probe, pairs[i].t);
        if (a.squaredNorm() == 0.0 || b.squaredNorm() == 0.0)
            throw DegenerateVectorError("angular_gradient: edge pair " + std::to_string(i) +
                                        " projects to a zero-norm vector");
        Vector ga = Vector::Zero(m), gb = Vector::Zero(m);
        detail::cosine_residual_grad(a, b, pairs[i].same_type ? 1.0 : 0.0, ga, gb);
        g.noalias() += ga * pairs[i].s.transpose() + gb * pairs[i].t.transpose();
    }
    return g / static_cast<double>(pairs.size());
}

inline Eigen::MatrixXd polar_gradient(const LinearProbe& probe, std::span<const DistancePair> pairs,
                                      std::span<const EdgePair> edge_pairs, double lambda) {
    Eigen::MatrixXd g = structural_gradient(probe, pairs);
    if (lambda != 0.0) g += lambda * angular_gradient(probe, edge_pairs);
    return g;
}

// ---------------------------------------------------------------------------
// Sentence-level batches. Projections are computed once per word/edge, and the
// all-pairs structural gradient is reduced through a weighted graph Laplacian:
//   sum_{i<j} c_ij (P_i - P_j)(H_i - H_j)^T = P^T L H,  L = diag(W 1) - W.

/// A gold edge inside a sentence, 0-based word positions.
struct EdgeRef {
    int head = 0;
    int dep = 0;
    int label = 0;  // index into the dataset label list
};

struct SentenceData {
    std::string id;
    Eigen::MatrixXf words;  // n x k
    TreeDistanceTable distances;
    std::vector<EdgeRef> edges;
};

struct ProbeDataset {
    std::vector<std::string> labels;  // sorted inventory
    std::vector<SentenceData> sentences;

    int label_index(const std::string& label) const {
        auto it = std::lower_bound(labels.begin(), labels.end(), label);
        if (it == labels.end() || *it != label) return -1;
        return static_cast<int>(it - labels.begin());
    }
};

struct Batch {
    std::string id;
    std::vector<const SentenceData*> sentences;
    /// Sampled unordered pairs over the flattened gold edges of `sentences`.
    std::vector<std::pair<std::uint32_t, std::uint32_t>> edge_pairs;

    std::size_t edge_count() const {
        std::size_t n = 0;
        for (const auto* s : sentences) n += s->edges.size();
        return n;
    }
};

/// Uniform sample (without replacement) of up to `cap` unordered pairs of [0, m).
inline std::vector<std::pair<std::uint32_t, std::uint32_t>> sample_edge_pairs(std::size_t m,
                                                                             std::size_t cap,
                                                                             Rng& rng) {
    std::vector<std::pair<std::uint32_t, std::uint32_t>> out;
    if (m < 2) return out;
    const std::uint64_t total = static_cast<std::uint64_t>(m) * (m - 1) / 2;
    const auto picks = sample_without_replacement(rng, total, cap);
    out.reserve(picks.size());
    for (auto idx : picks) {
        auto [i, j] = unordered_pair_at(idx, m);
        out.emplace_back(static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(j));
    }
    return out;
}

/// Loss of `matrix` on a batch; when `grad` is non-null the gradient is written there.
/// With `skip_degenerate`, zero-norm edge projections are dropped from the angular mean
/// and counted; otherwise they raise DegenerateVectorError.
inline LossTerms evaluate_batch(const Eigen::MatrixXd& matrix, const Batch& batch,
                                const Objective& obj, Eigen::MatrixXd* grad,
                                bool skip_degenerate = true) {
    const Eigen::Index kout = matrix.rows();
    const Eigen::Index k = matrix.cols();
    LossTerms t;
    if (grad) grad->setZero(kout, k);

    if (obj.structural) {
        double sum = 0.0;
        std::size_t count = 0;
        Eigen::MatrixXd gs = Eigen::MatrixXd::Zero(kout, k);
        for (const SentenceData* s : batch.sentences) {
            const Eigen::Index n = s->words.rows();
            if (n < 2) continue;
            if (s->words.cols() != k)
                throw DimensionError("sentence " + s->id + ": embedding width " +
                                     std::to_string(s->words.cols()) + " vs probe input " +
                                     std::to_string(k));
            const Eigen::MatrixXd h = s->words.cast<double>();
            const Eigen::MatrixXd p = h * matrix.transpose();  // n x k''
            Eigen::MatrixXd lap = Eigen::MatrixXd::Zero(n, n);
            for (Eigen::Index i = 0; i < n; ++i) {
                for (Eigen::Index j = i + 1; j < n; ++j) {
                    const double dhat = (p.row(i) - p.row(j)).squaredNorm();
                    const double gold = s->distances(static_cast<std::size_t>(i),
                                                     static_cast<std::size_t>(j));
                    sum += std::abs(gold - dhat);
                    ++count;
                    const double c = sign0(dhat - gold);
                    lap(i, j) -= c;
                    lap(j, i) -= c;
                    lap(i, i) += c;
                    lap(j, j) += c;
                }
            }
            if (grad) gs.noalias() += p.transpose() * lap * h;
        }
        if (count == 0) throw Error("batch " + batch.id + ": no word pairs");
        t.structural = sum / static_cast<double>(count);
        t.distance_pairs = count;
        if (grad) *grad += (2.0 / static_cast<double>(count)) * gs;
    }

    if (obj.angular) {
        const std::size_t m = batch.edge_count();
        Eigen::MatrixXd edges(static_cast<Eigen::Index>(m), k);
        std::vector<int> labels(m);
        std::size_t row = 0;
        for (const SentenceData* s : batch.sentences)
            for (const EdgeRef& e : s->edges) {
                edges.row(static_cast<Eigen::Index>(row)) =
                    s->words.row(e.head).cast<double>() - s->words.row(e.dep).cast<double>();
                labels[row++] = e.label;
            }
        const Eigen::MatrixXd z = edges * matrix.transpose();  // m x k''
        const Eigen::VectorXd norms = z.rowwise().norm();
        Eigen::MatrixXd gz = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(m), kout);
        double sum = 0.0;
        std::size_t used = 0;
        for (std::size_t q = 0; q < batch.edge_pairs.size(); ++q) {
            const auto [a, b] = batch.edge_pairs[q];
            if (norms[a] == 0.0 || norms[b] == 0.0) {
                if (!skip_degenerate)
                    throw DegenerateVectorError("batch " + batch.id + ": edge pair " +
                                                std::to_string(q) + " projects to zero");
                ++t.skipped_edge_pairs;
                continue;
            }
            const double y = labels[a] == labels[b] ? 1.0 : 0.0;
            double r;
            if (grad) {
                Vector ga = gz.row(a).transpose();
                Vector gb = gz.row(b).transpose();
                r = detail::cosine_residual_grad(z.row(a).transpose(), z.row(b).transpose(), y, ga,
                                                 gb);
                gz.row(a) = ga.transpose();
                gz.row(b) = gb.transpose();
            } else {
                r = z.row(a).dot(z.row(b)) / (norms[a] * norms[b]) - y;
            }
            sum += r * r;
            ++used;
        }
        t.edge_pairs = used;
        if (used > 0) {
            t.angular = sum / static_cast<double>(used);
            if (grad)
                *grad += obj.lambda / static_cast<double>(used) *
                         (gz.transpose() * edges);
        }
    }

    t.total = obj.combine(t.structural, t.angular);
    if (!std::isfinite(t.total) || (grad && !grad->allFinite()))
        throw NumericError("batch " + batch.id + ": non-finite loss or gradient");
    return t;
}

/// Gradient of the configured objective on a batch.
inline Eigen::MatrixXd loss_gradient(const LinearProbe& probe, const Batch& batch,
                                     const Objective& obj) {
    Eigen::MatrixXd g;
    evaluate_batch(probe.matrix, batch, obj, &g);
    return g;
}

// ---------------------------------------------------------------------------

struct AdamParams {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

struct OptimizerState {
    Eigen::MatrixXd first_moment;
    Eigen::MatrixXd second_moment;
    std::int64_t step = 0;

    static OptimizerState like(const Eigen::MatrixXd& m) {
        return {Eigen::MatrixXd::Zero(m.rows(), m.cols()), Eigen::MatrixXd::Zero(m.rows(), m.cols()),
                0};
    }
};

/// One bias-corrected Adam update of `params` in place.
inline void adam_step(Eigen::MatrixXd& params, const Eigen::MatrixXd& grad, OptimizerState& state,
                      double learning_rate, const AdamParams& hp = {}) {
    if (grad.rows() != params.rows() || grad.cols() != params.cols())
        throw DimensionError("adam_step: gradient shape mismatch");
    if (state.first_moment.size() == 0) state = OptimizerState::like(params);
    ++state.step;
    state.first_moment = hp.beta1 * state.first_moment + (1.0 - hp.beta1) * grad;
    state.second_moment =
        hp.beta2 * state.second_moment + (1.0 - hp.beta2) * grad.cwiseAbs2();
    const double c1 = 1.0 - std::pow(hp.beta1, static_cast<double>(state.step));
    const double c2 = 1.0 - std::pow(hp.beta2, static_cast<double>(state.step));
    params.array() -= learning_rate * (state.first_moment.array() / c1) /
                      ((state.second_moment.array() / c2).sqrt() + hp.epsilon);
}

inline void adam_step(LinearProbe& probe, const Eigen::MatrixXd& grad, OptimizerState& state,
                      double learning_rate, const AdamParams& hp = {}) {
    adam_step(probe.matrix, grad, state, learning_rate, hp);
}

/// Scaled-uniform initialisation in [-a, a], a = sqrt(6 / (k + k'')).
inline Eigen::MatrixXd init_probe_matrix(Eigen::Index k, Eigen::Index kout, Rng& rng) {
    const double a = std::sqrt(6.0 / static_cast<double>(k + kout));
    Eigen::MatrixXd m(kout, k);
    for (Eigen::Index i = 0; i < kout; ++i)
        for (Eigen::Index j = 0; j < k; ++j) m(i, j) = rng.uniform(-a, a);
    return m;
}

// ---------------------------------------------------------------------------
// Probe file: "POLARPROBE\n", one line of JSON header, then k'' x k f32le row-major.

inline constexpr std::string_view kProbeMagic = "POLARPROBE";

namespace detail {

inline void write_header_and_floats(const std::filesystem::path& path, std::string_view magic,
                                    const nlohmann::json& header, const Eigen::MatrixXd& m) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out << magic << '\n' << header.dump() << '\n';
    std::vector<float> rows(static_cast<std::size_t>(m.size()));
    std::size_t i = 0;
    for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c) rows[i++] = static_cast<float>(m(r, c));
    store_f32le(out, rows.data(), rows.size());
    if (!out) throw IoError("write failed for " + path.string());
}

inline std::pair<nlohmann::json, std::vector<char>> read_header_and_blob(
    const std::filesystem::path& path, std::string_view magic) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::string line;
    std::getline(in, line);
    if (line != magic) throw ValidationError("magic", path.string() + " is not a " +
                                                          std::string(magic) + " file");
    std::getline(in, line);
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError("header", e.what());
    }
    std::vector<char> blob((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return {std::move(header), std::move(blob)};
}

inline Eigen::MatrixXd floats_to_matrix(const std::vector<char>& blob, Eigen::Index rows,
                                        Eigen::Index cols, const std::string& what) {
    const auto expected = static_cast<std::size_t>(rows * cols) * 4;
    if (blob.size() != expected)
        throw ValidationError(what, "payload is " + std::to_string(blob.size()) +
                                        " bytes, header implies " + std::to_string(expected));
    std::vector<float> f(static_cast<std::size_t>(rows * cols));
    load_f32le(blob.data(), f.data(), f.size());
    Eigen::MatrixXd m(rows, cols);
    std::size_t i = 0;
    for (Eigen::Index r = 0; r < rows; ++r)
        for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = f[i++];
    return m;
}

}  // namespace detail

inline void save_probe(const LinearProbe& p, const std::filesystem::path& path) {
    const nlohmann::json header = {{"kind", to_string(p.kind)},
                                   {"k", p.input_dim()},
                                   {"k_probe", p.output_dim()},
                                   {"lambda", p.lambda},
                                   {"layer", p.layer},
                                   {"seed", p.seed},
                                   {"selected_epoch", p.selected_epoch},
                                   {"dtype", kBundleDtype}};
    detail::write_header_and_floats(path, kProbeMagic, header, p.matrix);
}

inline LinearProbe load_probe(const std::filesystem::path& path) {
    auto [h, blob] = detail::read_header_and_blob(path, kProbeMagic);
    LinearProbe p;
    try {
        p.kind = parse_probe_kind(h.at("kind").get<std::string>());
        p.lambda = h.at("lambda").get<double>();
        p.layer = h.at("layer").get<int>();
        p.seed = h.at("seed").get<std::uint64_t>();
        p.selected_epoch = h.at("selected_epoch").get<int>();
        if (h.at("dtype").get<std::string>() != kBundleDtype)
            throw ValidationError("dtype", "unsupported probe dtype");
        const auto k = h.at("k").get<Eigen::Index>();
        const auto kout = h.at("k_probe").get<Eigen::Index>();
        if (k <= 0 || kout <= 0) throw ValidationError("k", "dimensions must be positive");
        p.matrix = detail::floats_to_matrix(blob, kout, k, "matrix");
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError("header", e.what());
    }
    check_probe(p);
    return p;
}

}  // namespace polar
