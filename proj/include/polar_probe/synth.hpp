#pragma once

// Synthetic data: planted polar-code activation bundles with known ground
// truth, and the templated Short / Relative-clause / Long-nested sentences.

#include <algorithm>
#include <array>
#include <cstdio>
#include <functional>
#include <cstdint>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "polar_probe/bundle.hpp"
#include "polar_probe/error.hpp"
#include "polar_probe/rng.hpp"
#include "polar_probe/treebank.hpp"

namespace polar {

struct PlantedSpec {
    int num_labels = 10;
    int code_dim = 32;
    int ambient_dim = 256;  // k
    double edge_scale = 1.0;
    double noise_sigma = 0.05;
    double distractor_sigma = 0.8;  // spread of the k - code_dim distractor coordinates
    int min_length = 8;
    int max_length = 20;
    int train_count = 500;
    int validation_count = 100;
    int test_count = 100;
    int num_layers = 1;
    /// Replace the code with i.i.d. Gaussian word vectors (trees and labels unchanged).
    bool random_activations = false;
    /// Use each label at most once per sentence (needs num_labels >= max_length - 1).
    bool distinct_labels = false;
    std::uint64_t seed = 0;

    void validate() const {
        if (num_labels < 2) throw ConfigError("num_labels must be at least 2");
        if (code_dim < num_labels)
            throw ConfigError("code_dim must be >= num_labels for orthonormal label directions");
        if (code_dim > ambient_dim) throw ConfigError("code_dim must not exceed ambient_dim");
        if (!(edge_scale > 0.0)) throw ConfigError("edge_scale must be positive");
        if (noise_sigma < 0.0 || distractor_sigma < 0.0) throw ConfigError("noise must be >= 0");
        if (min_length < 1 || max_length < min_length) throw ConfigError("bad sentence length range");
        if (train_count < 0 || validation_count < 0 || test_count < 0)
            throw ConfigError("split counts must be non-negative");
        if (num_layers < 1) throw ConfigError("num_layers must be positive");
        if (distinct_labels && num_labels < max_length - 1)
            throw ConfigError("distinct_labels needs num_labels >= max_length - 1");
    }
};

inline PlantedSpec planted_spec_from_json(const nlohmann::json& j, PlantedSpec s = {}) {
    auto get = [&](const char* key, auto& field) {
        if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
    };
    get("num_labels", s.num_labels);
    get("code_dim", s.code_dim);
    get("ambient_dim", s.ambient_dim);
    get("edge_scale", s.edge_scale);
    get("noise_sigma", s.noise_sigma);
    get("distractor_sigma", s.distractor_sigma);
    get("min_length", s.min_length);
    get("max_length", s.max_length);
    get("train_count", s.train_count);
    get("validation_count", s.validation_count);
    get("test_count", s.test_count);
    get("num_layers", s.num_layers);
    get("random_activations", s.random_activations);
    get("distinct_labels", s.distinct_labels);
    get("seed", s.seed);
    return s;
}

inline nlohmann::json to_json(const PlantedSpec& s) {
    return {{"num_labels", s.num_labels},       {"code_dim", s.code_dim},
            {"ambient_dim", s.ambient_dim},     {"edge_scale", s.edge_scale},
            {"noise_sigma", s.noise_sigma},     {"distractor_sigma", s.distractor_sigma},
            {"min_length", s.min_length},       {"max_length", s.max_length},
            {"train_count", s.train_count},     {"validation_count", s.validation_count},
            {"test_count", s.test_count},       {"num_layers", s.num_layers},
            {"random_activations", s.random_activations},
            {"distinct_labels", s.distinct_labels}, {"seed", s.seed}};
}

/// Label names: common UD relations first, then generic names.
inline std::vector<std::string> planted_label_names(int n) {
    static const std::array<const char*, 16> ud = {
        "nsubj", "obj",  "det",  "amod", "advmod", "case", "nmod",  "obl",
        "aux",   "mark", "conj", "cc",   "compound", "iobj", "xcomp", "ccomp"};
    std::vector<std::string> out;
    for (int i = 0; i < n; ++i)
        out.push_back(i < static_cast<int>(ud.size()) ? ud[static_cast<std::size_t>(i)]
                                                      : "rel" + std::to_string(i));
    return out;
}

struct PlantedData {
    Splits splits;
    BundleManifest manifest;
    std::vector<LayerTensor> layers;
    Eigen::MatrixXd embedding;         // k x k orthogonal; first code_dim columns span the code
    Eigen::MatrixXd label_directions;  // code_dim x num_labels, orthonormal columns
    std::vector<std::string> labels;   // column order of label_directions

    /// Maps an ambient vector to code coordinates (inverse embedding, code part).
    Eigen::VectorXd to_code(const Eigen::VectorXd& ambient) const {
        return embedding.leftCols(label_directions.rows()).transpose() * ambient;
    }
};

namespace detail {

/// Haar-distributed orthogonal matrix: QR of a Gaussian matrix with sign fix.
inline Eigen::MatrixXd random_orthogonal(Eigen::Index n, Rng& rng) {
    Eigen::MatrixXd g(n, n);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < n; ++j) g(i, j) = rng.normal();
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
    Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(n, n);
    const Eigen::MatrixXd r = qr.matrixQR().triangularView<Eigen::Upper>();
    for (Eigen::Index i = 0; i < n; ++i)
        if (r(i, i) < 0) q.col(i) *= -1.0;
    return q;
}

// Random recursive tree (0-based heads, -1 = root). A label must differ from its
// parent's, its siblings' and its parent's siblings', so words at tree distance 2
// or 3 never collapse onto each other. Longer paths can still cancel (equal
// labels on both sides of the lowest common ancestor). With `distinct`, every
// label is used at most once per sentence and code distances equal tree
// distances exactly. The sibling constraints are relaxed only when no parent can
// take another child (tiny label sets).
inline void random_labeled_tree(int n, int num_labels, Rng& rng, std::vector<int>& head,
                                std::vector<int>& label, bool distinct = false) {
    head.assign(static_cast<std::size_t>(n), -1);
    label.assign(static_cast<std::size_t>(n), -1);
    std::vector<int> order(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
    rng.shuffle(order);
    std::vector<std::vector<int>> child_labels(static_cast<std::size_t>(n));
    auto has = [](const std::vector<int>& v, int c) { return std::find(v.begin(), v.end(), c) != v.end(); };
    for (int pos = 1; pos < n; ++pos) {
        const int w = order[static_cast<std::size_t>(pos)];
        int parent = -1;
        std::vector<int> allowed;
        for (int attempt = 0; allowed.empty(); ++attempt) {
            const int strictness = attempt < 64 ? 2 : attempt < 128 ? 1 : 0;
            parent = order[rng.below(static_cast<std::uint64_t>(pos))];
            const auto p = static_cast<std::size_t>(parent);
            const int grand = head[p];
            allowed.clear();
            for (int c = 0; c < num_labels; ++c) {
                if (distinct && has(label, c)) continue;
                if (strictness >= 1 && (c == label[p] || has(child_labels[p], c))) continue;
                if (strictness >= 2 && grand >= 0 && has(child_labels[static_cast<std::size_t>(grand)], c)) continue;
                allowed.push_back(c);
            }
        }
        head[static_cast<std::size_t>(w)] = parent;
        label[static_cast<std::size_t>(w)] = allowed[rng.below(allowed.size())];
        child_labels[static_cast<std::size_t>(parent)].push_back(label[static_cast<std::size_t>(w)]);
    }
}

}  // namespace detail

/// Planted polar code. Each word's code position is the root offset minus
/// edge_scale * u_label summed along its root path, so h_head - h_dep =
/// edge_scale * u_label exactly before noise. Code and distractor coordinates
/// are rotated into the ambient space by a fixed random orthogonal map, then
/// isotropic noise is added. Sentences start with a marker token mapped to -1.
inline PlantedData generate_planted(const PlantedSpec& spec) {
    spec.validate();
    Rng rng(spec.seed);
    Rng geometry_rng = rng.fork(1);
    Rng tree_rng = rng.fork(2);
    Rng noise_rng = rng.fork(3);

    PlantedData out;
    const int k = spec.ambient_dim;
    const int cd = spec.code_dim;
    out.labels = planted_label_names(spec.num_labels);
    // label order in the treebank inventory is sorted; direction columns follow `labels`
    out.embedding = detail::random_orthogonal(k, geometry_rng);
    out.label_directions = detail::random_orthogonal(cd, geometry_rng).leftCols(spec.num_labels);

    struct Planned {
        DepSentence sentence;
        Eigen::MatrixXd code;  // n x code_dim
    };
    std::vector<Planned> planned;
    auto make_split = [&](const std::string& prefix, int count, std::vector<DepSentence>& dst) {
        for (int si = 0; si < count; ++si) {
            const int n = spec.min_length +
                          static_cast<int>(tree_rng.below(
                              static_cast<std::uint64_t>(spec.max_length - spec.min_length + 1)));
            std::vector<int> head, label;
            detail::random_labeled_tree(n, spec.num_labels, tree_rng, head, label, spec.distinct_labels);
            Planned p;
            DepSentence& s = p.sentence;
            char buf[32];
            std::snprintf(buf, sizeof buf, "%s-%04d", prefix.c_str(), si + 1);
            s.id = buf;
            for (int i = 0; i < n; ++i) {
                Word w;
                w.index = i + 1;
                w.form = "w" + std::to_string(i + 1);
                w.lemma = w.form;
                w.upos = head[static_cast<std::size_t>(i)] < 0 ? "VERB" : "NOUN";
                w.head = head[static_cast<std::size_t>(i)] + 1;
                w.deprel = head[static_cast<std::size_t>(i)] < 0
                               ? std::string(kRootLabel)
                               : out.labels[static_cast<std::size_t>(label[static_cast<std::size_t>(i)])];
                s.words.push_back(std::move(w));
                s.text += (i ? " " : "") + s.words.back().form;
            }
            // code positions by walking down from the root
            p.code = Eigen::MatrixXd::Zero(n, cd);
            Eigen::VectorXd origin(cd);
            for (int d = 0; d < cd; ++d) origin[d] = tree_rng.normal();
            std::vector<bool> done(static_cast<std::size_t>(n), false);
            std::function<void(int)> place = [&](int w) {
                if (done[static_cast<std::size_t>(w)]) return;
                const int h = head[static_cast<std::size_t>(w)];
                if (h < 0) {
                    p.code.row(w) = origin.transpose();
                } else {
                    place(h);
                    p.code.row(w) = p.code.row(h) -
                                    spec.edge_scale *
                                        out.label_directions.col(label[static_cast<std::size_t>(w)])
                                            .transpose();
                }
                done[static_cast<std::size_t>(w)] = true;
            };
            for (int w = 0; w < n; ++w) place(w);
            validate_tree(s);
            dst.push_back(s);
            planned.push_back(std::move(p));
        }
    };
    make_split("train", spec.train_count, out.splits.train);
    make_split("dev", spec.validation_count, out.splits.validation);
    make_split("test", spec.test_count, out.splits.test);

    BundleManifest& m = out.manifest;
    m.model_name = spec.random_activations ? "planted-polar-code/random-activations"
                                           : "planted-polar-code";
    m.hidden_dim = k;
    for (int l = 0; l < spec.num_layers; ++l) m.layers.push_back(l);
    std::int64_t offset = 0;
    for (const auto& p : planned) {
        SentenceRecord r;
        r.id = p.sentence.id;
        r.num_words = static_cast<std::int64_t>(p.sentence.size());
        r.num_tokens = r.num_words + 1;
        r.token_to_word.push_back(-1);
        for (int w = 0; w < r.num_words; ++w) r.token_to_word.push_back(w);
        r.offset_tokens = offset;
        offset += r.num_tokens;
        m.sentences.push_back(std::move(r));
    }

    for (int l = 0; l < spec.num_layers; ++l) {
        LayerTensor t(offset, k);
        std::int64_t row = 0;
        for (const auto& p : planned) {
            Eigen::VectorXd latent(k);
            // marker token
            for (int d = 0; d < k; ++d) latent[d] = noise_rng.normal();
            t.row(row++) = (out.embedding * latent).cast<float>().transpose();
            for (Eigen::Index w = 0; w < p.code.rows(); ++w) {
                Eigen::VectorXd ambient(k);
                if (spec.random_activations) {
                    for (int d = 0; d < k; ++d) ambient[d] = noise_rng.normal();
                } else {
                    latent.head(cd) = p.code.row(w).transpose();
                    for (int d = cd; d < k; ++d) latent[d] = spec.distractor_sigma * noise_rng.normal();
                    ambient = out.embedding * latent;
                    for (int d = 0; d < k; ++d) ambient[d] += spec.noise_sigma * noise_rng.normal();
                }
                t.row(row++) = ambient.cast<float>().transpose();
            }
        }
        out.layers.push_back(std::move(t));
    }
    return out;
}

/// Writes train/dev/test CoNLL-U files and the bundle under `dir`.
inline void write_planted(const PlantedData& data, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    write_conllu_file((dir / "train.conllu").string(), data.splits.train);
    write_conllu_file((dir / "dev.conllu").string(), data.splits.validation);
    write_conllu_file((dir / "test.conllu").string(), data.splits.test);
    write_bundle(data.manifest, data.layers, dir / "bundle");
}

// ---------------------------------------------------------------------------
// Controlled sentences.

enum class ControlledLevel { short_sentence, relative_clause, long_nested };

inline std::string_view to_string(ControlledLevel l) {
    switch (l) {
        case ControlledLevel::short_sentence: return "short";
        case ControlledLevel::relative_clause: return "relative_clause";
        case ControlledLevel::long_nested: return "long_nested";
    }
    return "?";
}

struct ControlledLexicon {
    std::vector<std::string> nouns;        // subjects / objects ("book", "teacher")
    std::vector<std::string> verbs;        // transitive, third person singular ("fascinates")
    std::vector<std::string> prep_objects;  // objects of "besides" ("car")
};

inline ControlledLexicon default_lexicon() {
    return {{"book", "teacher", "boy", "girl", "doctor", "painting", "lawyer", "student", "farmer",
             "singer", "letter", "artist"},
            {"fascinates", "reads", "likes", "sees", "admires", "describes", "watches", "follows"},
            {"car", "house", "tree", "window", "lake", "door"}};
}

inline ControlledLexicon lexicon_from_json(const nlohmann::json& j) {
    ControlledLexicon lex;
    lex.nouns = j.at("nouns").get<std::vector<std::string>>();
    lex.verbs = j.at("verbs").get<std::vector<std::string>>();
    lex.prep_objects = j.at("prep_objects").get<std::vector<std::string>>();
    return lex;
}

struct ControlledSpec {
    ControlledLexicon lexicon = default_lexicon();
    int count = 100;
    std::vector<ControlledLevel> levels = {ControlledLevel::short_sentence,
                                           ControlledLevel::relative_clause,
                                           ControlledLevel::long_nested};
    std::uint64_t seed = 0;
};

namespace detail {

struct TemplateWord {
    std::string form;
    std::string upos;
    int head;
    std::string deprel;
};

/// Short:            The N1 V1 my N2
/// Relative clause:  The N1 that the N3 V2 V1 my N2
/// Long-nested:      The N1 that the N3 besides the N4 V2 V1 my N2
inline std::vector<TemplateWord> instantiate(ControlledLevel level, const std::string& n1,
                                             const std::string& v1, const std::string& n2,
                                             const std::string& n3, const std::string& v2,
                                             const std::string& n4) {
    switch (level) {
        case ControlledLevel::short_sentence:
            return {{"The", "DET", 2, "det"},
                    {n1, "NOUN", 3, "nsubj"},
                    {v1, "VERB", 0, "root"},
                    {"my", "PRON", 5, "nmod:poss"},
                    {n2, "NOUN", 3, "obj"}};
        case ControlledLevel::relative_clause:
            return {{"The", "DET", 2, "det"},         {n1, "NOUN", 7, "nsubj"},
                    {"that", "PRON", 6, "obj"},       {"the", "DET", 5, "det"},
                    {n3, "NOUN", 6, "nsubj"},         {v2, "VERB", 2, "acl:relcl"},
                    {v1, "VERB", 0, "root"},          {"my", "PRON", 9, "nmod:poss"},
                    {n2, "NOUN", 7, "obj"}};
        case ControlledLevel::long_nested:
            return {{"The", "DET", 2, "det"},         {n1, "NOUN", 10, "nsubj"},
                    {"that", "PRON", 9, "obj"},       {"the", "DET", 5, "det"},
                    {n3, "NOUN", 9, "nsubj"},         {"besides", "ADP", 8, "case"},
                    {"the", "DET", 8, "det"},         {n4, "NOUN", 5, "nmod"},
                    {v2, "VERB", 2, "acl:relcl"},     {v1, "VERB", 0, "root"},
                    {"my", "PRON", 12, "nmod:poss"},  {n2, "NOUN", 10, "obj"}};
    }
    return {};
}

}  // namespace detail

/// `count` distinct sentences per level. Within a sentence the nouns are distinct,
/// and so are the two verbs.
inline std::vector<std::pair<ControlledLevel, std::vector<DepSentence>>> generate_controlled(
    const ControlledSpec& spec) {
    const auto& lex = spec.lexicon;
    if (lex.nouns.empty() || lex.verbs.empty() || lex.prep_objects.empty())
        throw ConfigError("controlled lexicon lists must be non-empty");
    if (spec.count < 0) throw ConfigError("controlled count must be non-negative");
    Rng rng(spec.seed);
    std::vector<std::pair<ControlledLevel, std::vector<DepSentence>>> out;
    for (ControlledLevel level : spec.levels) {
        const bool clause = level != ControlledLevel::short_sentence;
        const bool nested = level == ControlledLevel::long_nested;
        const std::uint64_t nn = lex.nouns.size();
        const std::uint64_t nv = lex.verbs.size();
        // number of distinct tuples this level can produce
        std::uint64_t capacity = nn * (nn > 0 ? nn - 1 : 0) * nv;
        if (clause) capacity *= (nn > 2 ? nn - 2 : 0) * (nv > 1 ? nv - 1 : 0);
        if (nested) capacity *= lex.prep_objects.size();
        if (capacity < static_cast<std::uint64_t>(spec.count))
            throw ConfigError("lexicon supports only " + std::to_string(capacity) + " distinct " +
                              std::string(to_string(level)) + " sentences, " +
                              std::to_string(spec.count) + " requested");
        std::set<std::string> seen;
        std::vector<DepSentence> sentences;
        while (static_cast<int>(sentences.size()) < spec.count) {
            std::vector<std::uint64_t> noun_pick = sample_without_replacement(rng, nn, clause ? 3 : 2);
            rng.shuffle(noun_pick);
            std::vector<std::uint64_t> verb_pick = sample_without_replacement(rng, nv, clause ? 2 : 1);
            rng.shuffle(verb_pick);
            const std::string& n1 = lex.nouns[noun_pick[0]];
            const std::string& n2 = lex.nouns[noun_pick[1]];
            const std::string n3 = clause ? lex.nouns[noun_pick[2]] : "";
            const std::string& v1 = lex.verbs[verb_pick[0]];
            const std::string v2 = clause ? lex.verbs[verb_pick[1]] : "";
            const std::string n4 = nested ? lex.prep_objects[rng.below(lex.prep_objects.size())] : "";
            const auto words = detail::instantiate(level, n1, v1, n2, n3, v2, n4);
            DepSentence s;
            for (std::size_t i = 0; i < words.size(); ++i) {
                Word w;
                w.index = static_cast<int>(i) + 1;
                w.form = words[i].form;
                w.upos = words[i].upos;
                w.head = words[i].head;
                w.deprel = words[i].deprel;
                s.text += (i ? " " : "") + w.form;
                s.words.push_back(std::move(w));
            }
            if (!seen.insert(s.text).second) continue;
            char buf[48];
            std::snprintf(buf, sizeof buf, "%s-%03zu", std::string(to_string(level)).c_str(),
                          sentences.size() + 1);
            s.id = buf;
            validate_tree(s);
            sentences.push_back(std::move(s));
        }
        out.emplace_back(level, std::move(sentences));
    }
    return out;
}

}  // namespace polar
