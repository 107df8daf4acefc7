#pragma once

// Activation bundle: manifest.json + layers/layer_<l>.bin (row-major f32le,
// total_tokens x hidden_dim, no header).

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "polar_probe/error.hpp"
#include "polar_probe/treebank.hpp"

namespace polar {

inline constexpr std::string_view kBundleDtype = "f32le";

struct SentenceRecord {
    std::string id;
    std::int64_t num_tokens = 0;
    std::int64_t num_words = 0;
    std::vector<int> token_to_word;  // -1 for tokens attached to no word
    std::int64_t offset_tokens = 0;
};

struct BundleManifest {
    std::string model_name;
    std::int64_t hidden_dim = 0;
    std::vector<int> layers;
    std::string dtype{kBundleDtype};
    std::vector<SentenceRecord> sentences;

    std::int64_t total_tokens() const {
        std::int64_t end = 0;
        for (const auto& s : sentences) end = std::max(end, s.offset_tokens + s.num_tokens);
        return end;
    }
};

/// Row-major float32 matrix (tokens x hidden_dim) for one layer.
using LayerTensor = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct WordEmbeddings {
    std::string sentence_id;
    int layer = 0;
    Eigen::MatrixXd vectors;  // num_words x hidden_dim
};

inline nlohmann::json to_json(const BundleManifest& m) {
    nlohmann::json sentences = nlohmann::json::array();
    for (const auto& s : m.sentences)
        sentences.push_back({{"id", s.id},
                             {"num_tokens", s.num_tokens},
                             {"num_words", s.num_words},
                             {"token_to_word", s.token_to_word},
                             {"offset_tokens", s.offset_tokens}});
    return {{"model_name", m.model_name},
            {"hidden_dim", m.hidden_dim},
            {"layers", m.layers},
            {"dtype", m.dtype},
            {"sentences", sentences}};
}

namespace detail {

template <typename T>
T required(const nlohmann::json& j, const std::string& key, const std::string& field) {
    if (!j.contains(key)) throw ValidationError(field, "missing");
    try {
        return j.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(field, std::string("wrong type: ") + e.what());
    }
}

}  // namespace detail

inline BundleManifest manifest_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ValidationError("manifest", "not a JSON object");
    BundleManifest m;
    m.model_name = detail::required<std::string>(j, "model_name", "model_name");
    m.hidden_dim = detail::required<std::int64_t>(j, "hidden_dim", "hidden_dim");
    m.layers = detail::required<std::vector<int>>(j, "layers", "layers");
    m.dtype = detail::required<std::string>(j, "dtype", "dtype");
    if (!j.contains("sentences") || !j.at("sentences").is_array())
        throw ValidationError("sentences", "missing or not an array");
    std::size_t i = 0;
    for (const auto& js : j.at("sentences")) {
        const std::string f = "sentences[" + std::to_string(i++) + "]";
        SentenceRecord r;
        r.id = detail::required<std::string>(js, "id", f + ".id");
        r.num_tokens = detail::required<std::int64_t>(js, "num_tokens", f + ".num_tokens");
        r.num_words = detail::required<std::int64_t>(js, "num_words", f + ".num_words");
        r.token_to_word =
            detail::required<std::vector<int>>(js, "token_to_word", f + ".token_to_word");
        r.offset_tokens = detail::required<std::int64_t>(js, "offset_tokens", f + ".offset_tokens");
        m.sentences.push_back(std::move(r));
    }
    return m;
}

/// Checks manifest invariants that do not need the layer files.
inline void validate_manifest(const BundleManifest& m) {
    if (m.dtype != kBundleDtype)
        throw ValidationError("dtype", "must be \"f32le\", got \"" + m.dtype + "\"");
    if (m.hidden_dim <= 0) throw ValidationError("hidden_dim", "must be positive");
    {
        std::set<int> seen;
        for (int l : m.layers)
            if (!seen.insert(l).second)
                throw ValidationError("layers", "duplicate layer " + std::to_string(l));
    }
    std::set<std::string> ids;
    std::int64_t prev_end = 0;
    for (std::size_t i = 0; i < m.sentences.size(); ++i) {
        const auto& s = m.sentences[i];
        const std::string f = "sentences[" + std::to_string(i) + "]";
        if (!ids.insert(s.id).second) throw ValidationError(f + ".id", "duplicate id " + s.id);
        if (s.num_tokens < 0) throw ValidationError(f + ".num_tokens", "negative");
        if (s.num_words < 0) throw ValidationError(f + ".num_words", "negative");
        if (static_cast<std::int64_t>(s.token_to_word.size()) != s.num_tokens)
            throw ValidationError(f + ".token_to_word", "length differs from num_tokens");
        if (s.offset_tokens < prev_end)
            throw ValidationError(f + ".offset_tokens",
                                  "overlaps previous sentence (offset " +
                                      std::to_string(s.offset_tokens) + " < " +
                                      std::to_string(prev_end) + ")");
        prev_end = s.offset_tokens + s.num_tokens;
        int last = -1;
        for (int w : s.token_to_word) {
            if (w < -1 || w >= s.num_words)
                throw ValidationError(f + ".token_to_word",
                                      "word index " + std::to_string(w) + " out of range");
            if (w == -1) continue;
            if (w < last)
                throw ValidationError(f + ".token_to_word", "word indices must be non-decreasing");
            if (w > last + 1)
                throw ValidationError(f + ".token_to_word",
                                      "word " + std::to_string(last + 1) + " has no tokens");
            last = w;
        }
        if (last + 1 != s.num_words)
            throw ValidationError(f + ".token_to_word",
                                  "word " + std::to_string(last + 1) + " has no tokens");
    }
}

namespace detail {

inline void load_f32le(const char* bytes, float* out, std::size_t count) {
    std::memcpy(out, bytes, count * sizeof(float));
    if constexpr (std::endian::native == std::endian::big) {
        for (std::size_t i = 0; i < count; ++i) {
            std::uint32_t u;
            std::memcpy(&u, out + i, 4);
            u = __builtin_bswap32(u);
            std::memcpy(out + i, &u, 4);
        }
    }
}

inline void store_f32le(std::ostream& out, const float* data, std::size_t count) {
    if constexpr (std::endian::native == std::endian::little) {
        out.write(reinterpret_cast<const char*>(data),
                  static_cast<std::streamsize>(count * sizeof(float)));
    } else {
        for (std::size_t i = 0; i < count; ++i) {
            std::uint32_t u;
            std::memcpy(&u, data + i, 4);
            u = __builtin_bswap32(u);
            out.write(reinterpret_cast<const char*>(&u), 4);
        }
    }
}

}  // namespace detail

inline std::filesystem::path layer_path(const std::filesystem::path& dir, int layer) {
    return dir / "layers" / ("layer_" + std::to_string(layer) + ".bin");
}

/// Read-only view of a bundle directory. Layer rows are fetched on demand.
class Bundle {
public:
    static Bundle open(const std::filesystem::path& dir) {
        namespace fs = std::filesystem;
        const fs::path mpath = dir / "manifest.json";
        if (!fs::exists(mpath)) throw ValidationError("manifest.json", "missing in " + dir.string());
        std::ifstream in(mpath);
        nlohmann::json j;
        try {
            in >> j;
        } catch (const nlohmann::json::exception& e) {
            throw ValidationError("manifest.json", e.what());
        }
        Bundle b;
        b.dir_ = dir;
        b.manifest_ = manifest_from_json(j);
        validate_manifest(b.manifest_);
        const auto expected = static_cast<std::uintmax_t>(b.manifest_.total_tokens()) *
                              static_cast<std::uintmax_t>(b.manifest_.hidden_dim) * 4u;
        for (int l : b.manifest_.layers) {
            const fs::path p = layer_path(dir, l);
            const std::string field = "layers/layer_" + std::to_string(l) + ".bin";
            if (!fs::exists(p)) throw ValidationError(field, "missing");
            const auto size = fs::file_size(p);
            if (size != expected)
                throw ValidationError(field, "size " + std::to_string(size) + " bytes, expected " +
                                                 std::to_string(expected));
        }
        for (std::size_t i = 0; i < b.manifest_.sentences.size(); ++i)
            b.index_.emplace(b.manifest_.sentences[i].id, i);
        b.files_ = std::make_shared<FileCache>();
        return b;
    }

    const BundleManifest& manifest() const { return manifest_; }
    const std::filesystem::path& directory() const { return dir_; }
    bool has_sentence(const std::string& id) const { return index_.count(id) > 0; }
    bool has_layer(int layer) const {
        return std::find(manifest_.layers.begin(), manifest_.layers.end(), layer) !=
               manifest_.layers.end();
    }
    const SentenceRecord& sentence(const std::string& id) const {
        auto it = index_.find(id);
        if (it == index_.end()) throw ValidationError("sentences", "no sentence with id " + id);
        return manifest_.sentences[it->second];
    }

    /// Token rows (num_tokens x hidden_dim) of one sentence at one layer.
    LayerTensor token_rows(int layer, const std::string& id) const {
        if (!has_layer(layer))
            throw ValidationError("layers", "layer " + std::to_string(layer) + " not declared");
        const SentenceRecord& r = sentence(id);
        LayerTensor out(r.num_tokens, manifest_.hidden_dim);
        if (r.num_tokens == 0) return out;
        const std::size_t count = static_cast<std::size_t>(r.num_tokens * manifest_.hidden_dim);
        std::vector<char> buf(count * 4);
        {
            std::lock_guard lock(files_->mutex);
            std::ifstream& f = files_->get(layer_path(dir_, layer));
            f.clear();
            f.seekg(static_cast<std::streamoff>(r.offset_tokens * manifest_.hidden_dim * 4));
            f.read(buf.data(), static_cast<std::streamsize>(buf.size()));
            if (!f) throw IoError("short read from " + layer_path(dir_, layer).string());
        }
        detail::load_f32le(buf.data(), out.data(), count);
        return out;
    }

    /// Whole layer as one tensor (total_tokens x hidden_dim).
    LayerTensor layer_rows(int layer) const {
        const auto path = layer_path(dir_, layer);
        if (!has_layer(layer))
            throw ValidationError("layers", "layer " + std::to_string(layer) + " not declared");
        LayerTensor out(manifest_.total_tokens(), manifest_.hidden_dim);
        std::ifstream f(path, std::ios::binary);
        std::vector<char> buf(static_cast<std::size_t>(out.size()) * 4);
        f.read(buf.data(), static_cast<std::streamsize>(buf.size()));
        if (!f && !buf.empty()) throw IoError("short read from " + path.string());
        detail::load_f32le(buf.data(), out.data(), static_cast<std::size_t>(out.size()));
        return out;
    }

private:
    struct FileCache {
        std::mutex mutex;
        std::map<std::string, std::ifstream> open;
        std::ifstream& get(const std::filesystem::path& p) {
            auto it = open.find(p.string());
            if (it == open.end()) {
                it = open.emplace(p.string(), std::ifstream(p, std::ios::binary)).first;
                if (!it->second) throw IoError("cannot open " + p.string());
            }
            return it->second;
        }
    };

    std::filesystem::path dir_;
    BundleManifest manifest_;
    std::unordered_map<std::string, std::size_t> index_;
    std::shared_ptr<FileCache> files_;
};

inline Bundle read_bundle(const std::filesystem::path& dir) { return Bundle::open(dir); }

/// Mean of the token rows mapped to each word; tokens mapped to -1 are ignored.
inline Eigen::MatrixXd average_subwords(const LayerTensor& tokens,
                                        const std::vector<int>& token_to_word,
                                        std::int64_t num_words, const std::string& sentence_id) {
    if (static_cast<std::int64_t>(token_to_word.size()) != tokens.rows())
        throw AlignmentError("sentence " + sentence_id + ": alignment length " +
                             std::to_string(token_to_word.size()) + " != token rows " +
                             std::to_string(tokens.rows()));
    Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(num_words, tokens.cols());
    std::vector<int> count(static_cast<std::size_t>(num_words), 0);
    for (std::size_t t = 0; t < token_to_word.size(); ++t) {
        const int w = token_to_word[t];
        if (w < 0) continue;
        if (w >= num_words)
            throw AlignmentError("sentence " + sentence_id + ": token " + std::to_string(t) +
                                 " maps to word " + std::to_string(w) + " beyond num_words");
        sum.row(w) += tokens.row(static_cast<Eigen::Index>(t)).cast<double>();
        ++count[static_cast<std::size_t>(w)];
    }
    for (std::int64_t w = 0; w < num_words; ++w) {
        if (count[static_cast<std::size_t>(w)] == 0)
            throw AlignmentError("sentence " + sentence_id + ": word " + std::to_string(w) +
                                 " has no mapped tokens");
        sum.row(w) /= count[static_cast<std::size_t>(w)];
    }
    if (!sum.allFinite())
        throw NumericError("sentence " + sentence_id + ": non-finite word embedding");
    return sum;
}

inline WordEmbeddings word_embeddings(const Bundle& bundle, int layer,
                                      const std::string& sentence_id) {
    const SentenceRecord& r = bundle.sentence(sentence_id);
    return {sentence_id, layer,
            average_subwords(bundle.token_rows(layer, sentence_id), r.token_to_word, r.num_words,
                             sentence_id)};
}

/// Writes manifest.json and one layer file per declared layer.
/// `layers[i]` holds the rows for `manifest.layers[i]`.
inline void write_bundle(const BundleManifest& manifest, const std::vector<LayerTensor>& layers,
                         const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    validate_manifest(manifest);
    if (layers.size() != manifest.layers.size())
        throw ValidationError("layers", std::to_string(layers.size()) + " tensors for " +
                                            std::to_string(manifest.layers.size()) +
                                            " declared layers");
    const std::int64_t rows = manifest.total_tokens();
    for (std::size_t i = 0; i < layers.size(); ++i)
        if (layers[i].rows() != rows || layers[i].cols() != manifest.hidden_dim)
            throw ValidationError("layers/layer_" + std::to_string(manifest.layers[i]) + ".bin",
                                  "tensor is " + std::to_string(layers[i].rows()) + "x" +
                                      std::to_string(layers[i].cols()) + ", expected " +
                                      std::to_string(rows) + "x" +
                                      std::to_string(manifest.hidden_dim));
    std::error_code ec;
    fs::create_directories(dir / "layers", ec);
    if (ec) throw IoError("cannot create " + (dir / "layers").string() + ": " + ec.message());
    {
        std::ofstream m(dir / "manifest.json");
        if (!m) throw IoError("cannot write " + (dir / "manifest.json").string());
        m << to_json(manifest).dump(1) << '\n';
        if (!m) throw IoError("write failed for " + (dir / "manifest.json").string());
    }
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const fs::path p = layer_path(dir, manifest.layers[i]);
        std::ofstream f(p, std::ios::binary);
        if (!f) throw IoError("cannot write " + p.string());
        detail::store_f32le(f, layers[i].data(), static_cast<std::size_t>(layers[i].size()));
        if (!f) throw IoError("write failed for " + p.string());
    }
}

struct CoverageIssue {
    std::string sentence_id;
    std::string problem;
};

/// Treebank/bundle cross-check: every sentence present with matching word count.
inline std::vector<CoverageIssue> cross_validate(const Bundle& bundle,
                                                 const std::vector<DepSentence>& sentences) {
    std::vector<CoverageIssue> issues;
    for (const auto& s : sentences) {
        if (!bundle.has_sentence(s.id)) {
            issues.push_back({s.id, "missing from bundle"});
            continue;
        }
        const auto& r = bundle.sentence(s.id);
        if (r.num_words != static_cast<std::int64_t>(s.size()))
            issues.push_back({s.id, "word count " + std::to_string(r.num_words) +
                                        " in bundle vs " + std::to_string(s.size()) +
                                        " in treebank"});
    }
    return issues;
}

}  // namespace polar
