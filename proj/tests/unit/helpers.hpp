#pragma once

#include <unistd.h>

#include <filesystem>
#include <string>
#include <vector>

#include "polar_probe/rng.hpp"
#include "polar_probe/treebank.hpp"

namespace testutil {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        static int counter = 0;
        path_ = std::filesystem::temp_directory_path() /
                ("polarprobe-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& s) const { return path_ / s; }

private:
    std::filesystem::path path_;
};

// Sentence from a 1-based head vector (0 = root); labels default to "dep".
inline polar::DepSentence sentence_from_heads(const std::vector<int>& heads,
                                              const std::vector<std::string>& labels = {},
                                              const std::string& id = "s") {
    polar::DepSentence s;
    s.id = id;
    for (std::size_t i = 0; i < heads.size(); ++i) {
        polar::Word w;
        w.index = static_cast<int>(i) + 1;
        w.form = "w" + std::to_string(i + 1);
        w.upos = "NOUN";
        w.head = heads[i];
        w.deprel = heads[i] == 0 ? "root" : (labels.empty() ? "dep" : labels[i]);
        s.text += (i ? " " : "") + w.form;
        s.words.push_back(w);
    }
    return s;
}

// Uniform random recursive tree on n words, 1-based heads.
inline std::vector<int> random_heads(int n, polar::Rng& rng) {
    std::vector<int> order(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i + 1;
    rng.shuffle(order);
    std::vector<int> heads(static_cast<std::size_t>(n), 0);
    for (int p = 1; p < n; ++p)
        heads[static_cast<std::size_t>(order[static_cast<std::size_t>(p)] - 1)] =
            order[rng.below(static_cast<std::uint64_t>(p))];
    return heads;
}

}  // namespace testutil

#include "polar_probe/bundle.hpp"

namespace testutil {

struct RandomBundle {
    polar::BundleManifest manifest;
    std::vector<polar::LayerTensor> layers;
};

// Random shapes: 0-5 sentences, 1-4 words each, 1-3 tokens per word, optional
// marker tokens mapped to -1, gaps allowed between sentence offsets.
inline RandomBundle random_bundle(polar::Rng& rng) {
    RandomBundle b;
    b.manifest.model_name = "random";
    b.manifest.hidden_dim = 1 + static_cast<std::int64_t>(rng.below(7));
    const int nl = static_cast<int>(rng.below(4));
    for (int l = 0; l < nl; ++l) b.manifest.layers.push_back(l * 3 + static_cast<int>(rng.below(3)));
    const int ns = static_cast<int>(rng.below(6));
    std::int64_t offset = 0;
    for (int s = 0; s < ns; ++s) {
        polar::SentenceRecord r;
        r.id = "r" + std::to_string(s);
        r.num_words = 1 + static_cast<std::int64_t>(rng.below(4));
        if (rng.below(2)) r.token_to_word.push_back(-1);
        for (int w = 0; w < r.num_words; ++w) {
            const int pieces = 1 + static_cast<int>(rng.below(3));
            for (int p = 0; p < pieces; ++p) r.token_to_word.push_back(w);
        }
        if (rng.below(2)) r.token_to_word.push_back(-1);
        r.num_tokens = static_cast<std::int64_t>(r.token_to_word.size());
        offset += static_cast<std::int64_t>(rng.below(2));  // optional gap
        r.offset_tokens = offset;
        offset += r.num_tokens;
        b.manifest.sentences.push_back(r);
    }
    for (std::size_t l = 0; l < b.manifest.layers.size(); ++l) {
        polar::LayerTensor t(b.manifest.total_tokens(), b.manifest.hidden_dim);
        for (Eigen::Index i = 0; i < t.size(); ++i) {
            // include signed zeros, subnormals and large magnitudes
            const auto pick = rng.below(10);
            float v = static_cast<float>(rng.normal() * 100.0);
            if (pick == 0) v = -0.0f;
            if (pick == 1) v = 1e-40f;
            if (pick == 2) v = 3.0e38f;
            t.data()[i] = v;
        }
        b.layers.push_back(std::move(t));
    }
    return b;
}

}  // namespace testutil
