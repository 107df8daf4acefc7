#pragma once

// CoNLL-U ingestion, sentence filtering and tree distances.

#include <algorithm>
#include <cstddef>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <queue>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "polar_probe/error.hpp"

namespace polar {

inline constexpr std::string_view kRootLabel = "root";
inline constexpr std::string_view kPunctTag = "PUNCT";

struct Word {
    int index = 0;  // 1-based
    std::string form;
    std::string upos;
    int head = 0;  // 0 = root
    std::string deprel;
    // columns carried through for faithful serialization
    std::string lemma = "_";
    std::string xpos = "_";
    std::string feats = "_";
    std::string deps = "_";
    std::string misc = "_";
};

struct DepSentence {
    std::string id;
    std::vector<Word> words;
    std::string text;
    std::vector<std::string> comments;  // raw comment lines, without the leading '#'

    std::size_t size() const { return words.size(); }
    const Word& word(int index) const { return words.at(static_cast<std::size_t>(index - 1)); }
    int root() const {
        for (const auto& w : words)
            if (w.head == 0) return w.index;
        return 0;
    }
};

/// A labeled directed gold edge, 1-based word indices.
struct GoldEdge {
    int head;
    int dep;
    std::string label;
};

/// Non-root edges of the sentence in dependent order.
inline std::vector<GoldEdge> gold_edges(const DepSentence& s) {
    std::vector<GoldEdge> out;
    out.reserve(s.size());
    for (const auto& w : s.words)
        if (w.head != 0) out.push_back({w.head, w.index, w.deprel});
    return out;
}

/// Throws TreeError unless heads form a single-rooted tree over the words.
inline void validate_tree(const DepSentence& s) {
    const int n = static_cast<int>(s.size());
    int roots = 0;
    for (int i = 0; i < n; ++i) {
        const Word& w = s.words[static_cast<std::size_t>(i)];
        if (w.index != i + 1)
            throw TreeError(s.id, "word indices must be 1..n in order (found " +
                                      std::to_string(w.index) + " at position " +
                                      std::to_string(i + 1) + ")");
        if (w.head < 0 || w.head > n)
            throw TreeError(s.id, "head " + std::to_string(w.head) + " of word " +
                                      std::to_string(w.index) + " out of range");
        if (w.head == w.index)
            throw TreeError(s.id, "word " + std::to_string(w.index) + " heads itself");
        if (w.head == 0) ++roots;
    }
    if (n > 0 && roots != 1)
        throw TreeError(s.id, "expected exactly one root, found " + std::to_string(roots));
    // every word must reach the root within n steps
    std::vector<int> state(static_cast<std::size_t>(n) + 1, 0);  // 0 unknown, 1 visiting, 2 ok
    for (int start = 1; start <= n; ++start) {
        std::vector<int> path;
        int v = start;
        while (v != 0 && state[static_cast<std::size_t>(v)] == 0) {
            state[static_cast<std::size_t>(v)] = 1;
            path.push_back(v);
            v = s.words[static_cast<std::size_t>(v - 1)].head;
        }
        if (v != 0 && state[static_cast<std::size_t>(v)] == 1)
            throw TreeError(s.id, "cyclic head assignment through word " + std::to_string(v));
        for (int p : path) state[static_cast<std::size_t>(p)] = 2;
    }
}

namespace detail {

inline std::vector<std::string_view> split_tabs(std::string_view line) {
    std::vector<std::string_view> cols;
    std::size_t pos = 0;
    while (true) {
        const std::size_t tab = line.find('\t', pos);
        cols.push_back(line.substr(pos, tab == std::string_view::npos ? std::string_view::npos
                                                                      : tab - pos));
        if (tab == std::string_view::npos) break;
        pos = tab + 1;
    }
    return cols;
}

inline bool parse_int(std::string_view s, int& out) {
    if (s.empty()) return false;
    int v = 0;
    for (char c : s) {
        if (c < '0' || c > '9') return false;
        v = v * 10 + (c - '0');
    }
    out = v;
    return true;
}

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r'))
        s.remove_suffix(1);
    return s;
}

}  // namespace detail

/// Parses CoNLL-U text. Multiword-token ranges and empty nodes are skipped.
/// Sentences without a `# sent_id` comment get `<id_prefix><ordinal>`.
inline std::vector<DepSentence> parse_conllu(std::istream& in, std::string_view id_prefix = "sent") {
    std::vector<DepSentence> out;
    DepSentence cur;
    bool open = false;
    std::size_t lineno = 0;
    std::size_t first_line = 0;
    std::string line;

    auto flush = [&] {
        if (!open) return;
        if (cur.words.empty())
            throw ParseError("sentence without word lines", first_line);
        if (cur.id.empty()) cur.id = std::string(id_prefix) + std::to_string(out.size() + 1);
        validate_tree(cur);
        out.push_back(std::move(cur));
        cur = DepSentence{};
        open = false;
    };

    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (lineno == 1 && line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0)
            line.erase(0, 3);
        if (detail::trim(line).empty()) {
            flush();
            continue;
        }
        if (!open) first_line = lineno;
        open = true;
        if (line[0] == '#') {
            std::string body = line.substr(1);
            std::string_view t = detail::trim(body);
            auto value_of = [&](std::string_view key) -> std::optional<std::string> {
                if (t.substr(0, key.size()) != key) return std::nullopt;
                std::string_view rest = detail::trim(t.substr(key.size()));
                if (rest.empty() || rest.front() != '=') return std::nullopt;
                return std::string(detail::trim(rest.substr(1)));
            };
            if (auto v = value_of("sent_id")) cur.id = *v;
            else if (auto v2 = value_of("text")) cur.text = *v2;
            cur.comments.push_back(std::move(body));
            continue;
        }
        auto cols = detail::split_tabs(line);
        if (cols.size() != 10)
            throw ParseError("expected 10 tab-separated columns, found " +
                                 std::to_string(cols.size()),
                             lineno);
        const std::string_view id = cols[0];
        if (id.find('-') != std::string_view::npos || id.find('.') != std::string_view::npos)
            continue;  // multiword range or empty node
        Word w;
        if (!detail::parse_int(id, w.index) || w.index < 1)
            throw ParseError("invalid word id '" + std::string(id) + "'", lineno);
        if (!detail::parse_int(cols[6], w.head))
            throw ParseError("invalid head '" + std::string(cols[6]) + "'", lineno);
        if (w.index != static_cast<int>(cur.words.size()) + 1)
            throw ParseError("word id " + std::to_string(w.index) + " out of sequence", lineno);
        w.form = cols[1];
        w.lemma = cols[2];
        w.upos = cols[3];
        w.xpos = cols[4];
        w.feats = cols[5];
        w.deprel = cols[7];
        w.deps = cols[8];
        w.misc = cols[9];
        cur.words.push_back(std::move(w));
    }
    flush();
    return out;
}

inline std::vector<DepSentence> parse_conllu_string(std::string_view text,
                                                   std::string_view id_prefix = "sent") {
    std::istringstream in{std::string(text)};
    return parse_conllu(in, id_prefix);
}

inline std::vector<DepSentence> read_conllu_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    try {
        return parse_conllu(in);
    } catch (const ParseError& e) {
        throw ParseError(path + ": " + e.what());
    }
}

inline void write_conllu(std::ostream& out, const std::vector<DepSentence>& sentences) {
    for (const auto& s : sentences) {
        bool has_id = false, has_text = false;
        for (const auto& c : s.comments) {
            std::string_view t = detail::trim(c);
            has_id = has_id || t.substr(0, 7) == "sent_id";
            has_text = has_text || t.substr(0, 4) == "text";
        }
        if (!has_id) out << "# sent_id = " << s.id << '\n';
        if (!has_text && !s.text.empty()) out << "# text = " << s.text << '\n';
        for (const auto& c : s.comments) out << '#' << c << '\n';
        for (const auto& w : s.words) {
            out << w.index << '\t' << w.form << '\t' << w.lemma << '\t' << w.upos << '\t'
                << w.xpos << '\t' << w.feats << '\t' << w.head << '\t' << w.deprel << '\t'
                << w.deps << '\t' << w.misc << '\n';
        }
        out << '\n';
    }
}

inline void write_conllu_file(const std::string& path, const std::vector<DepSentence>& sentences) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path);
    write_conllu(out, sentences);
    if (!out) throw IoError("write failed for " + path);
}

/// URL rule: contains "http://", "https://" or "www.".
inline bool looks_like_url(std::string_view form) {
    return form.find("http://") != std::string_view::npos ||
           form.find("https://") != std::string_view::npos ||
           form.find("www.") != std::string_view::npos;
}

/// Email rule: some '@' with a non-empty local part before it and a domain after it
/// that contains a '.'.
inline bool looks_like_email(std::string_view form) {
    for (std::size_t at = form.find('@'); at != std::string_view::npos;
         at = form.find('@', at + 1)) {
        const std::string_view domain = form.substr(at + 1);
        if (at > 0 && !domain.empty() && domain.find('.') != std::string_view::npos) return true;
    }
    return false;
}

inline bool has_web_address(const DepSentence& s) {
    return std::any_of(s.words.begin(), s.words.end(), [](const Word& w) {
        return looks_like_url(w.form) || looks_like_email(w.form);
    });
}

/// Drops sentences containing a URL or email word form; order preserved.
inline std::vector<DepSentence> filter_sentences(const std::vector<DepSentence>& sentences) {
    std::vector<DepSentence> out;
    out.reserve(sentences.size());
    for (const auto& s : sentences)
        if (!has_web_address(s)) out.push_back(s);
    return out;
}

/// Symmetric n x n path lengths, 0-based positions (word index - 1).
class TreeDistanceTable {
public:
    TreeDistanceTable() = default;
    explicit TreeDistanceTable(std::size_t n) : n_(n), d_(n * n, 0) {}

    std::size_t size() const { return n_; }
    int operator()(std::size_t i, std::size_t j) const { return d_[i * n_ + j]; }
    int& at(std::size_t i, std::size_t j) { return d_[i * n_ + j]; }

private:
    std::size_t n_ = 0;
    std::vector<int> d_;
};

/// Undirected path lengths between all word pairs (BFS from every word).
inline TreeDistanceTable tree_distances(const DepSentence& s) {
    const std::size_t n = s.size();
    std::vector<std::vector<std::size_t>> adj(n);
    for (const auto& w : s.words) {
        if (w.head == 0) continue;
        const auto a = static_cast<std::size_t>(w.index - 1);
        const auto b = static_cast<std::size_t>(w.head - 1);
        adj[a].push_back(b);
        adj[b].push_back(a);
    }
    TreeDistanceTable t(n);
    std::vector<int> dist(n);
    for (std::size_t src = 0; src < n; ++src) {
        std::fill(dist.begin(), dist.end(), -1);
        std::queue<std::size_t> q;
        dist[src] = 0;
        q.push(src);
        while (!q.empty()) {
            const std::size_t v = q.front();
            q.pop();
            for (std::size_t u : adj[v])
                if (dist[u] < 0) {
                    dist[u] = dist[v] + 1;
                    q.push(u);
                }
        }
        for (std::size_t j = 0; j < n; ++j) t.at(src, j) = dist[j];
    }
    return t;
}

/// Maximum number of edges from the root to any word.
inline int tree_depth(const DepSentence& s) {
    int best = 0;
    for (const auto& w : s.words) {
        int d = 0;
        for (int v = w.index; s.word(v).head != 0; v = s.word(v).head) ++d;
        best = std::max(best, d);
    }
    return best;
}

/// Sorted label inventory over the non-root edges of all sentences.
inline std::vector<std::string> label_inventory(const std::vector<DepSentence>& sentences) {
    std::set<std::string> labels;
    for (const auto& s : sentences)
        for (const auto& w : s.words)
            if (w.head != 0) labels.insert(w.deprel);
    return {labels.begin(), labels.end()};
}

struct Splits {
    std::vector<DepSentence> train;
    std::vector<DepSentence> validation;
    std::vector<DepSentence> test;
};

struct SplitCount {
    std::string split;
    std::size_t parsed = 0;
    std::size_t kept = 0;
    std::size_t words = 0;
};

/// CSV inventory: one row per split with parsed/kept sentence counts.
inline void write_inventory_csv(std::ostream& out, const std::vector<SplitCount>& rows) {
    out << "split,sentences_parsed,sentences_kept,sentences_filtered,words_kept\n";
    for (const auto& r : rows)
        out << r.split << ',' << r.parsed << ',' << r.kept << ',' << (r.parsed - r.kept) << ','
            << r.words << '\n';
}

}  // namespace polar
