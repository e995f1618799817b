#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "jtcn/core.hpp"

namespace jtcn {

inline const std::unordered_set<std::string>& stopwords() {
    static const std::unordered_set<std::string> words = {
        "about", "above", "after", "again", "against", "all", "also", "am", "an", "and",
        "any", "are", "as", "at", "be", "because", "been", "before", "being", "below",
        "between", "both", "but", "by", "can", "cannot", "could", "did", "do", "does",
        "doing", "down", "during", "each", "else", "few", "for", "from", "further", "had",
        "has", "have", "having", "he", "her", "here", "hers", "herself", "him", "himself",
        "his", "how", "if", "in", "into", "is", "it", "its", "itself", "just", "me",
        "more", "most", "my", "myself", "no", "nor", "not", "now", "of", "off", "on",
        "once", "only", "or", "other", "our", "ours", "ourselves", "out", "over", "own",
        "same", "she", "should", "so", "some", "such", "than", "that", "the", "their",
        "theirs", "them", "themselves", "then", "there", "these", "they", "this", "those",
        "through", "to", "too", "under", "until", "up", "upon", "very", "was", "we",
        "were", "what", "when", "where", "which", "while", "who", "whom", "why", "will",
        "with", "would", "you", "your", "yours", "yourself", "yourselves",
    };
    return words;
}

// Lowercase, split on non-alphanumerics, drop tokens shorter than 2
// characters and stopwords.
inline std::vector<std::string> tokenize(std::string_view text) {
    std::vector<std::string> tokens;
    std::string cur;
    auto flush = [&] {
        if (cur.size() >= 2 && !stopwords().count(cur)) tokens.push_back(cur);
        cur.clear();
    };
    for (unsigned char c : text) {
        if (c >= 'A' && c <= 'Z')
            cur.push_back(static_cast<char>(c - 'A' + 'a'));
        else if ((c >= 'a' && c <= 'z') || (c >= '0' && c <= '9'))
            cur.push_back(static_cast<char>(c));
        else
            flush();
    }
    flush();
    return tokens;
}

struct Vocabulary {
    std::vector<std::string> terms;  // rank order: tf-idf mass desc, term asc
    std::vector<double> idf;
    std::unordered_map<std::string, std::uint32_t> index;

    std::size_t size() const { return terms.size(); }

    void rebuild_index() {
        index.clear();
        for (std::uint32_t i = 0; i < terms.size(); ++i) index.emplace(terms[i], i);
    }
};

// Sparse tf-idf row, L2-normalized; term indices strictly increasing.
struct SparseRow {
    std::vector<std::pair<std::uint32_t, double>> entries;

    bool empty() const { return entries.empty(); }
};

struct DocMatrix {
    std::vector<SparseRow> rows;  // one per anchor id
};

// Terms ranked by corpus tf-idf mass sum_docs tf(t,d) * idf(t) with
// idf(t) = ln((1+N)/(1+df(t))) + 1; ties broken lexicographically.
inline Vocabulary build_vocab(const std::vector<std::vector<std::string>>& docs,
                              std::size_t top_n) {
    if (top_n < 1) throw ContractViolation("build_vocab: top_n must be >= 1");
    std::unordered_map<std::string, std::uint64_t> total_tf;
    std::unordered_map<std::string, std::uint64_t> df;
    for (const auto& doc : docs) {
        std::unordered_set<std::string> seen;
        for (const auto& tok : doc) {
            ++total_tf[tok];
            if (seen.insert(tok).second) ++df[tok];
        }
    }
    double n_docs = static_cast<double>(docs.size());
    struct Scored {
        std::string term;
        double mass;
        double idf;
    };
    std::vector<Scored> scored;
    scored.reserve(total_tf.size());
    for (const auto& [term, tf] : total_tf) {
        double idf = std::log((1.0 + n_docs) / (1.0 + static_cast<double>(df[term]))) + 1.0;
        scored.push_back({term, static_cast<double>(tf) * idf, idf});
    }
    std::sort(scored.begin(), scored.end(), [](const Scored& a, const Scored& b) {
        if (a.mass != b.mass) return a.mass > b.mass;
        return a.term < b.term;
    });
    if (scored.size() < top_n) {
        warn("build_vocab: only " + std::to_string(scored.size()) + " distinct terms for top_n=" +
             std::to_string(top_n) + "; keeping all");
    } else {
        scored.resize(top_n);
    }
    Vocabulary vocab;
    vocab.terms.reserve(scored.size());
    vocab.idf.reserve(scored.size());
    for (const auto& s : scored) {
        vocab.terms.push_back(s.term);
        vocab.idf.push_back(s.idf);
    }
    vocab.rebuild_index();
    return vocab;
}

// weight(t) = tf(t, doc) * idf(t) over in-vocabulary terms, L2-normalized.
inline SparseRow vectorize(const std::vector<std::string>& tokens, const Vocabulary& vocab) {
    std::map<std::uint32_t, double> counts;  // ordered -> strictly increasing indices
    for (const auto& tok : tokens) {
        auto it = vocab.index.find(tok);
        if (it != vocab.index.end()) counts[it->second] += 1.0;
    }
    SparseRow row;
    row.entries.reserve(counts.size());
    double sq = 0.0;
    for (const auto& [idx, tf] : counts) {
        double w = tf * vocab.idf[idx];
        row.entries.emplace_back(idx, w);
        sq += w * w;
    }
    if (sq > 0.0) {
        double inv = 1.0 / std::sqrt(sq);
        for (auto& [idx, w] : row.entries) w *= inv;
    }
    return row;
}

inline double sparse_dot(const SparseRow& a, const SparseRow& b) {
    double s = 0.0;
    std::size_t i = 0, j = 0;
    while (i < a.entries.size() && j < b.entries.size()) {
        if (a.entries[i].first < b.entries[j].first)
            ++i;
        else if (a.entries[i].first > b.entries[j].first)
            ++j;
        else
            s += a.entries[i++].second * b.entries[j++].second;
    }
    return s;
}

// --------------------------------------------------------------------------
// Persistence: vocab.tsv (term \t idf) and docs.bin (binary sparse rows)
// --------------------------------------------------------------------------

inline std::string format_double(double x) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", x);
    return buf;
}

inline void save_vocab(const Vocabulary& vocab, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("save_vocab: cannot open " + path);
    for (std::size_t i = 0; i < vocab.terms.size(); ++i)
        out << vocab.terms[i] << '\t' << format_double(vocab.idf[i]) << '\n';
    if (!out) throw DataError("save_vocab: write failed for " + path);
}

inline Vocabulary load_vocab(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("load_vocab: cannot open " + path);
    Vocabulary vocab;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        auto tab = line.find('\t');
        if (tab == std::string::npos)
            throw DataError("load_vocab: malformed line " + std::to_string(lineno) + " in " + path);
        vocab.terms.push_back(line.substr(0, tab));
        vocab.idf.push_back(std::strtod(line.c_str() + tab + 1, nullptr));
    }
    vocab.rebuild_index();
    return vocab;
}

namespace detail {

inline void write_u32(std::ostream& out, std::uint32_t x) {
    unsigned char b[4] = {static_cast<unsigned char>(x), static_cast<unsigned char>(x >> 8),
                          static_cast<unsigned char>(x >> 16), static_cast<unsigned char>(x >> 24)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t read_u32(std::istream& in, const std::string& ctx) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4)) throw DataError(ctx + ": truncated file");
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline void write_f64(std::ostream& out, double x) {
    std::uint64_t bits;
    static_assert(sizeof(bits) == sizeof(x));
    std::memcpy(&bits, &x, 8);
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(bits >> (8 * i));
    out.write(reinterpret_cast<const char*>(b), 8);
}

inline double read_f64(std::istream& in, const std::string& ctx) {
    unsigned char b[8];
    if (!in.read(reinterpret_cast<char*>(b), 8)) throw DataError(ctx + ": truncated file");
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    double x;
    std::memcpy(&x, &bits, 8);
    return x;
}

}  // namespace detail

inline void save_docs(const DocMatrix& docs, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("save_docs: cannot open " + path);
    out.write("JTCD", 4);
    detail::write_u32(out, 1);  // format version
    detail::write_u32(out, static_cast<std::uint32_t>(docs.rows.size()));
    for (const auto& row : docs.rows) {
        detail::write_u32(out, static_cast<std::uint32_t>(row.entries.size()));
        for (const auto& [idx, w] : row.entries) {
            detail::write_u32(out, idx);
            detail::write_f64(out, w);
        }
    }
    if (!out) throw DataError("save_docs: write failed for " + path);
}

inline DocMatrix load_docs(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("load_docs: cannot open " + path);
    char magic[4];
    if (!in.read(magic, 4) || std::string_view(magic, 4) != "JTCD")
        throw DataError("load_docs: bad magic in " + path);
    std::uint32_t version = detail::read_u32(in, "load_docs");
    if (version != 1)
        throw DataError("load_docs: unsupported format version " + std::to_string(version));
    std::uint32_t n = detail::read_u32(in, "load_docs");
    DocMatrix docs;
    docs.rows.resize(n);
    for (std::uint32_t r = 0; r < n; ++r) {
        std::uint32_t nnz = detail::read_u32(in, "load_docs");
        docs.rows[r].entries.resize(nnz);
        for (std::uint32_t i = 0; i < nnz; ++i) {
            std::uint32_t idx = detail::read_u32(in, "load_docs");
            double w = detail::read_f64(in, "load_docs");
            docs.rows[r].entries[i] = {idx, w};
        }
    }
    return docs;
}

}  // namespace jtcn
