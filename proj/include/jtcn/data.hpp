#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "jtcn/core.hpp"
#include "jtcn/text.hpp"

namespace jtcn {

using Id = std::int32_t;

// Raw ids from the input files are interned to dense integers in first-seen
// order; the mapping is persisted as id_map.tsv.
struct IdMaps {
    std::vector<std::string> anchor_names;
    std::vector<std::string> partner_names;
    std::map<std::string, Id> anchor_index;
    std::map<std::string, Id> partner_index;

    Id intern_anchor(const std::string& raw) {
        auto it = anchor_index.find(raw);
        if (it != anchor_index.end()) return it->second;
        Id id = static_cast<Id>(anchor_names.size());
        anchor_names.push_back(raw);
        anchor_index.emplace(raw, id);
        return id;
    }
    Id intern_partner(const std::string& raw) {
        auto it = partner_index.find(raw);
        if (it != partner_index.end()) return it->second;
        Id id = static_cast<Id>(partner_names.size());
        partner_names.push_back(raw);
        partner_index.emplace(raw, id);
        return id;
    }

    std::optional<Id> find_anchor(const std::string& raw) const {
        auto it = anchor_index.find(raw);
        if (it == anchor_index.end()) return std::nullopt;
        return it->second;
    }

    void rebuild_index() {
        anchor_index.clear();
        partner_index.clear();
        for (std::size_t i = 0; i < anchor_names.size(); ++i)
            anchor_index.emplace(anchor_names[i], static_cast<Id>(i));
        for (std::size_t i = 0; i < partner_names.size(); ++i)
            partner_index.emplace(partner_names[i], static_cast<Id>(i));
    }

    bool operator==(const IdMaps& o) const {
        return anchor_names == o.anchor_names && partner_names == o.partner_names;
    }
};

// Sparse implicit-feedback pair set with per-anchor adjacency lists
// (sorted, duplicate-free).
struct InteractionSet {
    Id n_anchors = 0;
    Id n_partners = 0;
    std::size_t pair_count = 0;
    std::vector<std::vector<Id>> adj;  // anchor id -> sorted partner ids

    const std::vector<Id>& partners_of(Id anchor) const { return adj[static_cast<std::size_t>(anchor)]; }

    bool has_pair(Id anchor, Id partner) const {
        const auto& ps = adj[static_cast<std::size_t>(anchor)];
        return std::binary_search(ps.begin(), ps.end(), partner);
    }
};

// One "a<TAB>b" pair per line. With swap_columns the second column is the
// anchor (item-cold orientation on a user<TAB>item file).
inline InteractionSet load_interactions(const std::string& path, IdMaps& ids,
                                        bool swap_columns = false) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("load_interactions: cannot open " + path);
    std::vector<std::pair<Id, Id>> pairs;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        auto tab = line.find('\t');
        if (tab == std::string::npos || tab == 0 || tab + 1 == line.size())
            throw DataError("load_interactions: malformed line " + std::to_string(lineno) +
                            " in " + path);
        std::string a = line.substr(0, tab);
        std::string b = line.substr(tab + 1);
        if (b.find('\t') != std::string::npos)
            throw DataError("load_interactions: malformed line " + std::to_string(lineno) +
                            " in " + path);
        if (swap_columns) std::swap(a, b);
        pairs.emplace_back(ids.intern_anchor(a), ids.intern_partner(b));
    }
    if (pairs.empty()) throw DataError("load_interactions: no pairs in " + path);

    InteractionSet set;
    set.n_anchors = static_cast<Id>(ids.anchor_names.size());
    set.n_partners = static_cast<Id>(ids.partner_names.size());
    set.adj.resize(static_cast<std::size_t>(set.n_anchors));
    for (auto [a, p] : pairs) set.adj[static_cast<std::size_t>(a)].push_back(p);
    for (auto& ps : set.adj) {
        std::sort(ps.begin(), ps.end());
        ps.erase(std::unique(ps.begin(), ps.end()), ps.end());
        set.pair_count += ps.size();
    }
    return set;
}

inline void save_id_maps(const IdMaps& ids, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("save_id_maps: cannot open " + path);
    for (std::size_t i = 0; i < ids.anchor_names.size(); ++i)
        out << "anchor\t" << ids.anchor_names[i] << '\t' << i << '\n';
    for (std::size_t i = 0; i < ids.partner_names.size(); ++i)
        out << "partner\t" << ids.partner_names[i] << '\t' << i << '\n';
    if (!out) throw DataError("save_id_maps: write failed for " + path);
}

inline IdMaps load_id_maps(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("load_id_maps: cannot open " + path);
    IdMaps ids;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        auto t1 = line.find('\t');
        auto t2 = line.rfind('\t');
        if (t1 == std::string::npos || t2 == t1)
            throw DataError("load_id_maps: malformed line " + std::to_string(lineno) + " in " + path);
        std::string side = line.substr(0, t1);
        std::string raw = line.substr(t1 + 1, t2 - t1 - 1);
        if (side == "anchor")
            ids.intern_anchor(raw);
        else if (side == "partner")
            ids.intern_partner(raw);
        else
            throw DataError("load_id_maps: unknown side '" + side + "' at line " +
                            std::to_string(lineno));
    }
    return ids;
}

// Per-anchor documents keyed by raw anchor id; anchors without a line keep
// an empty row. Unknown anchors are counted and reported by the caller.
inline std::size_t load_documents(const std::string& path, const IdMaps& ids,
                                  std::vector<std::string>& raw_texts) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("load_documents: cannot open " + path);
    raw_texts.assign(ids.anchor_names.size(), std::string());
    std::string line;
    std::size_t lineno = 0, unknown = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        auto tab = line.find('\t');
        if (tab == std::string::npos)
            throw DataError("load_documents: malformed line " + std::to_string(lineno) + " in " +
                            path);
        auto id = ids.find_anchor(line.substr(0, tab));
        if (!id) {
            ++unknown;
            continue;
        }
        std::string& slot = raw_texts[static_cast<std::size_t>(*id)];
        if (!slot.empty()) slot.push_back(' ');  // multiple lines concatenate
        slot.append(line, tab + 1, std::string::npos);
    }
    return unknown;
}

// ---------------------------------------------------------------------------
// Cold split
// ---------------------------------------------------------------------------
struct ColdSplit {
    std::vector<Id> warm_anchors;  // sorted
    std::vector<Id> cold_anchors;  // sorted
    std::uint64_t seed = 0;
    double ratio = 0.0;

    bool is_cold(Id a) const {
        return std::binary_search(cold_anchors.begin(), cold_anchors.end(), a);
    }
};

// Deterministic partition of the anchors that have at least one interaction
// and a nonempty document. Cold anchors are dropped from training entirely;
// their interactions are the evaluation ground truth.
inline ColdSplit cold_split(const InteractionSet& inter, const DocMatrix& docs, double ratio,
                            std::uint64_t seed) {
    if (!(ratio > 0.0 && ratio < 1.0))
        throw ContractViolation("cold_split: ratio must be in (0, 1)");
    std::vector<Id> eligible;
    std::size_t skipped_empty_doc = 0;
    for (Id a = 0; a < inter.n_anchors; ++a) {
        if (inter.adj[static_cast<std::size_t>(a)].empty()) continue;
        if (static_cast<std::size_t>(a) >= docs.rows.size() ||
            docs.rows[static_cast<std::size_t>(a)].empty()) {
            ++skipped_empty_doc;
            continue;
        }
        eligible.push_back(a);
    }
    if (skipped_empty_doc > 0)
        warn("cold_split: " + std::to_string(skipped_empty_doc) +
             " anchor(s) with empty documents excluded from the split");
    if (eligible.empty()) throw DataError("cold_split: no eligible anchors");

    RngStream rng(seed);
    rng.shuffle(eligible);
    std::size_t n_cold = static_cast<std::size_t>(
        std::llround(ratio * static_cast<double>(eligible.size())));
    n_cold = std::min(n_cold, eligible.size() - 1);  // keep at least one warm anchor

    ColdSplit split;
    split.seed = seed;
    split.ratio = ratio;
    split.cold_anchors.assign(eligible.begin(), eligible.begin() + static_cast<long>(n_cold));
    split.warm_anchors.assign(eligible.begin() + static_cast<long>(n_cold), eligible.end());
    std::sort(split.cold_anchors.begin(), split.cold_anchors.end());
    std::sort(split.warm_anchors.begin(), split.warm_anchors.end());
    return split;
}

inline void save_split(const ColdSplit& split, const IdMaps& ids, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("save_split: cannot open " + path);
    out << "# cold_split seed=" << split.seed << " ratio=" << format_double(split.ratio) << '\n';
    // one pass in anchor-id order keeps the file stable
    std::size_t wi = 0, ci = 0;
    while (wi < split.warm_anchors.size() || ci < split.cold_anchors.size()) {
        bool take_warm = ci >= split.cold_anchors.size() ||
                         (wi < split.warm_anchors.size() &&
                          split.warm_anchors[wi] < split.cold_anchors[ci]);
        if (take_warm) {
            out << ids.anchor_names[static_cast<std::size_t>(split.warm_anchors[wi])] << "\twarm\n";
            ++wi;
        } else {
            out << ids.anchor_names[static_cast<std::size_t>(split.cold_anchors[ci])] << "\tcold\n";
            ++ci;
        }
    }
    if (!out) throw DataError("save_split: write failed for " + path);
}

inline ColdSplit load_split(const IdMaps& ids, const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("load_split: cannot open " + path);
    ColdSplit split;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        if (line[0] == '#') {
            auto spos = line.find("seed=");
            auto rpos = line.find("ratio=");
            if (spos != std::string::npos) split.seed = std::strtoull(line.c_str() + spos + 5, nullptr, 10);
            if (rpos != std::string::npos) split.ratio = std::strtod(line.c_str() + rpos + 6, nullptr);
            continue;
        }
        auto tab = line.find('\t');
        if (tab == std::string::npos)
            throw DataError("load_split: malformed line " + std::to_string(lineno) + " in " + path);
        std::string raw = line.substr(0, tab);
        std::string tag = line.substr(tab + 1);
        auto id = ids.find_anchor(raw);
        if (!id) throw DataError("load_split: unknown anchor '" + raw + "' at line " +
                                 std::to_string(lineno));
        if (tag == "warm")
            split.warm_anchors.push_back(*id);
        else if (tag == "cold")
            split.cold_anchors.push_back(*id);
        else
            throw DataError("load_split: unknown tag '" + tag + "' at line " + std::to_string(lineno));
    }
    std::sort(split.warm_anchors.begin(), split.warm_anchors.end());
    std::sort(split.cold_anchors.begin(), split.cold_anchors.end());
    return split;
}

// ---------------------------------------------------------------------------
// Training batches
// ---------------------------------------------------------------------------

// Padded leave-one-out batch: for each training pair (anchor, target) the
// history row holds the anchor's remaining partners, -1 padded.
struct Batch {
    std::size_t size = 0;
    std::size_t width = 0;  // padded history width
    std::vector<Id> anchors;
    std::vector<Id> targets;
    std::vector<Id> history;           // size * width, -1 where invalid
    std::vector<std::uint8_t> valid;   // size * width

    const Id* history_row(std::size_t r) const { return history.data() + r * width; }
    const std::uint8_t* valid_row(std::size_t r) const { return valid.data() + r * width; }
};

// Lazily yields one epoch of shuffled batches over the training adjacency.
// Anchors with a single interaction are skipped (leave-one-out needs a
// nonempty history); histories longer than h_max are a seeded subsample.
class BatchStream {
public:
    BatchStream(const std::vector<std::vector<Id>>& train_adj, std::size_t batch_size,
                std::size_t h_max, std::uint64_t seed, bool warn_skips = true)
        : adj_(train_adj), batch_size_(batch_size), h_max_(h_max), rng_(seed) {
        if (batch_size_ < 1) throw ContractViolation("BatchStream: batch_size must be >= 1");
        if (h_max_ < 1) throw ContractViolation("BatchStream: h_max must be >= 1");
        std::size_t skipped = 0;
        for (Id a = 0; a < static_cast<Id>(adj_.size()); ++a) {
            const auto& ps = adj_[static_cast<std::size_t>(a)];
            if (ps.size() == 1) {
                ++skipped;
                continue;
            }
            for (Id p : ps) pairs_.emplace_back(a, p);
        }
        if (skipped > 0 && warn_skips)
            warn("make_batches: skipped " + std::to_string(skipped) +
                 " anchor(s) with a single interaction");
        rng_.shuffle(pairs_);
    }

    std::size_t pair_count() const { return pairs_.size(); }

    std::optional<Batch> next() {
        if (cursor_ >= pairs_.size()) return std::nullopt;
        std::size_t n = std::min(batch_size_, pairs_.size() - cursor_);
        Batch b;
        b.size = n;
        b.anchors.resize(n);
        b.targets.resize(n);
        std::vector<std::vector<Id>> rows(n);
        std::size_t width = 0;
        for (std::size_t r = 0; r < n; ++r) {
            auto [a, target] = pairs_[cursor_ + r];
            b.anchors[r] = a;
            b.targets[r] = target;
            std::vector<Id>& hist = rows[r];
            for (Id p : adj_[static_cast<std::size_t>(a)])
                if (p != target) hist.push_back(p);
            if (hist.size() > h_max_) {
                rng_.shuffle(hist);
                hist.resize(h_max_);
                std::sort(hist.begin(), hist.end());
            }
            width = std::max(width, hist.size());
        }
        b.width = width;
        b.history.assign(n * width, -1);
        b.valid.assign(n * width, 0);
        for (std::size_t r = 0; r < n; ++r) {
            for (std::size_t j = 0; j < rows[r].size(); ++j) {
                b.history[r * width + j] = rows[r][j];
                b.valid[r * width + j] = 1;
            }
        }
        cursor_ += n;
        return b;
    }

private:
    const std::vector<std::vector<Id>>& adj_;
    std::size_t batch_size_;
    std::size_t h_max_;
    RngStream rng_;
    std::vector<std::pair<Id, Id>> pairs_;
    std::size_t cursor_ = 0;
};

inline BatchStream make_batches(const std::vector<std::vector<Id>>& train_adj,
                                std::size_t batch_size, std::size_t h_max, std::uint64_t seed,
                                bool warn_skips = true) {
    return BatchStream(train_adj, batch_size, h_max, seed, warn_skips);
}

}  // namespace jtcn
