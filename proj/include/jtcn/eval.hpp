#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <map>
#include <string>
#include <thread>
#include <vector>

#include "jtcn/core.hpp"
#include "jtcn/data.hpp"
#include "jtcn/model.hpp"
#include "jtcn/text.hpp"

namespace jtcn {

// --------------------------------------------------------------------------
// Cold-start inference: towers only, no history
// --------------------------------------------------------------------------
struct ColdEmbed {
    std::vector<double> u;
    bool empty_doc = false;
};

inline ColdEmbed cold_embed(const ModelParams& p, const SparseRow& doc) {
    ColdEmbed ce;
    TowerTrace content = tower_forward(doc, p.value("fc.W1"), p.value("fc.b1"), p.value("fc.W2"),
                                       p.value("fc.b2"));
    TowerTrace pref = tower_forward(doc, p.value("fp.W1"), p.value("fp.b1"), p.value("fp.W2"),
                                    p.value("fp.b2"));
    FuseTrace fused = fuse(content.out, pref.out, p.value("W_u"), p.value("b_u"));
    ce.u = std::move(fused.fused);
    ce.empty_doc = doc.empty();
    return ce;
}

// --------------------------------------------------------------------------
// Scoring and ranking
// --------------------------------------------------------------------------
inline std::vector<double> score_all(std::span<const double> u, const Tensor2& emb) {
    if (u.size() != emb.cols)
        throw ContractViolation("score_all: dimension mismatch u[" + std::to_string(u.size()) +
                                "] vs embeddings " + shape_str(emb.rows, emb.cols));
    if (!all_finite(u) || !all_finite(emb.v))
        throw NumericError("score_all: non-finite inputs");
    std::vector<double> scores(emb.rows);
    for (std::size_t i = 0; i < emb.rows; ++i) scores[i] = dot(u, {emb.row(i), emb.cols});
    return scores;
}

// Descending score, ties broken by ascending id.
inline std::vector<Id> rank_order(const std::vector<double>& scores) {
    std::vector<Id> order(scores.size());
    for (std::size_t i = 0; i < scores.size(); ++i) order[i] = static_cast<Id>(i);
    std::sort(order.begin(), order.end(), [&](Id a, Id b) {
        double sa = scores[static_cast<std::size_t>(a)], sb = scores[static_cast<std::size_t>(b)];
        if (sa != sb) return sa > sb;
        return a < b;
    });
    return order;
}

// --------------------------------------------------------------------------
// Ranking metrics (binary relevance)
// --------------------------------------------------------------------------
inline double recall_at_k(const std::vector<Id>& ranked, const std::vector<Id>& relevant,
                          std::size_t k) {
    if (relevant.empty()) throw ContractViolation("recall_at_k: empty relevant set");
    std::size_t lim = std::min(k, ranked.size());
    std::size_t hits = 0;
    for (std::size_t i = 0; i < lim; ++i)
        if (std::binary_search(relevant.begin(), relevant.end(), ranked[i])) ++hits;
    return static_cast<double>(hits) / static_cast<double>(relevant.size());
}

inline double ndcg_at_k(const std::vector<Id>& ranked, const std::vector<Id>& relevant,
                        std::size_t k) {
    if (relevant.empty()) throw ContractViolation("ndcg_at_k: empty relevant set");
    std::size_t lim = std::min(k, ranked.size());
    double dcg = 0.0;
    for (std::size_t i = 0; i < lim; ++i)
        if (std::binary_search(relevant.begin(), relevant.end(), ranked[i]))
            dcg += 1.0 / std::log2(static_cast<double>(i) + 2.0);
    double idcg = 0.0;
    std::size_t ideal = std::min(k, relevant.size());
    for (std::size_t i = 0; i < ideal; ++i) idcg += 1.0 / std::log2(static_cast<double>(i) + 2.0);
    return dcg / idcg;
}

// --------------------------------------------------------------------------
// Content-KNN baseline: cosine similarity over tf-idf rows
// --------------------------------------------------------------------------

// Scores every partner by similarity-weighted interaction counts among the
// k nearest warm anchors. Zero similarity everywhere yields all-zero scores.
inline std::vector<double> knn_scores(const SparseRow& cold_doc, const DocMatrix& docs,
                                      const std::vector<Id>& warm_anchors,
                                      const std::vector<std::vector<Id>>& adj,
                                      std::size_t k_neighbors, std::size_t n_partners) {
    std::vector<std::pair<double, Id>> sims;
    sims.reserve(warm_anchors.size());
    for (Id w : warm_anchors) {
        double s = sparse_dot(cold_doc, docs.rows[static_cast<std::size_t>(w)]);
        if (s > 0.0) sims.emplace_back(s, w);
    }
    std::size_t take = std::min(k_neighbors, sims.size());
    std::partial_sort(sims.begin(), sims.begin() + static_cast<std::ptrdiff_t>(take), sims.end(),
                      [](const auto& a, const auto& b) {
                          if (a.first != b.first) return a.first > b.first;
                          return a.second < b.second;
                      });
    std::vector<double> scores(n_partners, 0.0);
    for (std::size_t i = 0; i < take; ++i)
        for (Id p : adj[static_cast<std::size_t>(sims[i].second)])
            scores[static_cast<std::size_t>(p)] += sims[i].first;
    return scores;
}

// --------------------------------------------------------------------------
// Deterministic parallel map over an index range: slot i of the output is
// always produced by fn(i), so thread count never changes results.
// --------------------------------------------------------------------------
template <typename Fn>
void parallel_for(std::size_t n, std::size_t threads, Fn&& fn) {
    if (threads <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::size_t nt = std::min(threads, n);
    std::vector<std::thread> pool;
    pool.reserve(nt);
    for (std::size_t t = 0; t < nt; ++t) {
        pool.emplace_back([t, nt, n, &fn] {
            for (std::size_t i = t; i < n; i += nt) fn(i);
        });
    }
    for (auto& th : pool) th.join();
}

inline std::size_t default_eval_threads() {
    unsigned hc = std::thread::hardware_concurrency();
    return hc == 0 ? 1 : static_cast<std::size_t>(hc);
}

// --------------------------------------------------------------------------
// Full cold-start evaluation
// --------------------------------------------------------------------------
struct MetricRow {
    std::string metric;
    std::size_t k = 0;
    double value = 0.0;
    std::size_t anchor_count = 0;
};

struct AnchorRanking {
    Id anchor = -1;
    std::vector<Id> top;
    std::vector<double> scores;
    bool empty_doc = false;
};

struct RankingResult {
    std::vector<MetricRow> rows;
    std::vector<AnchorRanking> rankings;
    std::size_t anchor_count = 0;
};

struct EvalConfig {
    std::vector<std::size_t> ks = {100};
    bool with_knn = false;
    std::size_t knn_neighbors = 50;
    std::size_t threads = 1;
};

// Cold anchors' interactions are consulted only as ground-truth labels.
inline RankingResult evaluate(const ModelParams& p, const DocMatrix& docs,
                              const InteractionSet& inter, const ColdSplit& split,
                              const EvalConfig& cfg) {
    if (p.dims.n_partners != static_cast<std::size_t>(inter.n_partners))
        throw DataError("evaluate: checkpoint/split id maps disagree (partners " +
                        std::to_string(p.dims.n_partners) + " vs " +
                        std::to_string(inter.n_partners) + ")");
    if (docs.rows.size() != static_cast<std::size_t>(inter.n_anchors))
        throw DataError("evaluate: document matrix covers " + std::to_string(docs.rows.size()) +
                        " anchors, interactions cover " + std::to_string(inter.n_anchors));
    if (cfg.ks.empty()) throw ContractViolation("evaluate: K list must be nonempty");

    std::size_t n_partners = static_cast<std::size_t>(inter.n_partners);
    std::vector<std::size_t> ks = cfg.ks;
    for (std::size_t& k : ks) {
        if (k > n_partners) {
            warn("evaluate: K=" + std::to_string(k) + " clamped to partner count " +
                 std::to_string(n_partners));
            k = n_partners;
        }
        if (k == 0) throw ContractViolation("evaluate: K must be positive");
    }
    std::size_t max_k = *std::max_element(ks.begin(), ks.end());

    std::vector<Id> anchors;
    for (Id a : split.cold_anchors) {
        if (inter.adj[static_cast<std::size_t>(a)].empty()) {
            warn("evaluate: cold anchor " + std::to_string(a) +
                 " has no interactions; excluded from aggregate");
            continue;
        }
        anchors.push_back(a);
    }

    RankingResult res;
    res.anchor_count = anchors.size();
    if (anchors.empty()) throw DataError("evaluate: no cold anchors with ground-truth labels");

    const Tensor2& emb = p.value("partner_emb");
    std::size_t nk = ks.size();
    std::vector<double> jr(anchors.size() * nk), jn(anchors.size() * nk);
    std::vector<double> kr, kn;
    if (cfg.with_knn) {
        kr.resize(anchors.size() * nk);
        kn.resize(anchors.size() * nk);
    }
    res.rankings.resize(anchors.size());

    parallel_for(anchors.size(), cfg.threads, [&](std::size_t i) {
        Id a = anchors[i];
        const std::vector<Id>& relevant = inter.adj[static_cast<std::size_t>(a)];
        ColdEmbed ce = cold_embed(p, docs.rows[static_cast<std::size_t>(a)]);
        std::vector<double> scores = score_all(ce.u, emb);
        std::vector<Id> order = rank_order(scores);
        for (std::size_t j = 0; j < nk; ++j) {
            jr[i * nk + j] = recall_at_k(order, relevant, ks[j]);
            jn[i * nk + j] = ndcg_at_k(order, relevant, ks[j]);
        }
        AnchorRanking& ar = res.rankings[i];
        ar.anchor = a;
        ar.empty_doc = ce.empty_doc;
        ar.top.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(max_k));
        ar.scores.resize(max_k);
        for (std::size_t r = 0; r < max_k; ++r)
            ar.scores[r] = scores[static_cast<std::size_t>(order[r])];
        if (cfg.with_knn) {
            std::vector<double> ks2 = knn_scores(docs.rows[static_cast<std::size_t>(a)], docs,
                                                 split.warm_anchors, inter.adj,
                                                 cfg.knn_neighbors, n_partners);
            std::vector<Id> korder = rank_order(ks2);
            for (std::size_t j = 0; j < nk; ++j) {
                kr[i * nk + j] = recall_at_k(korder, relevant, ks[j]);
                kn[i * nk + j] = ndcg_at_k(korder, relevant, ks[j]);
            }
        }
    });

    auto mean_col = [&](const std::vector<double>& m, std::size_t j) {
        double s = 0.0;
        for (std::size_t i = 0; i < anchors.size(); ++i) s += m[i * nk + j];
        return s / static_cast<double>(anchors.size());
    };
    for (std::size_t j = 0; j < nk; ++j) {
        res.rows.push_back({"jtcn.recall", ks[j], mean_col(jr, j), anchors.size()});
        res.rows.push_back({"jtcn.ndcg", ks[j], mean_col(jn, j), anchors.size()});
    }
    if (cfg.with_knn) {
        for (std::size_t j = 0; j < nk; ++j) {
            res.rows.push_back({"knn.recall", ks[j], mean_col(kr, j), anchors.size()});
            res.rows.push_back({"knn.ndcg", ks[j], mean_col(kn, j), anchors.size()});
        }
    }
    return res;
}

// --------------------------------------------------------------------------
// Report writers
// --------------------------------------------------------------------------
inline void write_metrics(const std::string& path, const std::vector<MetricRow>& rows) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path);
    out << "metric\tK\tvalue\tanchor_count\n";
    for (const MetricRow& r : rows)
        out << r.metric << '\t' << r.k << '\t' << format_double(r.value) << '\t' << r.anchor_count
            << '\n';
    if (!out) throw DataError("write failed for " + path);
}

inline void write_rankings(const std::string& path, const RankingResult& res, const IdMaps& ids) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path);
    out << "anchor\trank\tpartner\tscore\n";
    for (const AnchorRanking& ar : res.rankings) {
        const std::string& aname = ids.anchor_names[static_cast<std::size_t>(ar.anchor)];
        for (std::size_t r = 0; r < ar.top.size(); ++r)
            out << aname << '\t' << (r + 1) << '\t'
                << ids.partner_names[static_cast<std::size_t>(ar.top[r])] << '\t'
                << format_double(ar.scores[r]) << '\n';
    }
    if (!out) throw DataError("write failed for " + path);
}

}  // namespace jtcn
